//! The 15-value policy input, shared by training and the flight runtime.
//!
//! Layout: position error (setpoint − position, world NED, clamped to ±5 m
//! per component), the first two columns of the body→world rotation matrix,
//! world velocity, body angular velocity.

use nalgebra::Vector3;

use crate::vehicle::RigidBodyState;

pub const OBS_DIM: usize = 15;
pub const ACT_DIM: usize = 4;
pub const POS_ERROR_CLAMP: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation(pub [f32; OBS_DIM]);

impl Observation {
    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn pos_error(&self) -> [f32; 3] {
        [self.0[0], self.0[1], self.0[2]]
    }

    pub fn velocity(&self) -> [f32; 3] {
        [self.0[9], self.0[10], self.0[11]]
    }
}

/// Policy output, each component in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionVec(pub [f32; ACT_DIM]);

impl ActionVec {
    pub fn clamped(values: [f32; ACT_DIM]) -> Self {
        Self(values.map(|v| v.clamp(-1.0, 1.0)))
    }
}

/// Raised when state inputs are not finite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NonFiniteInput;

/// Builds the observation from raw state components. `attitude` is a unit
/// quaternion, scalar first.
pub fn observation_from_parts(
    position: &[f64; 3],
    velocity: &[f64; 3],
    attitude: &[f64; 4],
    angular_velocity: &[f64; 3],
    setpoint: &[f64; 3],
) -> Result<Observation, NonFiniteInput> {
    let finite = position
        .iter()
        .chain(velocity)
        .chain(attitude)
        .chain(angular_velocity)
        .chain(setpoint)
        .all(|v| v.is_finite());
    if !finite {
        return Err(NonFiniteInput);
    }
    let [w, x, y, z] = *attitude;
    // first two columns of R(q)
    let c0 = [
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y + w * z),
        2.0 * (x * z - w * y),
    ];
    let c1 = [
        2.0 * (x * y - w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z + w * x),
    ];
    let mut obs = [0.0f32; OBS_DIM];
    for i in 0..3 {
        obs[i] = (setpoint[i] - position[i]).clamp(-POS_ERROR_CLAMP, POS_ERROR_CLAMP) as f32;
        obs[3 + i] = c0[i] as f32;
        obs[6 + i] = c1[i] as f32;
        obs[9 + i] = velocity[i] as f32;
        obs[12 + i] = angular_velocity[i] as f32;
    }
    Ok(Observation(obs))
}

/// Observation of a simulated state. Non-finite states yield a non-finite
/// observation rather than an error; training terminates such episodes.
pub fn build_observation(state: &RigidBodyState, setpoint: &Vector3<f64>) -> Observation {
    let q = state.attitude.quaternion();
    observation_from_parts(
        &state.position.into(),
        &state.velocity.into(),
        &[q.w, q.i, q.j, q.k],
        &state.angular_velocity.into(),
        &(*setpoint).into(),
    )
    .unwrap_or(Observation([f32::NAN; OBS_DIM]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, UnitQuaternion};
    use proptest::prelude::*;

    #[test]
    fn at_setpoint_level_at_rest() {
        let state = RigidBodyState {
            position: Vector3::new(1.0, 2.0, -1.5),
            ..RigidBodyState::default()
        };
        let obs = build_observation(&state, &Vector3::new(1.0, 2.0, -1.5));
        assert_eq!(
            obs.0,
            [0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 0., 0., 0., 0.]
        );
    }

    #[test]
    fn below_setpoint_gives_negative_z_error() {
        let state = RigidBodyState {
            position: Vector3::new(0.0, 0.0, -0.5),
            ..RigidBodyState::default()
        };
        let obs = build_observation(&state, &Vector3::new(0.0, 0.0, -1.5));
        assert_eq!(obs.pos_error(), [0.0, 0.0, -1.0]);
    }

    #[test]
    fn yaw_ninety_degrees_columns() {
        let state = RigidBodyState {
            attitude: UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2),
            ..RigidBodyState::default()
        };
        let obs = build_observation(&state, &Vector3::zeros());
        let expected = [0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in obs.0[3..9].iter().zip(expected) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn position_error_is_clamped() {
        let obs = observation_from_parts(
            &[0.0; 3],
            &[0.0; 3],
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0; 3],
            &[100.0, -100.0, 3.0],
        )
        .unwrap();
        assert_eq!(obs.pos_error(), [5.0, -5.0, 3.0]);
    }

    #[test]
    fn nan_input_is_rejected() {
        let r = observation_from_parts(
            &[f64::NAN, 0.0, 0.0],
            &[0.0; 3],
            &[1.0, 0.0, 0.0, 0.0],
            &[0.0; 3],
            &[0.0; 3],
        );
        assert_eq!(r, Err(NonFiniteInput));
    }

    proptest! {
        #[test]
        fn rotation_columns_are_unit_and_match_matrix(roll in -3.0f64..3.0, pitch in -1.5f64..1.5, yaw in -3.0f64..3.0) {
            let q = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
            let state = RigidBodyState { attitude: q, ..RigidBodyState::default() };
            let obs = build_observation(&state, &Vector3::zeros());
            let r = q.to_rotation_matrix();
            for i in 0..3 {
                prop_assert!((obs.0[3 + i] as f64 - r[(i, 0)]).abs() < 1e-6);
                prop_assert!((obs.0[6 + i] as f64 - r[(i, 1)]).abs() < 1e-6);
            }
            let n0: f64 = obs.0[3..6].iter().map(|&v| (v as f64).powi(2)).sum();
            let n1: f64 = obs.0[6..9].iter().map(|&v| (v as f64).powi(2)).sum();
            prop_assert!((n0.sqrt() - 1.0).abs() < 1e-6);
            prop_assert!((n1.sqrt() - 1.0).abs() < 1e-6);
        }

        #[test]
        fn world_yaw_rotation_preserves_magnitudes(
            phi in -3.1f64..3.1,
            px in -3.0f64..3.0, py in -3.0f64..3.0, pz in -3.0f64..0.0,
            vx in -2.0f64..2.0, vy in -2.0f64..2.0, vz in -2.0f64..2.0,
            wx in -1.0f64..1.0, wy in -1.0f64..1.0, wz in -1.0f64..1.0,
            yaw in -3.0f64..3.0,
        ) {
            let state = RigidBodyState {
                position: Vector3::new(px, py, pz),
                velocity: Vector3::new(vx, vy, vz),
                attitude: UnitQuaternion::from_euler_angles(0.1, -0.2, yaw),
                angular_velocity: Vector3::new(wx, wy, wz),
                motor_speed: [0.0; 4],
            };
            let setpoint = Vector3::new(0.5, -0.5, -1.5);
            let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), phi);
            let rotated = RigidBodyState {
                position: rot * state.position,
                velocity: rot * state.velocity,
                attitude: UnitQuaternion::from_rotation_matrix(&rot) * state.attitude,
                ..state.clone()
            };
            let a = build_observation(&state, &setpoint);
            let b = build_observation(&rotated, &(rot * setpoint));
            let norm = |v: [f32; 3]| v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            prop_assert!((norm(a.pos_error()) - norm(b.pos_error())).abs() < 1e-5);
            prop_assert!((norm(a.velocity()) - norm(b.velocity())).abs() < 1e-5);
            for i in 12..15 {
                prop_assert!((a.0[i] - b.0[i]).abs() < 1e-6);
            }
        }
    }
}
