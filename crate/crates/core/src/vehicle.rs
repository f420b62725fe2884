//! Quad-X rigid-body simulation with first-order motor lag.
//!
//! Frames follow the autopilot convention: world NED, body FRD, thrust along
//! body −z. Attitude quaternions rotate body vectors into the world frame.
//!
//! Motor layout (positions at `arm_length/√2` on both body axes):
//!
//! | motor | position    | spin | yaw torque sign |
//! |-------|-------------|------|-----------------|
//! | 1     | front-right | CCW  | +               |
//! | 2     | back-left   | CCW  | +               |
//! | 3     | front-left  | CW   | −               |
//! | 4     | back-right  | CW   | −               |

use nalgebra::{Matrix3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MOTOR_COUNT: usize = 4;

/// Per-motor `(x sign, y sign, yaw sign)` in the body frame.
pub const MOTOR_LAYOUT: [[f64; 3]; MOTOR_COUNT] = [
    [1.0, 1.0, 1.0],
    [-1.0, -1.0, 1.0],
    [1.0, -1.0, -1.0],
    [-1.0, 1.0, -1.0],
];

pub const MAX_STEP: f64 = 0.05;

/// Identified physical model of the vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    /// kg
    pub mass: f64,
    /// kg·m², body axes
    pub inertia_diag: [f64; 3],
    /// Hub-to-motor distance, m.
    pub arm_length: f64,
    /// Thrust per squared rotor speed, N·s²/rad².
    pub k_thrust: f64,
    /// Yaw reaction torque per newton of thrust, m.
    pub thrust_to_torque: f64,
    /// Motor time constant, s. Shared by spin-up and spin-down.
    pub motor_tau: f64,
    /// rad/s
    pub omega_max: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        let mass = 1.2;
        let gravity = 9.81;
        Self {
            mass,
            inertia_diag: [0.0117, 0.0117, 0.0222],
            arm_length: 0.21,
            k_thrust: mass * gravity / (4.0 * 1000.0 * 1000.0),
            thrust_to_torque: 0.016,
            motor_tau: 0.05,
            omega_max: 1256.0,
            gravity,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("mass", self.mass),
            ("inertia_diag[0]", self.inertia_diag[0]),
            ("inertia_diag[1]", self.inertia_diag[1]),
            ("inertia_diag[2]", self.inertia_diag[2]),
            ("arm_length", self.arm_length),
            ("k_thrust", self.k_thrust),
            ("thrust_to_torque", self.thrust_to_torque),
            ("motor_tau", self.motor_tau),
            ("omega_max", self.omega_max),
            ("gravity", self.gravity),
        ];
        for (name, value) in named {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!("{name} must be > 0, got {value}")));
            }
        }
        if self.hover_speed() >= self.omega_max {
            return Err(Error::Parameter(format!(
                "hover speed {:.1} rad/s is not below omega_max {:.1} rad/s",
                self.hover_speed(),
                self.omega_max
            )));
        }
        Ok(())
    }

    /// Rotor speed at which four motors exactly carry the weight.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.k_thrust)).sqrt()
    }

    /// Normalized rotor-speed command that holds hover.
    pub fn hover_command(&self) -> f64 {
        self.hover_speed() / self.omega_max
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::from(self.inertia_diag))
    }

    /// Offset of each motor from the hub along both body axes.
    pub fn arm_offset(&self) -> f64 {
        self.arm_length / std::f64::consts::SQRT_2
    }
}

/// Thrust coefficient from a hover measurement: four motors at
/// `hover_speed` balance the weight.
pub fn compute_thrust_coefficient(mass: f64, hover_speed: f64, gravity: f64) -> Result<f64> {
    for (name, value) in [("mass", mass), ("hover_speed", hover_speed), ("gravity", gravity)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Parameter(format!("{name} must be > 0, got {value}")));
        }
    }
    Ok(mass * gravity / (4.0 * hover_speed * hover_speed))
}

/// Simulated state. Position and velocity in world NED, angular velocity
/// in body FRD.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidBodyState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: UnitQuaternion<f64>,
    pub angular_velocity: Vector3<f64>,
    pub motor_speed: [f64; MOTOR_COUNT],
}

impl Default for RigidBodyState {
    fn default() -> Self {
        Self {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
            attitude: UnitQuaternion::identity(),
            angular_velocity: Vector3::zeros(),
            motor_speed: [0.0; MOTOR_COUNT],
        }
    }
}

impl RigidBodyState {
    /// Level hover at `position` with all motors at hover speed.
    pub fn hovering(position: Vector3<f64>, params: &VehicleParams) -> Self {
        Self {
            position,
            motor_speed: [params.hover_speed(); MOTOR_COUNT],
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.attitude.coords.iter().all(|v| v.is_finite())
            && self.angular_velocity.iter().all(|v| v.is_finite())
            && self.motor_speed.iter().all(|v| v.is_finite())
    }

    /// World-frame up component of the thrust axis (element `[2][2]` of the
    /// body→world rotation). 1 when level, negative when inverted.
    pub fn up_alignment(&self) -> f64 {
        self.attitude.to_rotation_matrix()[(2, 2)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyWrench {
    pub force: Vector3<f64>,
    pub torque: Vector3<f64>,
}

/// First-order lag of a rotor toward its command.
#[inline]
pub fn motor_step(current: f64, commanded: f64, dt: f64, tau: f64) -> f64 {
    current + (commanded - current) * (-(-dt / tau).exp_m1())
}

pub fn wrench_from_motors(motor_speed: &[f64; MOTOR_COUNT], params: &VehicleParams) -> BodyWrench {
    let offset = params.arm_offset();
    let mut force = Vector3::zeros();
    let mut torque = Vector3::zeros();
    for (speed, [sx, sy, spin]) in motor_speed.iter().zip(MOTOR_LAYOUT) {
        let thrust = params.k_thrust * speed * speed;
        // r × (0, 0, −f) = (−r_y·f, r_x·f, 0)
        torque.x -= sy * offset * thrust;
        torque.y += sx * offset * thrust;
        torque.z += spin * params.thrust_to_torque * thrust;
        force.z -= thrust;
    }
    BodyWrench { force, torque }
}

/// Advances the vehicle by one fixed step.
///
/// Motors lag toward the (clamped) commands first; the wrench comes from the
/// new motor speeds. Velocity is updated semi-implicitly and position with the
/// mean of old and new velocity, which is exact under constant acceleration.
pub fn integrate(
    state: &RigidBodyState,
    commanded_speeds: &[f64; MOTOR_COUNT],
    dt: f64,
    params: &VehicleParams,
) -> Result<RigidBodyState> {
    if !(dt > 0.0 && dt <= MAX_STEP) {
        return Err(Error::Parameter(format!("dt must lie in (0, {MAX_STEP}], got {dt}")));
    }
    let mut motor_speed = [0.0; MOTOR_COUNT];
    for ((out, &current), &cmd) in motor_speed
        .iter_mut()
        .zip(&state.motor_speed)
        .zip(commanded_speeds)
    {
        let cmd = if cmd.is_nan() { 0.0 } else { cmd.clamp(0.0, params.omega_max) };
        *out = motor_step(current, cmd, dt, params.motor_tau).clamp(0.0, params.omega_max);
    }
    let wrench = wrench_from_motors(&motor_speed, params);

    let gravity = Vector3::new(0.0, 0.0, params.gravity);
    let accel = state.attitude * wrench.force / params.mass + gravity;
    let velocity = state.velocity + accel * dt;
    let position = state.position + (state.velocity + velocity) * (0.5 * dt);

    let inertia = Vector3::from(params.inertia_diag);
    let w = state.angular_velocity;
    let gyro = w.cross(&inertia.component_mul(&w));
    let angular_accel = (wrench.torque - gyro).component_div(&inertia);
    let angular_velocity = w + angular_accel * dt;
    let rotated = state.attitude * UnitQuaternion::from_scaled_axis(angular_velocity * dt);
    let attitude = UnitQuaternion::new_normalize(rotated.into_inner());

    let next = RigidBodyState {
        position,
        velocity,
        attitude,
        angular_velocity,
        motor_speed,
    };
    if !next.is_finite() {
        return Err(Error::Diverged(format!(
            "non-finite state after step (position {:?})",
            next.position.as_slice()
        )));
    }
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn thrust_coefficient_for_measured_hover() {
        let k = compute_thrust_coefficient(1.2, 1000.0, 9.81).unwrap();
        assert!((k - 2.943e-6).abs() < 1e-15);
        assert_eq!(4.0 * k * 1000.0 * 1000.0, 1.2 * 9.81);
        let k2 = compute_thrust_coefficient(2.4, 1000.0, 9.81).unwrap();
        assert!((k2 - 2.0 * k).abs() < 1e-18);
    }

    #[test]
    fn thrust_coefficient_rejects_non_positive() {
        assert!(compute_thrust_coefficient(0.0, 1000.0, 9.81).is_err());
        assert!(compute_thrust_coefficient(1.2, -1.0, 9.81).is_err());
        assert!(compute_thrust_coefficient(1.2, 1000.0, 0.0).is_err());
    }

    #[test]
    fn default_params_balance_at_hover() {
        let p = VehicleParams::default();
        p.validate().unwrap();
        assert!((p.hover_speed() - 1000.0).abs() < 1e-9);
        let hover = p.hover_speed();
        let total = 4.0 * p.k_thrust * hover * hover;
        assert!((total - p.mass * p.gravity).abs() < 1e-12);
    }

    #[test]
    fn motor_step_fixed_point_and_lag() {
        assert_eq!(motor_step(500.0, 500.0, 0.01, 0.05), 500.0);
        let one_tau = motor_step(0.0, 100.0, 0.05, 0.05);
        let oracle = 100.0 * (1.0 - (-1.0f64).exp());
        assert!((one_tau - oracle).abs() < 1e-12);
        assert!((one_tau - 63.212).abs() < 1e-3);
        assert!((motor_step(0.0, 100.0, 5.0, 0.05) - 100.0).abs() < 1e-10);
        // spin-down uses the same constant
        let down = motor_step(100.0, 0.0, 0.05, 0.05);
        assert!((100.0 - down - one_tau).abs() < 1e-12);
    }

    #[test]
    fn zero_motors_zero_wrench() {
        let w = wrench_from_motors(&[0.0; 4], &VehicleParams::default());
        assert_eq!(w.force, Vector3::zeros());
        assert_eq!(w.torque, Vector3::zeros());
    }

    #[test]
    fn hover_speeds_cancel_weight() {
        let p = VehicleParams::default();
        let w = wrench_from_motors(&[p.hover_speed(); 4], &p);
        assert!((w.force.z + p.mass * p.gravity).abs() < 1e-12);
        assert_eq!(w.force.x, 0.0);
        assert!(w.torque.norm() < 1e-15);
    }

    #[test]
    fn single_motor_torque_signs_match_cross_product() {
        let p = VehicleParams::default();
        let a = p.arm_offset();
        // Independent sign table: explicit motor positions, r × F.
        let positions = [
            Vector3::new(a, a, 0.0),   // front-right
            Vector3::new(-a, -a, 0.0), // back-left
            Vector3::new(a, -a, 0.0),  // front-left
            Vector3::new(-a, a, 0.0),  // back-right
        ];
        let yaw_sign = [1.0, 1.0, -1.0, -1.0];
        for motor in 0..4 {
            let mut speeds = [0.0; 4];
            speeds[motor] = 800.0;
            let w = wrench_from_motors(&speeds, &p);
            let f = p.k_thrust * 800.0 * 800.0;
            let expected = positions[motor].cross(&Vector3::new(0.0, 0.0, -f));
            assert!((w.torque.x - expected.x).abs() < 1e-12);
            assert!((w.torque.y - expected.y).abs() < 1e-12);
            assert_eq!(w.torque.z.signum(), yaw_sign[motor]);
        }
        // motor 1 (front-right) alone: roll left, nose up, yaw +z
        let w = wrench_from_motors(&[800.0, 0.0, 0.0, 0.0], &p);
        assert!(w.torque.x < 0.0 && w.torque.y > 0.0 && w.torque.z > 0.0);
    }

    #[test]
    fn swapping_same_direction_pair_negates_roll_and_pitch() {
        let p = VehicleParams::default();
        let base = wrench_from_motors(&[900.0, 700.0, 800.0, 800.0], &p);
        let swapped = wrench_from_motors(&[700.0, 900.0, 800.0, 800.0], &p);
        assert!((base.force - swapped.force).norm() < 1e-12);
        assert!((base.torque.x + swapped.torque.x).abs() < 1e-12);
        assert!((base.torque.y + swapped.torque.y).abs() < 1e-12);
        assert!((base.torque.z - swapped.torque.z).abs() < 1e-15);
    }

    #[test]
    fn free_fall_first_step() {
        let p = VehicleParams::default();
        let s = integrate(&RigidBodyState::default(), &[0.0; 4], 0.01, &p).unwrap();
        assert!((s.velocity - Vector3::new(0.0, 0.0, p.gravity * 0.01)).norm() < 1e-15);
    }

    #[test]
    fn hover_is_stationary() {
        let p = VehicleParams::default();
        let start = RigidBodyState::hovering(Vector3::new(0.3, -0.2, -1.5), &p);
        let mut s = start.clone();
        for _ in 0..1000 {
            let next = integrate(&s, &[p.hover_speed(); 4], 0.01, &p).unwrap();
            assert!((next.position - s.position).norm() < 1e-12);
            s = next;
        }
    }

    #[test]
    fn integrate_rejects_bad_dt() {
        let p = VehicleParams::default();
        assert!(integrate(&RigidBodyState::default(), &[0.0; 4], 0.0, &p).is_err());
        assert!(integrate(&RigidBodyState::default(), &[0.0; 4], 0.06, &p).is_err());
    }

    #[test]
    fn nan_state_reports_divergence() {
        let p = VehicleParams::default();
        let mut s = RigidBodyState::default();
        s.velocity.x = f64::NAN;
        assert!(matches!(integrate(&s, &[0.0; 4], 0.01, &p), Err(Error::Diverged(_))));
    }

    #[test]
    fn torque_free_symmetric_body_keeps_spin_rate() {
        let p = VehicleParams {
            inertia_diag: [0.02; 3],
            ..VehicleParams::default()
        };
        let mut s = RigidBodyState {
            angular_velocity: Vector3::new(1.3, -0.7, 2.1),
            ..RigidBodyState::default()
        };
        let initial = s.angular_velocity.norm();
        for _ in 0..10_000 {
            s = integrate(&s, &[0.0; 4], 1e-3, &p).unwrap();
        }
        assert!((s.angular_velocity.norm() - initial).abs() < 1e-9);
    }

    #[test]
    fn motor_speeds_stay_in_range() {
        let p = VehicleParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = RigidBodyState::default();
        for _ in 0..2000 {
            let cmd: [f64; 4] = std::array::from_fn(|_| rng.gen_range(-500.0..2000.0));
            s = integrate(&s, &cmd, 0.002, &p).unwrap();
            assert!(s.motor_speed.iter().all(|&w| (0.0..=p.omega_max).contains(&w)));
        }
    }

    proptest::proptest! {
        #[test]
        fn motor_step_is_strictly_between(current in 0.0f64..1256.0, commanded in 0.0f64..1256.0,
                                          dt in 1e-4f64..0.05, tau in 0.01f64..0.2) {
            proptest::prop_assume!((commanded - current).abs() > 1e-6);
            let next = motor_step(current, commanded, dt, tau);
            let (lo, hi) = if current < commanded { (current, commanded) } else { (commanded, current) };
            proptest::prop_assert!(next > lo && next < hi);
        }
    }
}
