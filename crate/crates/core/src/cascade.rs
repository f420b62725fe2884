//! Classical position → velocity → attitude → rate → mixer cascade, used for
//! takeoff, landing and as the fallback when the neural controller faults.
//!
//! Motor commands are normalized rotor speeds in `[0, 1]`, the same unit the
//! policy emits. `hover_throttle` is therefore `ω_hover / ω_max`, and the
//! collective thrust command scales with the square root of the requested
//! specific force.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vehicle::{RigidBodyState, VehicleParams, MOTOR_COUNT, MOTOR_LAYOUT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeGains {
    /// 1/s
    pub pos_p: [f64; 3],
    /// m/s² per m/s
    pub vel_p: [f64; 3],
    pub vel_i: [f64; 3],
    pub vel_d: [f64; 3],
    /// 1/s
    pub att_p: [f64; 3],
    pub rate_p: [f64; 3],
    pub rate_i: [f64; 3],
    pub rate_d: [f64; 3],
    /// rad
    pub max_tilt: f64,
    /// m/s
    pub max_vel: f64,
    /// Normalized rotor-speed command at hover. Derived from the vehicle when absent.
    pub hover_throttle: Option<f64>,
    /// Bound on each integrator's contribution, normalized.
    pub integrator_limit: f64,
}

impl Default for CascadeGains {
    fn default() -> Self {
        Self {
            pos_p: [1.2; 3],
            vel_p: [2.5; 3],
            vel_i: [0.4; 3],
            vel_d: [0.05; 3],
            att_p: [6.0; 3],
            rate_p: [0.15; 3],
            rate_i: [0.05; 3],
            rate_d: [0.003; 3],
            max_tilt: 0.6,
            max_vel: 3.0,
            hover_throttle: None,
            integrator_limit: 0.3,
        }
    }
}

impl CascadeGains {
    pub fn validate(&self) -> Result<()> {
        let gains = [
            self.pos_p, self.vel_p, self.vel_i, self.vel_d, self.att_p, self.rate_p, self.rate_i, self.rate_d,
        ];
        if gains.iter().flatten().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Parameter("cascade gains must be finite and ≥ 0".into()));
        }
        if !(self.max_tilt > 0.0 && self.max_tilt < std::f64::consts::FRAC_PI_2) {
            return Err(Error::Parameter("max_tilt must lie in (0, π/2)".into()));
        }
        if self.max_vel <= 0.0 || self.integrator_limit < 0.0 {
            return Err(Error::Parameter("max_vel must be > 0, integrator_limit ≥ 0".into()));
        }
        if let Some(h) = self.hover_throttle {
            if !(h > 0.0 && h < 1.0) {
                return Err(Error::Parameter("hover_throttle must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Proportional position loop, norm-clamped to `max_vel`.
pub fn position_loop(state: &RigidBodyState, setpoint: &Vector3<f64>, gains: &CascadeGains) -> Vector3<f64> {
    let v = Vector3::from(gains.pos_p).component_mul(&(setpoint - state.position));
    let n = v.norm();
    if n > gains.max_vel {
        v * (gains.max_vel / n)
    } else {
        v
    }
}

/// Body-rate setpoint from the shortest-rotation quaternion error.
pub fn attitude_loop(
    state: &RigidBodyState,
    attitude_setpoint: &UnitQuaternion<f64>,
    gains: &CascadeGains,
) -> Vector3<f64> {
    let mut err = (state.attitude.inverse() * attitude_setpoint).into_inner();
    if err.w < 0.0 {
        err = -err;
    }
    2.0 * Vector3::from(gains.att_p).component_mul(&err.imag())
}

/// Allocation matrix rows `[roll, pitch, yaw]` per motor, unit magnitude.
pub const MIX_MATRIX: [[f64; 3]; MOTOR_COUNT] = {
    let mut m = [[0.0; 3]; MOTOR_COUNT];
    let mut i = 0;
    while i < MOTOR_COUNT {
        let [sx, sy, spin] = MOTOR_LAYOUT[i];
        m[i] = [-sy, sx, spin];
        i += 1;
    }
    m
};

/// Collective thrust plus normalized body torques to per-motor commands.
pub fn mix(thrust: f64, torque: &Vector3<f64>) -> [f64; MOTOR_COUNT] {
    MIX_MATRIX.map(|row| (thrust + row[0] * torque.x + row[1] * torque.y + row[2] * torque.z).clamp(0.0, 1.0))
}

/// Yaw of an attitude, rad.
pub fn yaw_of(q: &UnitQuaternion<f64>) -> f64 {
    q.euler_angles().2
}

/// Attitude whose thrust axis (body −z) points along `thrust_dir` with the
/// given heading.
pub fn attitude_from_thrust(thrust_dir: &Vector3<f64>, yaw: f64) -> UnitQuaternion<f64> {
    let b3 = -thrust_dir.normalize();
    let heading = Vector3::new(yaw.cos(), yaw.sin(), 0.0);
    let b2 = b3.cross(&heading).normalize();
    let b1 = b2.cross(&b3);
    UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[b1, b2, b3])))
}

/// Stateful cascade: owns the velocity and rate integrators and the yaw hold.
#[derive(Debug, Clone)]
pub struct Cascade {
    pub gains: CascadeGains,
    hover_throttle: f64,
    gravity: f64,
    vel_integral: Vector3<f64>,
    rate_integral: Vector3<f64>,
    prev_velocity: Option<Vector3<f64>>,
    prev_rates: Option<Vector3<f64>>,
    yaw_hold: f64,
}

impl Cascade {
    pub fn new(gains: CascadeGains, params: &VehicleParams) -> Result<Self> {
        gains.validate()?;
        let hover_throttle = gains.hover_throttle.unwrap_or_else(|| params.hover_command());
        Ok(Self {
            gains,
            hover_throttle,
            gravity: params.gravity,
            vel_integral: Vector3::zeros(),
            rate_integral: Vector3::zeros(),
            prev_velocity: None,
            prev_rates: None,
            yaw_hold: 0.0,
        })
    }

    pub fn hover_throttle(&self) -> f64 {
        self.hover_throttle
    }

    pub fn yaw_hold(&self) -> f64 {
        self.yaw_hold
    }

    /// Clears integrators and derivative memory and latches the current yaw.
    pub fn reset(&mut self, state: &RigidBodyState) {
        self.vel_integral = Vector3::zeros();
        self.rate_integral = Vector3::zeros();
        self.prev_velocity = None;
        self.prev_rates = None;
        self.yaw_hold = yaw_of(&state.attitude);
    }

    pub fn integrators(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.vel_integral, self.rate_integral)
    }

    /// PID on velocity error (derivative on measurement) giving a desired
    /// specific force with hover feed-forward. Returns the normalized
    /// collective command and the attitude setpoint.
    pub fn velocity_loop(
        &mut self,
        state: &RigidBodyState,
        velocity_setpoint: &Vector3<f64>,
        dt: f64,
    ) -> (f64, UnitQuaternion<f64>) {
        let g = &self.gains;
        let err = velocity_setpoint - state.velocity;
        let limit = g.integrator_limit * self.gravity;
        for i in 0..3 {
            if g.vel_i[i] > 0.0 {
                let bound = limit / g.vel_i[i];
                self.vel_integral[i] = (self.vel_integral[i] + err[i] * dt).clamp(-bound, bound);
            }
        }
        let accel_rate = match self.prev_velocity {
            Some(prev) => (state.velocity - prev) / dt,
            None => Vector3::zeros(),
        };
        self.prev_velocity = Some(state.velocity);
        let accel = Vector3::from(g.vel_p).component_mul(&err)
            + Vector3::from(g.vel_i).component_mul(&self.vel_integral)
            - Vector3::from(g.vel_d).component_mul(&accel_rate);

        let mut force = accel - Vector3::new(0.0, 0.0, self.gravity);
        // keep some upward thrust and bound the tilt
        force.z = force.z.min(-0.1 * self.gravity);
        let horizontal = force.xy().norm();
        let max_horizontal = -force.z * g.max_tilt.tan();
        if horizontal > max_horizontal {
            let s = max_horizontal / horizontal;
            force.x *= s;
            force.y *= s;
        }
        let thrust = (self.hover_throttle * (force.norm() / self.gravity).sqrt()).clamp(0.0, 1.0);
        (thrust, attitude_from_thrust(&force, self.yaw_hold))
    }

    /// PID on body-rate error (derivative on measurement), clamped to `[-1, 1]`.
    pub fn rate_loop(&mut self, state: &RigidBodyState, rate_setpoint: &Vector3<f64>, dt: f64) -> Vector3<f64> {
        let g = &self.gains;
        let err = rate_setpoint - state.angular_velocity;
        for i in 0..3 {
            if g.rate_i[i] > 0.0 {
                let bound = g.integrator_limit / g.rate_i[i];
                self.rate_integral[i] = (self.rate_integral[i] + err[i] * dt).clamp(-bound, bound);
            }
        }
        let rate_accel = match self.prev_rates {
            Some(prev) => (state.angular_velocity - prev) / dt,
            None => Vector3::zeros(),
        };
        self.prev_rates = Some(state.angular_velocity);
        let out = Vector3::from(g.rate_p).component_mul(&err)
            + Vector3::from(g.rate_i).component_mul(&self.rate_integral)
            - Vector3::from(g.rate_d).component_mul(&rate_accel);
        out.map(|v| v.clamp(-1.0, 1.0))
    }

    /// Full chain from a position setpoint to motor commands.
    pub fn update(&mut self, state: &RigidBodyState, setpoint: &Vector3<f64>, dt: f64) -> [f64; MOTOR_COUNT] {
        let v_sp = position_loop(state, setpoint, &self.gains);
        let (thrust, q_sp) = self.velocity_loop(state, &v_sp, dt);
        let rates = attitude_loop(state, &q_sp, &self.gains);
        let torque = self.rate_loop(state, &rates, dt);
        mix(thrust, &torque)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::{integrate, wrench_from_motors};

    fn level_at(p: Vector3<f64>) -> RigidBodyState {
        RigidBodyState::hovering(p, &VehicleParams::default())
    }

    #[test]
    fn position_loop_cases() {
        let g = CascadeGains {
            pos_p: [1.0; 3],
            max_vel: 5.0,
            ..CascadeGains::default()
        };
        let s = level_at(Vector3::zeros());
        assert_eq!(position_loop(&s, &Vector3::zeros(), &g), Vector3::zeros());
        assert_eq!(position_loop(&s, &Vector3::new(1.0, 0.0, 0.0), &g), Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(position_loop(&s, &Vector3::new(10.0, 0.0, 0.0), &g), Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn velocity_loop_hover_equilibrium() {
        let p = VehicleParams::default();
        let mut c = Cascade::new(CascadeGains::default(), &p).unwrap();
        let mut s = level_at(Vector3::new(0.0, 0.0, -1.5));
        s.attitude = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.7);
        c.reset(&s);
        let (thrust, q) = c.velocity_loop(&s, &Vector3::zeros(), 0.01);
        assert!((thrust - p.hover_command()).abs() < 1e-12);
        let expected = UnitQuaternion::from_euler_angles(0.0, 0.0, 0.7);
        assert!(q.angle_to(&expected) < 1e-9);
    }

    #[test]
    fn forward_velocity_command_pitches_nose_down() {
        let p = VehicleParams::default();
        let mut c = Cascade::new(CascadeGains::default(), &p).unwrap();
        let s = level_at(Vector3::zeros());
        c.reset(&s);
        let (_, q) = c.velocity_loop(&s, &Vector3::new(1.0, 0.0, 0.0), 0.01);
        let (roll, pitch, _) = q.euler_angles();
        assert!(pitch < 0.0, "pitch {pitch}");
        assert!(roll.abs() < 1e-12);
        // body x axis dips toward +z (down in NED)
        assert!((q * Vector3::x()).z > 0.0);
    }

    #[test]
    fn velocity_loop_without_integrator_is_memoryless() {
        let p = VehicleParams::default();
        let gains = CascadeGains {
            vel_i: [0.0; 3],
            vel_d: [0.0; 3],
            ..CascadeGains::default()
        };
        let mut c = Cascade::new(gains, &p).unwrap();
        let s = level_at(Vector3::zeros());
        let sp = Vector3::new(0.4, -0.2, 0.3);
        let a = c.velocity_loop(&s, &sp, 0.01);
        let b = c.velocity_loop(&s, &sp, 0.01);
        assert_eq!(a, b);
    }

    #[test]
    fn tilt_is_clamped() {
        let p = VehicleParams::default();
        let mut c = Cascade::new(CascadeGains::default(), &p).unwrap();
        let s = level_at(Vector3::zeros());
        let (_, q) = c.velocity_loop(&s, &Vector3::new(30.0, 0.0, 0.0), 0.01);
        let up = (q * Vector3::z()).z;
        assert!(up.acos() <= 0.6 + 1e-9);
    }

    #[test]
    fn attitude_loop_cases() {
        let g = CascadeGains {
            att_p: [2.0; 3],
            ..CascadeGains::default()
        };
        let s = level_at(Vector3::zeros());
        assert_eq!(attitude_loop(&s, &UnitQuaternion::identity(), &g), Vector3::zeros());
        let sp = UnitQuaternion::from_euler_angles(0.0, 0.0, std::f64::consts::FRAC_PI_2);
        let r = attitude_loop(&s, &sp, &g);
        assert!((r - Vector3::new(0.0, 0.0, 2.0 * 2.0 * 0.5f64.sqrt())).norm() < 1e-12);
        assert!((r.z - 2.828).abs() < 1e-3);
        let flipped = UnitQuaternion::new_unchecked(-sp.into_inner());
        assert!((attitude_loop(&s, &flipped, &g) - r).norm() < 1e-12);
        let mut s2 = s.clone();
        s2.attitude = UnitQuaternion::new_unchecked(-s2.attitude.into_inner());
        assert!((attitude_loop(&s2, &sp, &g) - r).norm() < 1e-12);
    }

    #[test]
    fn rate_loop_cases() {
        let p = VehicleParams::default();
        let gains = CascadeGains {
            rate_i: [0.0; 3],
            rate_d: [0.0; 3],
            ..CascadeGains::default()
        };
        let mut c = Cascade::new(gains.clone(), &p).unwrap();
        let s = level_at(Vector3::zeros());
        assert_eq!(c.rate_loop(&s, &Vector3::zeros(), 0.01), Vector3::zeros());
        let err = Vector3::new(1.0, -2.0, 0.5);
        let out = c.rate_loop(&s, &err, 0.01);
        assert!((out - Vector3::from(gains.rate_p).component_mul(&err)).norm() < 1e-15);
    }

    #[test]
    fn rate_integrator_grows_then_saturates() {
        let p = VehicleParams::default();
        let gains = CascadeGains {
            rate_p: [0.0; 3],
            rate_d: [0.0; 3],
            ..CascadeGains::default()
        };
        let mut c = Cascade::new(gains, &p).unwrap();
        let s = level_at(Vector3::zeros());
        let mut last = 0.0;
        let dt = 0.01;
        for k in 1..=1000 {
            let out = c.rate_loop(&s, &Vector3::new(1.0, 0.0, 0.0), dt);
            // closed form before the clamp: rate_i · k·dt
            let expected = (0.05 * k as f64 * dt).min(0.3);
            assert!((out.x - expected).abs() < 1e-12, "step {k}");
            assert!(out.x >= last);
            last = out.x;
        }
        assert!((last - 0.3).abs() < 1e-12);
    }

    #[test]
    fn mix_cases() {
        assert_eq!(mix(0.5, &Vector3::zeros()), [0.5; 4]);
        let m = mix(0.5, &Vector3::new(0.0, 0.0, 0.1));
        assert!(m[0] > 0.5 && m[1] > 0.5 && m[2] < 0.5 && m[3] < 0.5);
        assert!(((m[0] - 0.5) - (0.5 - m[2])).abs() < 1e-15);
        assert!(mix(1.0, &Vector3::new(1.0, 1.0, 1.0)).iter().all(|u| (0.0..=1.0).contains(u)));
        let avg: f64 = mix(0.5, &Vector3::zeros()).iter().sum::<f64>() / 4.0;
        assert_eq!(avg, 0.5);
    }

    #[test]
    fn mix_is_affine_before_clamping() {
        let t1 = Vector3::new(0.05, -0.02, 0.01);
        let t2 = Vector3::new(-0.03, 0.04, -0.02);
        let a = mix(0.5, &t1);
        let b = mix(0.3, &t2);
        let c = mix(0.4, &((t1 + t2) * 0.5));
        for i in 0..4 {
            assert!((c[i] - 0.5 * (a[i] + b[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn mixed_torque_has_commanded_sign_in_dynamics() {
        let p = VehicleParams::default();
        let hover = p.hover_command();
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut t = Vector3::zeros();
                t[axis] = 0.05 * sign;
                let speeds = mix(hover, &t).map(|u| u * p.omega_max);
                let w = wrench_from_motors(&speeds, &p);
                assert_eq!(w.torque[axis].signum(), sign, "axis {axis}");
            }
        }
    }

    #[test]
    fn closed_loop_step_response() {
        let p = VehicleParams::default();
        let mut c = Cascade::new(CascadeGains::default(), &p).unwrap();
        let dt = 1.0 / 650.0;
        for target in [
            Vector3::new(1.0, 0.0, -1.5),
            Vector3::new(0.0, -1.0, -1.5),
            Vector3::new(0.0, 0.0, -2.5),
            Vector3::new(0.0, 0.0, -0.5),
        ] {
            let mut s = level_at(Vector3::new(0.0, 0.0, -1.5));
            c.reset(&s);
            let mut reached = None;
            for k in 0..(6.0 / dt) as usize {
                let u = c.update(&s, &target, dt);
                s = integrate(&s, &u.map(|u| u * p.omega_max), dt, &p).unwrap();
                let tilt = s.up_alignment().clamp(-1.0, 1.0).acos();
                assert!(tilt <= 0.6, "tilt {tilt}");
                if reached.is_none() && (s.position - target).norm() <= 0.2 {
                    reached = Some(k as f64 * dt);
                }
            }
            let t = reached.expect("never reached the setpoint");
            assert!(t <= 4.0, "reached after {t} s");
            assert!((s.position - target).norm() < 0.05);
        }
    }
}
