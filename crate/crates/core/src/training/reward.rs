use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::observation::ACT_DIM;
use crate::vehicle::RigidBodyState;

/// Beyond this distance from the setpoint an episode terminates.
pub const MAX_POSITION_ERROR: f64 = 8.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub w_pos: f64,
    /// m²
    pub sigma_pos: f64,
    pub w_up: f64,
    pub k_up: f64,
    pub w_vel: f64,
    pub w_angvel: f64,
    pub w_act: f64,
    pub w_act_diff: f64,
    /// Penalty on heading away from world north, `w_heading·(1 − R₀₀)`.
    pub w_heading: f64,
    pub crash_penalty: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_pos: 1.0,
            sigma_pos: 0.8,
            w_up: 0.2,
            k_up: 10.0,
            w_vel: 0.05,
            w_angvel: 0.01,
            w_act: 0.02,
            w_act_diff: 0.05,
            w_heading: 0.1,
            crash_penalty: 10.0,
        }
    }
}

/// Episode ends when far from the setpoint, inverted, or non-finite.
pub fn terminated(state: &RigidBodyState, setpoint: &Vector3<f64>) -> bool {
    if !state.is_finite() {
        return true;
    }
    (setpoint - state.position).norm() > MAX_POSITION_ERROR || state.up_alignment() < 0.0
}

fn norm(v: &[f32; ACT_DIM]) -> f64 {
    v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
}

pub fn reward(
    state: &RigidBodyState,
    action: &[f32; ACT_DIM],
    prev_action: &[f32; ACT_DIM],
    setpoint: &Vector3<f64>,
    weights: &RewardWeights,
) -> f64 {
    let pos_err2 = (setpoint - state.position).norm_squared();
    let up = state.up_alignment();
    let heading = state.attitude.to_rotation_matrix()[(0, 0)];
    let diff: [f32; ACT_DIM] = std::array::from_fn(|i| action[i] - prev_action[i]);
    let mut r = weights.w_pos * (-pos_err2 / weights.sigma_pos).exp()
        + weights.w_up * (-weights.k_up * (1.0 - up)).exp()
        - weights.w_vel * state.velocity.norm()
        - weights.w_angvel * state.angular_velocity.norm()
        - weights.w_act * norm(action)
        - weights.w_act_diff * norm(&diff)
        - weights.w_heading * (1.0 - heading);
    if terminated(state, setpoint) {
        r -= weights.crash_penalty;
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vehicle::VehicleParams;
    use nalgebra::UnitQuaternion;

    #[test]
    fn perfect_hover_reward() {
        let p = VehicleParams::default();
        let sp = Vector3::new(0.0, 0.0, -1.5);
        let state = RigidBodyState::hovering(sp, &p);
        let h = (2.0 * p.hover_command() - 1.0) as f32;
        let a = [h; 4];
        let r = reward(&state, &a, &a, &sp, &RewardWeights::default());
        let expected = 1.0 + 0.2 - 0.02 * (2.0 * h.abs() as f64);
        assert!((r - expected).abs() < 1e-9, "{r} vs {expected}");
    }

    #[test]
    fn reward_decreases_with_position_error() {
        let sp = Vector3::zeros();
        let a = [0.2f32; 4];
        let w = RewardWeights::default();
        let mut last = f64::INFINITY;
        for k in 0..40 {
            let state = RigidBodyState {
                position: Vector3::new(0.1 * k as f64, 0.0, 0.0),
                ..RigidBodyState::default()
            };
            let r = reward(&state, &a, &a, &sp, &w);
            assert!(r < last);
            last = r;
        }
    }

    #[test]
    fn equal_actions_have_no_difference_penalty() {
        let w = RewardWeights {
            w_act_diff: 1e6,
            ..RewardWeights::default()
        };
        let state = RigidBodyState::default();
        let a = [0.3f32, -0.1, 0.9, 0.0];
        let r = reward(&state, &a, &a, &Vector3::zeros(), &w);
        let base = reward(&state, &a, &a, &Vector3::zeros(), &RewardWeights::default());
        assert_eq!(r, base);
    }

    #[test]
    fn heading_penalty_vanishes_facing_north() {
        let sp = Vector3::zeros();
        let a = [0.0f32; 4];
        let w = RewardWeights::default();
        let north = reward(&RigidBodyState::default(), &a, &a, &sp, &w);
        let mut last = north;
        for k in 1..=12 {
            let yaw = k as f64 * std::f64::consts::PI / 12.0;
            let s = RigidBodyState {
                attitude: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
                ..RigidBodyState::default()
            };
            let r = reward(&s, &a, &a, &sp, &w);
            assert!(r < last);
            assert!((north - r - w.w_heading * (1.0 - yaw.cos())).abs() < 1e-12);
            last = r;
        }
    }

    #[test]
    fn termination_predicate() {
        let p = VehicleParams::default();
        let sp = Vector3::new(0.0, 0.0, -1.5);
        assert!(!terminated(&RigidBodyState::hovering(sp, &p), &sp));
        let far = RigidBodyState::hovering(Vector3::new(10.0, 0.0, -1.5), &p);
        assert!(terminated(&far, &sp));
        let inverted = RigidBodyState {
            position: sp,
            attitude: UnitQuaternion::from_euler_angles(std::f64::consts::PI, 0.0, 0.0),
            ..RigidBodyState::default()
        };
        assert!(terminated(&inverted, &sp));
        let nan = RigidBodyState {
            velocity: Vector3::new(f64::NAN, 0.0, 0.0),
            ..RigidBodyState::default()
        };
        assert!(terminated(&nan, &sp));
    }

    #[test]
    fn crash_penalty_applies_on_termination() {
        let sp = Vector3::zeros();
        let far = RigidBodyState {
            position: Vector3::new(9.0, 0.0, 0.0),
            ..RigidBodyState::default()
        };
        let a = [0.0f32; 4];
        let w = RewardWeights::default();
        let with = reward(&far, &a, &a, &sp, &w);
        let without = reward(&far, &a, &a, &sp, &RewardWeights { crash_penalty: 0.0, ..w });
        assert!((without - with - 10.0).abs() < 1e-12);
    }
}
