//! Microcontroller-style inference: the arena is sized once at init and the
//! steady-state path (preprocess → infer → postprocess) never allocates.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::modelpack::{self, LoadedModel};
use crate::observation::{observation_from_parts, ActionVec, Observation, ACT_DIM, OBS_DIM};

/// Why a control step could not produce a command. Consumed by the flight
/// stack's fallback logic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    NonFiniteInput,
    NonFiniteOutput,
}

/// Raw state as read from the bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateInputs {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    /// Scalar-first unit quaternion, body→world.
    pub attitude: [f64; 4],
    pub angular_velocity: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseTimers {
    pub calls: u64,
    pub preprocess_ns: u64,
    pub infer_ns: u64,
    pub postprocess_ns: u64,
}

#[derive(Debug, Clone)]
pub struct InferenceRuntime {
    model: LoadedModel,
    arena: Box<[f32]>,
    pub timers: PhaseTimers,
}

impl InferenceRuntime {
    /// Loads and validates `blob`, checks the footprint against
    /// `budget_bytes` and sizes the activation arena.
    pub fn init(blob: &[u8], budget_bytes: usize) -> Result<Self> {
        let model = modelpack::load_within(blob, budget_bytes)?;
        Self::from_model(model)
    }

    pub fn from_model(model: LoadedModel) -> Result<Self> {
        if model.obs_dim != OBS_DIM || model.act_dim != ACT_DIM {
            return Err(Error::Format(format!(
                "runtime expects {OBS_DIM}→{ACT_DIM}, model is {}→{}",
                model.obs_dim, model.act_dim
            )));
        }
        let arena = vec![0.0f32; model.arena_bytes / 4].into_boxed_slice();
        Ok(Self {
            model,
            arena,
            timers: PhaseTimers::default(),
        })
    }

    pub fn model(&self) -> &LoadedModel {
        &self.model
    }

    pub fn arena_bytes(&self) -> usize {
        self.arena.len() * 4
    }

    pub fn footprint_bytes(&self) -> usize {
        self.model.file_bytes() + self.arena_bytes()
    }

    /// Dense forward pass over the ping-pong halves of the arena.
    pub fn infer(&mut self, obs: &Observation) -> Result<ActionVec, Fault> {
        let width = self.arena.len() / 2;
        let (mut src, mut dst) = self.arena.split_at_mut(width);
        src[..OBS_DIM].copy_from_slice(&obs.0);
        for layer in &self.model.layers {
            for (o, y) in dst[..layer.out_dim].iter_mut().enumerate() {
                let row = layer.weight_offset + 4 * o * layer.in_dim;
                let weights = &self.model.bytes()[row..row + 4 * layer.in_dim];
                let mut acc = self.model.bias(layer, o);
                for (w, x) in weights.chunks_exact(4).zip(&src[..layer.in_dim]) {
                    acc += f32::from_le_bytes([w[0], w[1], w[2], w[3]]) * x;
                }
                *y = layer.activation.apply(acc);
            }
            std::mem::swap(&mut src, &mut dst);
        }
        let out: [f32; ACT_DIM] = std::array::from_fn(|i| src[i]);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Fault::NonFiniteOutput);
        }
        Ok(ActionVec(out))
    }

    /// preprocess → infer → postprocess with per-phase timing.
    pub fn step(&mut self, state: &StateInputs, setpoint: &[f64; 3]) -> Result<[f32; ACT_DIM], Fault> {
        let t0 = Instant::now();
        let obs = preprocess(state, setpoint);
        let t1 = Instant::now();
        let action = obs.and_then(|o| self.infer(&o));
        let t2 = Instant::now();
        let commands = action.map(|a| postprocess(&a));
        let t3 = Instant::now();
        self.timers.calls += 1;
        self.timers.preprocess_ns += (t1 - t0).as_nanos() as u64;
        self.timers.infer_ns += (t2 - t1).as_nanos() as u64;
        self.timers.postprocess_ns += (t3 - t2).as_nanos() as u64;
        commands
    }
}

/// Same observation definition as training; float32 output.
pub fn preprocess(state: &StateInputs, setpoint: &[f64; 3]) -> Result<Observation, Fault> {
    observation_from_parts(
        &state.position,
        &state.velocity,
        &state.attitude,
        &state.angular_velocity,
        setpoint,
    )
    .map_err(|_| Fault::NonFiniteInput)
}

/// Normalized rotor-speed commands `u = (a + 1) / 2`.
pub fn postprocess(action: &ActionVec) -> [f32; ACT_DIM] {
    action.0.map(|a| ((a + 1.0) * 0.5).clamp(0.0, 1.0))
}

/// Rotor speeds (rad/s) for a policy action, as applied by the simulator.
pub fn action_to_speeds(action: &[f32; ACT_DIM], omega_max: f64) -> [f64; ACT_DIM] {
    postprocess(&ActionVec(*action)).map(|u| u as f64 * omega_max)
}
