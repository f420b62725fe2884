//! Actor and critic networks and the tanh-squashed Gaussian action model.

use ndarray::{Array2, Axis};
use rand::Rng;

use super::mlp::{Activation, Mlp};
use crate::observation::{ActionVec, Observation, ACT_DIM, OBS_DIM};

pub const HIDDEN: [usize; 2] = [64, 32];
pub const LOG_STD_MIN: f32 = -4.0;
pub const LOG_STD_MAX: f32 = 1.0;
const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

fn layer_dims(out: usize) -> [usize; 4] {
    [OBS_DIM, HIDDEN[0], HIDDEN[1], out]
}

const ACTIVATIONS: [Activation; 3] = [Activation::Relu, Activation::Relu, Activation::Linear];

/// Actor: 15→64→32→4, ReLU hidden layers, linear head producing the
/// pre-squash mean. The log-std vector is only used while training.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet {
    pub mlp: Mlp<f32>,
    pub log_std: [f32; ACT_DIM],
}

impl PolicyNet {
    /// Random init with a near-zero output layer whose bias puts the
    /// squashed mean at `initial_action`.
    pub fn new<R: Rng + ?Sized>(rng: &mut R, initial_action: f32, log_std: f32) -> Self {
        let mut mlp = Mlp::init(&layer_dims(ACT_DIM), &ACTIVATIONS, rng);
        let head = mlp.layers.last_mut().unwrap();
        head.weight.mapv_inplace(|w| 0.01 * w);
        head.bias.fill(initial_action.clamp(-0.99, 0.99).atanh());
        Self {
            mlp,
            log_std: [log_std.clamp(LOG_STD_MIN, LOG_STD_MAX); ACT_DIM],
        }
    }

    /// Deterministic action: the squashed mean.
    pub fn mean_action(&self, obs: &Observation) -> ActionVec {
        let (mean, _) = self.mlp.forward(obs.as_slice());
        ActionVec(std::array::from_fn(|i| mean[i].tanh()))
    }

    /// Squashed means for a batch of observations (one per row).
    pub fn mean_actions(&self, obs: &Array2<f32>) -> Array2<f32> {
        self.mlp.predict_batch(obs.view()).mapv(f32::tanh)
    }

    pub fn clamp_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }

    /// FNV-1a over all parameter bit patterns, including log-std.
    pub fn checksum(&self) -> u64 {
        let mut h = fnv_bits(FNV_OFFSET, self.mlp.params().into_iter().flatten());
        h = fnv_bits(h, self.log_std.iter());
        h
    }
}

/// Value function: 15→64→32→1, ReLU hidden, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct CriticNet {
    pub mlp: Mlp<f32>,
}

impl CriticNet {
    pub fn new<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut mlp = Mlp::init(&layer_dims(1), &ACTIVATIONS, rng);
        mlp.layers.last_mut().unwrap().weight.mapv_inplace(|w| 0.1 * w);
        Self { mlp }
    }

    pub fn values(&self, obs: &Array2<f32>) -> Vec<f32> {
        self.mlp
            .predict_batch(obs.view())
            .index_axis(Axis(1), 0)
            .to_vec()
    }

    pub fn checksum(&self) -> u64 {
        fnv_bits(FNV_OFFSET, self.mlp.params().into_iter().flatten())
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

fn fnv_bits<'a>(mut h: u64, values: impl Iterator<Item = &'a f32>) -> u64 {
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Diagonal Gaussian log-density of pre-squash sample `z`.
pub fn gaussian_log_prob(z: &[f32], mean: &[f32], log_std: &[f32]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&z, &m), &ls)| {
            let ls = ls as f64;
            let eps = (z as f64 - m as f64) / ls.exp();
            -0.5 * eps * eps - ls - HALF_LOG_2PI
        })
        .sum()
}

/// `Σ log(1 − tanh²(z))`, computed stably.
pub fn tanh_log_det(z: &[f32]) -> f64 {
    z.iter()
        .map(|&z| {
            let z = z as f64;
            2.0 * (std::f64::consts::LN_2 - z - softplus(-2.0 * z))
        })
        .sum()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Log-density of the squashed action `a = tanh(z)`.
pub fn squashed_log_prob(z: &[f32], mean: &[f32], log_std: &[f32]) -> f64 {
    gaussian_log_prob(z, mean, log_std) - tanh_log_det(z)
}

/// Entropy of the pre-squash Gaussian.
pub fn gaussian_entropy(log_std: &[f32]) -> f64 {
    log_std.iter().map(|&ls| ls as f64 + 0.5 + HALF_LOG_2PI).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn squashed_density_integrates_to_one() {
        for (mean, log_std) in [(0.3f32, -0.5f32), (0.0, 0.0), (-0.8, -1.5), (0.68, 0.0)] {
            let n = 200_000;
            let lo = -1.0 + 1e-9;
            let hi = 1.0 - 1e-9;
            let h = (hi - lo) / n as f64;
            let density = |a: f64| {
                let z = a.atanh() as f32;
                squashed_log_prob(&[z], &[mean], &[log_std]).exp()
            };
            let mut total = 0.5 * (density(lo) + density(hi));
            for k in 1..n {
                total += density(lo + k as f64 * h);
            }
            total *= h;
            assert!((total - 1.0).abs() < 1e-3, "mean {mean} log_std {log_std}: {total}");
        }
    }

    #[test]
    fn gaussian_log_prob_standard_normal_at_zero() {
        let lp = gaussian_log_prob(&[0.0], &[0.0], &[0.0]);
        assert!((lp + HALF_LOG_2PI).abs() < 1e-12);
    }

    #[test]
    fn policy_starts_at_requested_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PolicyNet::new(&mut rng, 0.5924, 0.0);
        let a = p.mean_action(&Observation([0.0; OBS_DIM]));
        for v in a.0 {
            assert!((v - 0.5924).abs() < 1e-3);
        }
        assert_eq!(p.mlp.param_count(), 3236);
        assert_eq!(p.mlp.dims(), vec![15, 64, 32, 4]);
    }

    #[test]
    fn checksum_tracks_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = PolicyNet::new(&mut rng, 0.0, 0.0);
        let mut q = p.clone();
        assert_eq!(p.checksum(), q.checksum());
        q.mlp.layers[0].bias[3] += 1e-6;
        assert_ne!(p.checksum(), q.checksum());
    }
}
