//! Clipped-surrogate PPO update over a rectangular rollout buffer.

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig};
use super::gae::gae;
use super::policy::{gaussian_entropy, CriticNet, PolicyNet};
use crate::error::{Error, Result};
use crate::observation::{ACT_DIM, OBS_DIM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub num_envs: usize,
    pub horizon: usize,
    pub minibatches: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    pub total_updates: usize,
    pub seed: u64,
    pub init_log_std: f32,
    /// Simulation ticks per episode.
    pub episode_steps: usize,
    /// Training tick, s.
    pub dt: f64,
    /// Half-width of the initial position box around the setpoint, m.
    pub init_position_range: f64,
    pub init_velocity_range: f64,
    pub init_rate_range: f64,
    /// Updates between deterministic evaluations; 0 disables them.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Stop once an evaluation reaches this mean final error (m); 0 never stops early.
    pub target_eval_error: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
            clip: 0.2,
            lr: 1e-3,
            epochs: 4,
            num_envs: 256,
            horizon: 64,
            minibatches: 4,
            value_coef: 0.5,
            entropy_coef: 0.003,
            max_grad_norm: 1.0,
            total_updates: 2000,
            seed: 1,
            init_log_std: 0.0,
            episode_steps: 800,
            dt: 0.01,
            init_position_range: 2.0,
            init_velocity_range: 0.5,
            init_rate_range: 0.5,
            eval_interval: 10,
            eval_episodes: 64,
            eval_seed: 0x5eed,
            target_eval_error: 0.0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return bad("lambda must lie in (0, 1]");
        }
        if self.clip <= 0.0 {
            return bad("clip must be > 0");
        }
        if self.num_envs == 0 || self.horizon == 0 || self.epochs == 0 {
            return bad("num_envs, horizon and epochs must be > 0");
        }
        if self.minibatches == 0 || self.num_envs * self.horizon < self.minibatches {
            return bad("minibatches must be in 1..=num_envs·horizon");
        }
        if !(self.dt > 0.0 && self.dt <= crate::vehicle::MAX_STEP) || self.episode_steps == 0 {
            return bad("dt must lie in (0, 0.05] and episode_steps > 0");
        }
        Ok(())
    }
}

/// Transitions laid out step-major: index `t·num_envs + env`.
#[derive(Debug, Clone)]
pub struct RolloutBuffer {
    pub num_envs: usize,
    pub horizon: usize,
    pub observations: Vec<f32>,
    /// Pre-squash Gaussian samples.
    pub pre_actions: Vec<f32>,
    /// Gaussian log-density of the pre-squash sample under the behavior policy.
    pub log_probs: Vec<f32>,
    pub rewards: Vec<f32>,
    pub values: Vec<f32>,
    pub dones: Vec<bool>,
    /// Value of the state following the last step, per env.
    pub bootstrap_values: Vec<f32>,
    pub advantages: Vec<f32>,
    pub returns: Vec<f32>,
}

impl RolloutBuffer {
    pub fn new(num_envs: usize, horizon: usize) -> Self {
        let n = num_envs * horizon;
        Self {
            num_envs,
            horizon,
            observations: vec![0.0; n * OBS_DIM],
            pre_actions: vec![0.0; n * ACT_DIM],
            log_probs: vec![0.0; n],
            rewards: vec![0.0; n],
            values: vec![0.0; n],
            dones: vec![false; n],
            bootstrap_values: vec![0.0; num_envs],
            advantages: vec![0.0; n],
            returns: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.num_envs * self.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let (n, t_max) = (self.num_envs, self.horizon);
        for env in 0..n {
            let column = |v: &[f32]| (0..t_max).map(|t| v[t * n + env] as f64).collect::<Vec<_>>();
            let rewards = column(&self.rewards);
            let values = column(&self.values);
            let dones: Vec<bool> = (0..t_max).map(|t| self.dones[t * n + env]).collect();
            let (adv, ret) = gae(
                &rewards,
                &values,
                self.bootstrap_values[env] as f64,
                &dones,
                gamma,
                lambda,
            );
            for t in 0..t_max {
                self.advantages[t * n + env] = adv[t] as f32;
                self.returns[t * n + env] = ret[t] as f32;
            }
        }
    }

    fn gather_observations(&self, idx: &[usize]) -> Array2<f32> {
        let mut out = Array2::zeros((idx.len(), OBS_DIM));
        for (row, &i) in out.axis_iter_mut(Axis(0)).zip(idx) {
            row.into_slice()
                .unwrap()
                .copy_from_slice(&self.observations[i * OBS_DIM..(i + 1) * OBS_DIM]);
        }
        out
    }
}

/// Zero-mean, unit-std normalization (population std, `eps = 1e-8`).
pub fn normalize_advantages(adv: &[f32]) -> Vec<f32> {
    let n = adv.len() as f64;
    let mean = adv.iter().map(|&a| a as f64).sum::<f64>() / n;
    let var = adv.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt() + 1e-8;
    adv.iter().map(|&a| ((a as f64 - mean) / std) as f32).collect()
}

#[derive(Debug, Clone)]
pub struct PpoOptimizer {
    policy: Adam<f32>,
    critic: Adam<f32>,
}

impl PpoOptimizer {
    pub fn new(policy: &PolicyNet, critic: &CriticNet, lr: f64) -> Self {
        let mut policy_shapes: Vec<usize> = policy.mlp.params().iter().map(|p| p.len()).collect();
        policy_shapes.push(ACT_DIM);
        let critic_shapes: Vec<usize> = critic.mlp.params().iter().map(|p| p.len()).collect();
        Self {
            policy: Adam::new(AdamConfig::with_lr(lr), &policy_shapes),
            critic: Adam::new(AdamConfig::with_lr(lr), &critic_shapes),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
}

struct SurrogateTerms {
    loss: f64,
    clip_fraction: f64,
    approx_kl: f64,
    grad_mean: Array2<f32>,
    grad_log_std: [f64; ACT_DIM],
}

/// Clipped surrogate `mean(−min(ρA, clip(ρ)A))` and its gradient with respect
/// to the pre-squash mean and log-std. The tanh Jacobian cancels in `ρ`.
fn surrogate_terms(
    mean: &Array2<f32>,
    log_std: &[f32; ACT_DIM],
    pre_actions: &[f32],
    old_log_probs: &[f32],
    advantages: &[f32],
    clip: f64,
) -> SurrogateTerms {
    let b = mean.nrows();
    let inv_b = 1.0 / b as f64;
    let sigma: [f64; ACT_DIM] = std::array::from_fn(|j| (log_std[j] as f64).exp());
    let mut grad_mean = Array2::zeros((b, ACT_DIM));
    let mut grad_log_std = [0.0; ACT_DIM];
    let (mut loss, mut clipped, mut kl) = (0.0, 0usize, 0.0);
    for i in 0..b {
        let mu = mean.row(i);
        let z = &pre_actions[i * ACT_DIM..(i + 1) * ACT_DIM];
        let mut eps = [0.0; ACT_DIM];
        let mut log_prob = 0.0;
        for j in 0..ACT_DIM {
            eps[j] = (z[j] as f64 - mu[j] as f64) / sigma[j];
            log_prob += -0.5 * eps[j] * eps[j] - log_std[j] as f64 - 0.918_938_533_204_672_8;
        }
        let log_ratio = log_prob - old_log_probs[i] as f64;
        let ratio = log_ratio.exp();
        let a = advantages[i] as f64;
        let unclipped = ratio * a;
        let clipped_obj = ratio.clamp(1.0 - clip, 1.0 + clip) * a;
        loss -= unclipped.min(clipped_obj) * inv_b;
        if (ratio - 1.0).abs() > clip {
            clipped += 1;
        }
        kl += (ratio - 1.0 - log_ratio) * inv_b;
        if unclipped <= clipped_obj {
            let d_ratio = -a * inv_b;
            for j in 0..ACT_DIM {
                grad_mean[[i, j]] = (d_ratio * ratio * eps[j] / sigma[j]) as f32;
                grad_log_std[j] += d_ratio * ratio * (eps[j] * eps[j] - 1.0);
            }
        }
    }
    SurrogateTerms {
        loss,
        clip_fraction: clipped as f64 * inv_b,
        approx_kl: kl,
        grad_mean,
        grad_log_std,
    }
}

/// Surrogate loss of `policy` over the whole buffer, advantages normalized
/// buffer-wide. Used to check that updates improve the objective.
pub fn surrogate_loss(buffer: &RolloutBuffer, policy: &PolicyNet, clip: f64) -> f64 {
    let idx: Vec<usize> = (0..buffer.len()).collect();
    let obs = buffer.gather_observations(&idx);
    let mean = policy.mlp.predict_batch(obs.view());
    let adv = normalize_advantages(&buffer.advantages);
    surrogate_terms(
        &mean,
        &policy.log_std,
        &buffer.pre_actions,
        &buffer.log_probs,
        &adv,
        clip,
    )
    .loss
}

fn clip_norm(sum_squares: f64, max_norm: f64) -> f64 {
    let norm = sum_squares.sqrt();
    if max_norm > 0.0 && norm > max_norm {
        max_norm / norm
    } else {
        1.0
    }
}

/// Runs `epochs` passes of shuffled minibatch updates over `buffer`.
///
/// Advantages are normalized per minibatch. Gradient norms are clipped per
/// network (actor including log-std, critic).
pub fn ppo_update<R: Rng + ?Sized>(
    buffer: &RolloutBuffer,
    policy: &mut PolicyNet,
    critic: &mut CriticNet,
    optimizer: &mut PpoOptimizer,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let n = buffer.len();
    let batch = n / cfg.minibatches;
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for mb in order.chunks_exact(batch) {
            let s = minibatch_step(buffer, mb, policy, critic, optimizer, cfg)?;
            stats.policy_loss += s.policy_loss;
            stats.value_loss += s.value_loss;
            stats.entropy += s.entropy;
            stats.clip_fraction += s.clip_fraction;
            stats.approx_kl += s.approx_kl;
            count += 1.0;
        }
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.clip_fraction /= count;
    stats.approx_kl /= count;
    Ok(stats)
}

fn minibatch_step(
    buffer: &RolloutBuffer,
    idx: &[usize],
    policy: &mut PolicyNet,
    critic: &mut CriticNet,
    optimizer: &mut PpoOptimizer,
    cfg: &PpoConfig,
) -> Result<UpdateStats> {
    let b = idx.len();
    let obs = buffer.gather_observations(idx);
    let pre_actions: Vec<f32> = idx
        .iter()
        .flat_map(|&i| buffer.pre_actions[i * ACT_DIM..(i + 1) * ACT_DIM].iter().copied())
        .collect();
    let old_log_probs: Vec<f32> = idx.iter().map(|&i| buffer.log_probs[i]).collect();
    let raw_adv: Vec<f32> = idx.iter().map(|&i| buffer.advantages[i]).collect();
    let advantages = normalize_advantages(&raw_adv);
    let returns: Vec<f32> = idx.iter().map(|&i| buffer.returns[i]).collect();

    let (mean, policy_cache) = policy.mlp.forward_batch(obs.view());
    let surrogate = surrogate_terms(
        &mean,
        &policy.log_std,
        &pre_actions,
        &old_log_probs,
        &advantages,
        cfg.clip,
    );
    let entropy = gaussian_entropy(&policy.log_std);

    let (values, critic_cache) = critic.mlp.forward_batch(obs.view());
    let mut value_loss = 0.0;
    let mut grad_values = Array2::zeros((b, 1));
    for i in 0..b {
        let err = values[[i, 0]] as f64 - returns[i] as f64;
        value_loss += err * err / b as f64;
        grad_values[[i, 0]] = (2.0 * cfg.value_coef * err / b as f64) as f32;
    }

    let total = surrogate.loss + cfg.value_coef * value_loss - cfg.entropy_coef * entropy;
    if !total.is_finite() {
        return Err(Error::TrainingDiverged(format!(
            "non-finite loss (policy {}, value {}, entropy {})",
            surrogate.loss, value_loss, entropy
        )));
    }

    let (mut policy_grads, _) = policy.mlp.backward(&policy_cache, surrogate.grad_mean.view());
    let mut log_std_grads: [f32; ACT_DIM] =
        std::array::from_fn(|j| (surrogate.grad_log_std[j] - cfg.entropy_coef) as f32);
    let policy_sq = policy_grads.sum_squares() as f64
        + log_std_grads.iter().map(|&g| (g as f64).powi(2)).sum::<f64>();
    let scale = clip_norm(policy_sq, cfg.max_grad_norm) as f32;
    policy_grads.scale(scale);
    log_std_grads.iter_mut().for_each(|g| *g *= scale);

    let (mut critic_grads, _) = critic.mlp.backward(&critic_cache, grad_values.view());
    let critic_scale = clip_norm(critic_grads.sum_squares() as f64, cfg.max_grad_norm) as f32;
    critic_grads.scale(critic_scale);

    let mut grads = policy_grads.slices();
    grads.push(&log_std_grads);
    let mut params = policy.mlp.params_mut();
    params.push(&mut policy.log_std);
    optimizer.policy.apply(params, grads);
    policy.clamp_log_std();
    optimizer
        .critic
        .apply(critic.mlp.params_mut(), critic_grads.slices());

    Ok(UpdateStats {
        policy_loss: surrogate.loss,
        value_loss,
        entropy,
        clip_fraction: surrogate.clip_fraction,
        approx_kl: surrogate.approx_kl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn minibatch_normalization_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let adv: Vec<f32> = (0..4096).map(|_| rng.gen_range(-30.0..80.0)).collect();
        let norm = normalize_advantages(&adv);
        let n = norm.len() as f64;
        let mean = norm.iter().map(|&a| a as f64).sum::<f64>() / n;
        let std = (norm.iter().map(|&a| (a as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 1e-6);
        assert!((std - 1.0).abs() < 1e-6);
    }

    fn random_terms(adv_scale: f32, seed: u64) -> (PolicyNet, Array2<f32>, Vec<f32>, Vec<f32>, Vec<f32>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = PolicyNet::new(&mut rng, 0.3, -0.5);
        let b = 32;
        let obs = Array2::from_shape_fn((b, OBS_DIM), |_| rng.gen_range(-1.0..1.0));
        let mean = policy.mlp.predict_batch(obs.view());
        let z: Vec<f32> = (0..b * ACT_DIM).map(|k| mean.as_slice().unwrap()[k] + rng.gen_range(-0.5..0.5)).collect();
        let logp: Vec<f32> = (0..b)
            .map(|i| {
                super::super::policy::gaussian_log_prob(
                    &z[i * ACT_DIM..(i + 1) * ACT_DIM],
                    mean.row(i).as_slice().unwrap(),
                    &policy.log_std,
                ) as f32
            })
            .collect();
        let adv: Vec<f32> = (0..b).map(|_| adv_scale * rng.gen_range(-1.0..1.0)).collect();
        (policy, mean, z, logp, adv)
    }

    #[test]
    fn zero_advantages_give_zero_policy_gradient() {
        let (policy, mean, z, logp, adv) = random_terms(0.0, 8);
        let t = surrogate_terms(&mean, &policy.log_std, &z, &logp, &adv, 0.2);
        assert!(t.grad_mean.iter().all(|&g| g == 0.0));
        assert!(t.grad_log_std.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ratio_one_at_behavior_policy() {
        let (policy, mean, z, logp, adv) = random_terms(1.0, 9);
        let t = surrogate_terms(&mean, &policy.log_std, &z, &logp, &adv, 0.2);
        assert_eq!(t.clip_fraction, 0.0);
        // unclipped objective: −mean(A)
        let expected = -adv.iter().map(|&a| a as f64).sum::<f64>() / adv.len() as f64;
        assert!((t.loss - expected).abs() < 1e-5);
        assert!(t.approx_kl.abs() < 1e-6);
    }

    #[test]
    fn surrogate_gradient_matches_finite_differences() {
        let (policy, mean, z, logp, adv) = random_terms(1.0, 10);
        // perturb the mean away from the behavior policy so some samples clip
        let mean = mean.mapv(|m| m + 0.05);
        let t = surrogate_terms(&mean, &policy.log_std, &z, &logp, &adv, 0.2);
        let h = 1e-3f32;
        for (i, j) in [(0usize, 0usize), (3, 2), (17, 1), (31, 3)] {
            let mut plus = mean.clone();
            plus[[i, j]] += h;
            let mut minus = mean.clone();
            minus[[i, j]] -= h;
            let lp = surrogate_terms(&plus, &policy.log_std, &z, &logp, &adv, 0.2).loss;
            let lm = surrogate_terms(&minus, &policy.log_std, &z, &logp, &adv, 0.2).loss;
            let fd = (lp - lm) / (2.0 * h as f64);
            assert!((fd - t.grad_mean[[i, j]] as f64).abs() < 1e-4, "{fd} vs {}", t.grad_mean[[i, j]]);
        }
    }
}
