use std::collections::VecDeque;
use std::io::Write;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::env::{HoverEnv, Transition};
use super::policy::{gaussian_log_prob, CriticNet, PolicyNet};
use super::ppo::{ppo_update, PpoConfig, PpoOptimizer, RolloutBuffer, UpdateStats};
use super::reward::{RewardWeights, MAX_POSITION_ERROR};
use crate::error::{Error, Result};
use crate::observation::{Observation, ACT_DIM, OBS_DIM};
use crate::vehicle::VehicleParams;

/// Steps at the end of an evaluation episode over which error is averaged.
pub const EVAL_WINDOW: usize = 100;
const EPISODE_WINDOW: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub update: usize,
    pub env_steps: u64,
    /// Rolling means over recently finished episodes; `None` before the first.
    pub mean_episode_reward: Option<f64>,
    pub mean_final_error: Option<f64>,
    pub eval_error: Option<f64>,
    pub eval_crashes: Option<usize>,
    pub stats: UpdateStats,
    pub mean_log_std: f64,
}

impl CurveRow {
    pub const CSV_HEADER: &'static str = "update,env_steps,mean_episode_reward,mean_final_error,eval_error,eval_crashes,policy_loss,value_loss,entropy,clip_fraction,approx_kl,mean_log_std";

    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.update,
            self.env_steps,
            opt(self.mean_episode_reward),
            opt(self.mean_final_error),
            opt(self.eval_error),
            self.eval_crashes.map(|c| c.to_string()).unwrap_or_default(),
            self.stats.policy_loss,
            self.stats.value_loss,
            self.stats.entropy,
            self.stats.clip_fraction,
            self.stats.approx_kl,
            self.mean_log_std
        )
    }
}

pub fn write_curve_csv<W: Write>(mut out: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "{}", CurveRow::CSV_HEADER)?;
    for row in rows {
        writeln!(out, "{}", row.to_csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean over episodes of the mean position error over the final
    /// [`EVAL_WINDOW`] steps. Crashed episodes count at the termination distance.
    pub mean_final_error: f64,
    pub max_final_error: f64,
    pub crashes: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Policy with the best evaluation (the last one if evaluation is off).
    pub policy: PolicyNet,
    pub critic: CriticNet,
    pub curve: Vec<CurveRow>,
    pub best_eval: Option<EvalReport>,
    pub best_update: usize,
    pub updates_run: usize,
}

/// Deterministic (mean-action) hover evaluation.
pub fn evaluate(
    policy: &PolicyNet,
    params: &VehicleParams,
    weights: &RewardWeights,
    cfg: &PpoConfig,
    episodes: usize,
    seed: u64,
) -> EvalReport {
    let mut envs: Vec<HoverEnv> = (0..episodes as u64)
        .map(|i| HoverEnv::new(seed, i, params, cfg))
        .collect();
    let steps = cfg.episode_steps;
    let window = EVAL_WINDOW.min(steps);
    let mut alive = vec![true; episodes];
    let mut error_sum = vec![0.0; episodes];
    let mut obs = Array2::zeros((episodes, OBS_DIM));
    for step in 0..steps {
        fill_observations(&envs, &mut obs);
        let actions = policy.mean_actions(&obs);
        for (e, env) in envs.iter_mut().enumerate() {
            let in_window = step >= steps - window;
            if !alive[e] {
                if in_window {
                    error_sum[e] += MAX_POSITION_ERROR;
                }
                continue;
            }
            let row = actions.row(e);
            let action: [f32; ACT_DIM] = std::array::from_fn(|j| row[j]);
            let t = env.step(&action, params, weights, cfg);
            if t.terminated {
                alive[e] = false;
            }
            if in_window {
                error_sum[e] += if t.terminated { MAX_POSITION_ERROR } else { t.position_error };
            }
        }
    }
    let finals: Vec<f64> = error_sum.iter().map(|s| s / window as f64).collect();
    EvalReport {
        mean_final_error: finals.iter().sum::<f64>() / episodes as f64,
        max_final_error: finals.iter().cloned().fold(0.0, f64::max),
        crashes: alive.iter().filter(|a| !**a).count(),
        episodes,
    }
}

fn fill_observations(envs: &[HoverEnv], out: &mut Array2<f32>) {
    for (env, mut row) in envs.iter().zip(out.rows_mut()) {
        let obs: Observation = env.observe();
        row.as_slice_mut().unwrap().copy_from_slice(&obs.0);
    }
}

struct StepOut {
    pre_action: [f32; ACT_DIM],
    log_prob: f32,
    transition: Transition,
    episode_reward: f64,
    terminal_obs: Option<Observation>,
}

/// PPO training driver. Rollouts fan out over environments with rayon; each
/// environment owns its random stream, so results do not depend on thread
/// scheduling.
pub struct Trainer {
    params: VehicleParams,
    weights: RewardWeights,
    cfg: PpoConfig,
    pub policy: PolicyNet,
    pub critic: CriticNet,
    optimizer: PpoOptimizer,
    envs: Vec<HoverEnv>,
    rng: ChaCha8Rng,
    pub buffer: RolloutBuffer,
    finished: VecDeque<(f64, f64)>,
    env_steps: u64,
}

impl Trainer {
    pub fn new(params: &VehicleParams, weights: &RewardWeights, cfg: &PpoConfig) -> Result<Self> {
        params.validate()?;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let hover_action = (2.0 * params.hover_command() - 1.0) as f32;
        let policy = PolicyNet::new(&mut rng, hover_action, cfg.init_log_std);
        let critic = CriticNet::new(&mut rng);
        let optimizer = PpoOptimizer::new(&policy, &critic, cfg.lr);
        let envs = (0..cfg.num_envs as u64)
            .map(|i| HoverEnv::new(cfg.seed, 1 + i, params, cfg))
            .collect();
        Ok(Self {
            params: params.clone(),
            weights: weights.clone(),
            cfg: cfg.clone(),
            policy,
            critic,
            optimizer,
            envs,
            rng,
            buffer: RolloutBuffer::new(cfg.num_envs, cfg.horizon),
            finished: VecDeque::with_capacity(EPISODE_WINDOW),
            env_steps: 0,
        })
    }

    /// Fills the rollout buffer with `horizon` steps of every environment and
    /// computes advantages. Time-limit truncations bootstrap from the critic.
    pub fn collect(&mut self) -> Result<()> {
        let n = self.cfg.num_envs;
        let gamma = self.cfg.gamma;
        let mut obs = Array2::zeros((n, OBS_DIM));
        for t in 0..self.cfg.horizon {
            fill_observations(&self.envs, &mut obs);
            let mean = self.policy.mlp.predict_batch(obs.view());
            let values = self.critic.values(&obs);
            let log_std = self.policy.log_std;
            let (params, weights, cfg) = (&self.params, &self.weights, &self.cfg);
            let outs: Vec<StepOut> = self
                .envs
                .par_iter_mut()
                .zip(mean.as_slice().unwrap().par_chunks(ACT_DIM))
                .map(|(env, mu)| {
                    let pre_action: [f32; ACT_DIM] = std::array::from_fn(|j| {
                        let eps: f32 = StandardNormal.sample(&mut env.rng);
                        mu[j] + log_std[j].exp() * eps
                    });
                    let log_prob = gaussian_log_prob(&pre_action, mu, &log_std) as f32;
                    let action = pre_action.map(f32::tanh);
                    let transition = env.step(&action, params, weights, cfg);
                    let episode_reward = env.episode_reward;
                    let mut terminal_obs = None;
                    if transition.done() {
                        if transition.truncated {
                            terminal_obs = Some(env.observe());
                        }
                        env.reset(params, cfg);
                    }
                    StepOut {
                        pre_action,
                        log_prob,
                        transition,
                        episode_reward,
                        terminal_obs,
                    }
                })
                .collect();

            let truncated: Vec<usize> = (0..n).filter(|&e| outs[e].terminal_obs.is_some()).collect();
            let mut boot = vec![0.0f32; n];
            if !truncated.is_empty() {
                let mut term = Array2::zeros((truncated.len(), OBS_DIM));
                for (mut row, &e) in term.rows_mut().into_iter().zip(&truncated) {
                    row.as_slice_mut()
                        .unwrap()
                        .copy_from_slice(&outs[e].terminal_obs.unwrap().0);
                }
                for (&e, v) in truncated.iter().zip(self.critic.values(&term)) {
                    boot[e] = v;
                }
            }

            for (e, out) in outs.iter().enumerate() {
                let i = t * n + e;
                self.buffer.observations[i * OBS_DIM..(i + 1) * OBS_DIM]
                    .copy_from_slice(obs.row(e).as_slice().unwrap());
                self.buffer.pre_actions[i * ACT_DIM..(i + 1) * ACT_DIM].copy_from_slice(&out.pre_action);
                self.buffer.log_probs[i] = out.log_prob;
                self.buffer.values[i] = values[e];
                let tr = out.transition;
                self.buffer.rewards[i] = (tr.reward + gamma * boot[e] as f64) as f32;
                self.buffer.dones[i] = tr.done();
                if tr.done() {
                    if self.finished.len() == EPISODE_WINDOW {
                        self.finished.pop_front();
                    }
                    self.finished.push_back((out.episode_reward, tr.position_error));
                }
            }
            let mean_reward: f64 = outs.iter().map(|o| o.transition.reward).sum::<f64>() / n as f64;
            if !mean_reward.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "mean reward is {mean_reward} at rollout step {t}"
                )));
            }
        }
        self.env_steps += (n * self.cfg.horizon) as u64;
        fill_observations(&self.envs, &mut obs);
        self.buffer.bootstrap_values = self.critic.values(&obs);
        self.buffer.compute_advantages(self.cfg.gamma, self.cfg.lambda);
        Ok(())
    }

    pub fn update(&mut self) -> Result<UpdateStats> {
        ppo_update(
            &self.buffer,
            &mut self.policy,
            &mut self.critic,
            &mut self.optimizer,
            &self.cfg,
            &mut self.rng,
        )
    }

    pub fn evaluate(&self) -> EvalReport {
        evaluate(
            &self.policy,
            &self.params,
            &self.weights,
            &self.cfg,
            self.cfg.eval_episodes,
            self.cfg.eval_seed,
        )
    }

    fn rolling_means(&self) -> (Option<f64>, Option<f64>) {
        if self.finished.is_empty() {
            return (None, None);
        }
        let k = self.finished.len() as f64;
        let r = self.finished.iter().map(|f| f.0).sum::<f64>() / k;
        let e = self.finished.iter().map(|f| f.1).sum::<f64>() / k;
        (Some(r), Some(e))
    }

    /// Runs up to `total_updates` collect/update rounds, evaluating every
    /// `eval_interval` updates and keeping the best-evaluated policy.
    pub fn run(mut self, mut on_row: impl FnMut(&CurveRow)) -> Result<TrainOutcome> {
        let mut curve = Vec::with_capacity(self.cfg.total_updates);
        let mut best: Option<(EvalReport, PolicyNet, usize)> = None;
        let mut updates_run = 0;
        for update in 1..=self.cfg.total_updates {
            self.collect()?;
            let stats = self.update()?;
            updates_run = update;
            let eval = (self.cfg.eval_interval > 0
                && (update % self.cfg.eval_interval == 0 || update == self.cfg.total_updates))
                .then(|| self.evaluate());
            let (mean_episode_reward, mean_final_error) = self.rolling_means();
            let row = CurveRow {
                update,
                env_steps: self.env_steps,
                mean_episode_reward,
                mean_final_error,
                eval_error: eval.as_ref().map(|e| e.mean_final_error),
                eval_crashes: eval.as_ref().map(|e| e.crashes),
                stats,
                mean_log_std: self.policy.log_std.iter().map(|&v| v as f64).sum::<f64>() / ACT_DIM as f64,
            };
            on_row(&row);
            curve.push(row);
            if let Some(report) = eval {
                let improved = best
                    .as_ref()
                    .map_or(true, |(b, _, _)| report.mean_final_error < b.mean_final_error);
                let reached = report.mean_final_error < self.cfg.target_eval_error;
                if improved {
                    best = Some((report, self.policy.clone(), update));
                }
                if reached {
                    break;
                }
            }
        }
        let (best_eval, policy, best_update) = match best {
            Some((report, policy, update)) => (Some(report), policy, update),
            None => (None, self.policy.clone(), updates_run),
        };
        Ok(TrainOutcome {
            policy,
            critic: self.critic,
            curve,
            best_eval,
            best_update,
            updates_run,
        })
    }
}

pub fn train(params: &VehicleParams, weights: &RewardWeights, cfg: &PpoConfig) -> Result<TrainOutcome> {
    Trainer::new(params, weights, cfg)?.run(|_| {})
}
