//! PPO training of the end-to-end position policy.

pub mod adam;
pub mod env;
pub mod gae;
pub mod mlp;
pub mod policy;
pub mod ppo;
pub mod reward;
mod train;

pub use adam::{adam_step, Adam, AdamConfig, AdamMoments};
pub use env::HoverEnv;
pub use gae::gae;
pub use mlp::{Activation, Dense, ForwardCache, Mlp, MlpGrads};
pub use policy::{CriticNet, PolicyNet};
pub use ppo::{ppo_update, surrogate_loss, PpoConfig, PpoOptimizer, RolloutBuffer, UpdateStats};
pub use reward::{reward, terminated, RewardWeights};
pub use train::{evaluate, train, write_curve_csv, CurveRow, EvalReport, TrainOutcome, Trainer, EVAL_WINDOW};
