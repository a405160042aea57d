//! Controller and module optimization, the recurrent baseline, evaluation,
//! and the training loops that tie them together.

pub mod baseline;
pub mod config;
pub mod eval;
pub mod module_update;
pub mod ppo;
pub mod rollout;
pub mod runner;

pub use baseline::Baseline;
pub use config::{BaselineConfig, EarlyStop, ModelKind, TrainConfig};
pub use eval::{aggregate, aggregate_csv, evaluate, AggregateRow, EvalReport, EvalRow, Solver};
pub use module_update::{episode_loss, module_update, recompute_chain, ModuleStats};
pub use ppo::{
    clipped_surrogate, controller_update, ppo_gradients, ppo_steps, returns_to_go, LossWeights,
    PpoStats, PpoStep,
};
pub use rollout::{collect_rollouts, rollout_episode, RolloutBuffer};
pub use runner::{train, CurriculumDriver, Learner, Observer, Quiet, RunOutcome};
