//! Episode rollouts and the policy-gradient training loop.

mod baseline;
mod gradcheck;
mod optim;
mod rollout;
mod stats;
mod trainer;

pub use baseline::{paired_t_test, PairedTest};
pub use gradcheck::{check_episode_gradient, EpisodeLoss};
pub use optim::{AdamConfig, OptimizerState};
pub use rollout::{rollout, run_episode, DecodeMode, EpisodeRecord, Rollout, StepRecord};
pub use stats::{momentum_update, positive_part, RunningStats};
pub use trainer::{
    evaluate_greedy, read_metric_log, replay_stats, run_paths, MetricLog, MetricRecord, StatsUpdate, Trainer,
    TrainerConfig,
};
