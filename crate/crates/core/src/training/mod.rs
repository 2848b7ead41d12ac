//! Independent learners: one network, target network, optimizer and
//! replay buffer per agent, no parameter sharing.

mod config;
mod evaluate;
mod loss;
mod metrics;
mod optim;
mod policy;
mod replay;
mod trainer;

pub use config::{EpsilonConfig, TrainConfig};
pub use evaluate::{evaluate, evaluate_models, random_policy_metrics, rollout_episode, EvalReport, MetricSummary, Summary};
pub use loss::{
    dqn_loss, dqn_target, iqn_quantile_huber_loss, iqn_targets, quantile_huber, LossOutput, QuantileDraw,
};
pub use metrics::{EpisodeMetrics, MetricsWriter};
pub use optim::{clip_grad_norm, Adam, AdamConfig};
pub use policy::{epsilon_greedy, explore, LinearSchedule};
pub use replay::{ReplayBuffer, Transition};
pub use trainer::{derive_seed, train, Learner, TrainOutput, Trainer, CHECKPOINT_FILE, EVAL_FILE, METRICS_FILE, TRACE_FILE};
