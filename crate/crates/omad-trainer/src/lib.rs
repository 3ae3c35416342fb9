//! Off-policy multi-agent training with diffusion policies and a
//! distributional joint critic.
//!
//! Each episode is collected with the target policies; once the replay
//! buffer is warm, the critic is updated every episode, the policies every
//! `policy_delay` episodes, then the temperature and the targets.

mod agents;
mod buffer;
mod config;
mod error;
mod eval;
mod train;
mod update;

pub use agents::{blend_into, concat_cols, sample_joint, update_targets, Acting, AgentSet, TemperatureState};
pub use buffer::{Batch, ReplayBuffer, Transition};
pub use config::TrainerConfig;
pub use error::{Error, Result};
pub use eval::{episode_returns, evaluate, mean_std, PolicyController};
pub use train::{EpisodeReport, TrainStats, Trainer, UpdateCounts, UpdateEvent};
pub use update::{
    clip_to_box, draw_policy_noise, policy_objective, update_critic, update_policies, update_temperature,
    ChainNoise, CriticStats, PolicyObjective, PolicyStats,
};
