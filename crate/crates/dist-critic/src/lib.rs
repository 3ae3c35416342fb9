//! Categorical distributional critic over joint state-action pairs.
//!
//! The network normalizes its input with batch normalization and is trained
//! without a target copy: current and next-state pairs go through one
//! shared forward pass, and the next-state half is cut from the graph.

mod error;
mod network;
mod support;

pub use error::{Error, Result};
pub use network::{
    critic_forward_pair, critic_loss, critic_loss_value, projected_targets, ActionValue,
    CriticConfig, CriticNetwork, PairOutput, QuadraticCritic, LOG_FLOOR,
};
pub use support::{
    bellman_target, project_to_support, q_mean, support_atoms, CategoricalValueDistribution,
    ValueSupport,
};
