//! Diffusion policies for continuous actions.
//!
//! Actions are produced by running an Euler-Maruyama discretization of a
//! reverse-time Ornstein-Uhlenbeck SDE whose drift is given by a learned,
//! state-conditioned score model. Each sampled chain keeps its noise draws,
//! so it can be replayed on a tape to get reparameterized gradients, and it
//! yields a single-sample lower bound on the policy entropy.

mod error;
mod policy;
mod schedule;
mod score;

pub use error::{Error, Result};
pub use policy::{elbo_entropy, log_normal_rows, DiffusionTrajectory, ScorePolicy, TapeChain};
pub use schedule::{
    cosine_schedule, forward_step, forward_step_with_noise, gaussian_log_density, sample_prior,
    NoiseSchedule,
};
pub use score::{ScoreModel, ScoreNet, ScoreNetConfig, ScoreNetContext, StationaryScore};
