use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid trainer configuration: {0}")]
    Config(String),
    #[error("non-finite {what}: {detail}")]
    NonFinite { what: &'static str, detail: String },
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error(transparent)]
    Policy(#[from] diffusion_policy::Error),
    #[error(transparent)]
    Critic(#[from] dist_critic::Error),
    #[error(transparent)]
    Env(#[from] marl_envs::Error),
    #[error(transparent)]
    Core(#[from] ndiff_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
