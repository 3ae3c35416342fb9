use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite score output at denoising step {step} ({count} entries)")]
    NonFiniteScore { step: usize, count: usize },
    #[error("variance must be positive, got {0}")]
    InvalidVariance(f64),
    #[error("trajectory was sampled with a different schedule")]
    ScheduleMismatch,
    #[error(transparent)]
    Core(#[from] ndiff_core::Error),
}
