use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("joint action has {got} entries, expected {expected}")]
    ActionSize { expected: usize, got: usize },
    #[error("episode already finished; call reset")]
    EpisodeOver,
    #[error("unsupported environment: {0}")]
    Unsupported(String),
}
