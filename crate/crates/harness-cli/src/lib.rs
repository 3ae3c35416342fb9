//! Run orchestration for the trainer: a `key = value` config loader, seeded
//! training runs with CSV metrics, checkpoints and coverage dumps, and
//! checkpoint evaluation. The `omad` binary wraps these.

mod config;
mod error;
mod run;

pub use config::{
    default_out_dir, echo_config, load_config, parse_config, validate, CoverageSpec, EvalConfig,
    RunConfig,
};
pub use error::{Error, Result};
pub use run::{
    build_trainer, evaluate_checkpoint, run, MetricsRow, References, RunSummary, METRICS_HEADER,
};
