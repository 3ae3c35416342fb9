//! Built-in cooperative multi-agent control tasks.
//!
//! Every task exposes the full global state, a shared team reward and a fixed
//! horizon. Scripted oracles and a state-coverage grid support evaluation.

mod coverage;
mod env;
mod error;
mod oracle;

pub use coverage::CoverageGrid;
pub use env::{
    coopnav_reward, linespread_reward, make_env, AnyEnv, CoopNav, EnvConfig, EnvKind, EnvSpec,
    Environment, LineSpread, StepOutcome, LINE_TARGETS,
};
pub use error::{Error, Result};
pub use oracle::{
    best_assignment, oracle_return, permutations, rollout_return, zero_action_return, Controller,
    ScriptedOracle, ZeroController,
};
