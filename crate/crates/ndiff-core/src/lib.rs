//! Minimal dense-array numerics with reverse-mode automatic differentiation.
//!
//! Everything is `f64` and row-major. A [`Tape`] records the forward pass of a
//! loss; [`Tape::backward`] replays it in reverse and returns [`Gradients`]
//! keyed by [`ParamId`]. Network building blocks ([`Linear`], [`Mlp`],
//! [`BatchNorm`], [`fourier_time_embedding`]) record onto a tape, and [`Adam`]
//! applies globally clipped updates.

mod array;
mod checkpoint;
mod error;
mod nn;
mod optim;
mod param;
mod tape;

pub use array::DenseArray;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use nn::{
    fourier_frequencies, fourier_time_embedding, Activation, BatchNorm, BatchNormState, Linear,
    Mlp, NormMode,
};
pub use optim::{clip_global_norm, global_grad_norm, Adam, AdamConfig, StepReport};
pub use param::{Module, ParamId, Parameter};
pub use tape::{Gradients, Tape, Var};
