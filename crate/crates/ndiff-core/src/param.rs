use std::sync::atomic::{AtomicU64, Ordering};

use crate::array::DenseArray;
use crate::checkpoint::Checkpoint;
use crate::error::Result;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique parameter handle. Ids are handed out in creation order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        Self(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable array with its accumulated gradient.
///
/// Cloning allocates a fresh [`ParamId`], so a cloned network is an
/// independent snapshot that never shares optimizer state with its source.
#[derive(Debug)]
pub struct Parameter {
    id: ParamId,
    name: String,
    pub value: DenseArray,
    pub grad: DenseArray,
}

impl Clone for Parameter {
    fn clone(&self) -> Self {
        Self {
            id: ParamId::fresh(),
            name: self.name.clone(),
            value: self.value.clone(),
            grad: self.grad.clone(),
        }
    }
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: DenseArray) -> Self {
        let grad = DenseArray::zeros(value.shape());
        Self {
            id: ParamId::fresh(),
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything owning parameters (and possibly non-trainable buffers).
pub trait Module {
    fn params(&self) -> Vec<&Parameter>;

    fn params_mut(&mut self) -> Vec<&mut Parameter>;

    /// Named arrays for checkpointing; parameters plus any running statistics.
    fn state(&self) -> Vec<(String, DenseArray)> {
        self.params()
            .into_iter()
            .map(|p| (p.name().to_string(), p.value.clone()))
            .collect()
    }

    /// Restores everything [`Module::state`] reports, matching by name.
    fn load_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for p in self.params_mut() {
            let value = ckpt.get_shaped(p.name(), p.value.shape())?;
            p.value = value.clone();
        }
        Ok(())
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }
}
