use std::collections::BTreeMap;

use crate::array::DenseArray;
use crate::error::{Error, Result};
use crate::param::{ParamId, Parameter};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 clip applied to the concatenated gradient; `None` disables.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    pub grad_norm: f64,
    pub clipped: bool,
}

/// Adam with bias correction. Moments are keyed by [`ParamId`] so the update
/// does not depend on the order parameters are handed in.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    m: BTreeMap<ParamId, DenseArray>,
    v: BTreeMap<ParamId, DenseArray>,
    t: u64,
}

fn sorted<'a, 'b>(params: &'a mut [&'b mut Parameter]) -> Vec<&'a mut &'b mut Parameter> {
    let mut ps: Vec<_> = params.iter_mut().collect();
    ps.sort_by_key(|p| p.id());
    ps
}

/// L2 norm over all gradients, accumulated in id order.
pub fn global_grad_norm(params: &[&Parameter]) -> f64 {
    let mut ps: Vec<_> = params.to_vec();
    ps.sort_by_key(|p| p.id());
    ps.iter().map(|p| p.grad.squared_norm()).sum::<f64>().sqrt()
}

/// Rescales gradients in place so their global norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(params: &mut [&mut Parameter], max_norm: f64) -> f64 {
    let norm = {
        let refs: Vec<&Parameter> = params.iter().map(|p| &**p).collect();
        global_grad_norm(&refs)
    };
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Clips, updates and zeroes gradients. A non-finite gradient aborts the
    /// step before anything is modified.
    pub fn step(&mut self, params: &mut [&mut Parameter]) -> Result<StepReport> {
        for p in params.iter() {
            let bad = p.grad.data().iter().filter(|g| !g.is_finite()).count();
            if bad > 0 {
                return Err(Error::NonFiniteGradient {
                    param: p.name().to_string(),
                    count: bad,
                });
            }
        }
        let (grad_norm, clipped) = match self.config.clip_norm {
            Some(max) => {
                let n = clip_global_norm(params, max);
                (n, n > max)
            }
            None => {
                let refs: Vec<&Parameter> = params.iter().map(|p| &**p).collect();
                (global_grad_norm(&refs), false)
            }
        };

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for p in sorted(params) {
            let shape = p.value.shape().to_vec();
            let m = self
                .m
                .entry(p.id())
                .or_insert_with(|| DenseArray::zeros(&shape));
            let v = self
                .v
                .entry(p.id())
                .or_insert_with(|| DenseArray::zeros(&shape));
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            let w = p.value.data_mut();
            for i in 0..g.len() {
                md[i] = beta1 * md[i] + (1.0 - beta1) * g[i];
                vd[i] = beta2 * vd[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = md[i] / bc1;
                let vhat = vd[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
            p.zero_grad();
        }
        Ok(StepReport { grad_norm, clipped })
    }
}
