use std::f64::consts::PI;

use rand::Rng;

use crate::array::DenseArray;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::param::{Module, Parameter};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Gelu => tape.gelu(x),
        }
    }
}

/// Affine layer `x W + b`, `W` of shape `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Linear {
    /// Uniform `±1/sqrt(fan_in)` initialization for weights and bias.
    pub fn new(name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
        };
        let w = DenseArray::matrix(fan_in, fan_out, draw(fan_in * fan_out));
        let b = DenseArray::new(vec![fan_out], draw(fan_out)).expect("bias shape");
        Self {
            weight: Parameter::new(format!("{name}.weight"), w),
            bias: Parameter::new(format!("{name}.bias"), b),
        }
    }

    pub fn from_values(name: &str, weight: DenseArray, bias: DenseArray) -> Result<Self> {
        if weight.cols() != bias.len() {
            return Err(Error::Config(format!(
                "{name}: weight {:?} does not match bias {:?}",
                weight.shape(),
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), bias),
        })
    }

    pub fn fan_in(&self) -> usize {
        self.weight.value.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.value.cols()
    }

    /// `frozen = true` records the weights as constants.
    pub fn forward(&self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.fan_in() {
            return Err(Error::Config(format!(
                "{}: expected input width {}, got {cols}",
                self.weight.name(),
                self.fan_in()
            )));
        }
        let (w, b) = leaf_pair(tape, &self.weight, &self.bias, frozen);
        let xw = tape.matmul(x, w)?;
        tape.add_row(xw, b)
    }
}

fn leaf_pair(tape: &mut Tape, a: &Parameter, b: &Parameter, frozen: bool) -> (Var, Var) {
    if frozen {
        (tape.frozen(a), tape.frozen(b))
    } else {
        (tape.param(a), tape.param(b))
    }
}

impl Module for Linear {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Stack of affine layers with an activation between consecutive layers; the
/// final layer is linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub activation: Activation,
}

impl Mlp {
    /// `widths = [in, hidden..., out]`.
    pub fn new(name: &str, widths: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(format!(
                "{name}: an MLP needs at least input and output widths"
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(&format!("{name}.l{i}"), w[0], w[1], rng))
            .collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Linear>, activation: Activation) -> Result<Self> {
        for pair in layers.windows(2) {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(Error::Config(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].fan_out(),
                    pair[1].fan_in()
                )));
            }
        }
        if layers.is_empty() {
            return Err(Error::Config("an MLP needs at least one layer".into()));
        }
        Ok(Self { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out()
    }

    pub fn forward(&self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, h, frozen)?;
            if i < last {
                h = self.activation.apply(tape, h);
            }
        }
        Ok(h)
    }
}

impl Module for Mlp {
    fn params(&self) -> Vec<&Parameter> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormMode {
    Training,
    Evaluation,
}

/// Running statistics of a batch-normalization layer.
///
/// `momentum` is the weight on the old running value. During the first
/// `warmup_steps` training-mode calls the effective momentum ramps linearly
/// from `initial_momentum` to `momentum`.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub initial_momentum: f64,
    pub warmup_steps: u64,
    pub mode: NormMode,
    pub step_count: u64,
}

impl BatchNormState {
    pub fn effective_momentum(&self) -> f64 {
        if self.warmup_steps == 0 || self.step_count >= self.warmup_steps {
            return self.momentum;
        }
        let frac = self.step_count as f64 / self.warmup_steps as f64;
        self.initial_momentum + (self.momentum - self.initial_momentum) * frac
    }
}

/// Variance floor used inside batch normalization.
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct BatchNorm {
    name: String,
    pub scale: Parameter,
    pub shift: Parameter,
    pub state: BatchNormState,
}

impl BatchNorm {
    pub fn new(name: &str, features: usize, momentum: f64, warmup_steps: u64) -> Result<Self> {
        if !(momentum > 0.0 && momentum < 1.0) {
            return Err(Error::Config(format!(
                "{name}: batch-norm momentum must lie in (0, 1), got {momentum}"
            )));
        }
        let vec = |v: f64| DenseArray::new(vec![features], vec![v; features]).unwrap();
        Ok(Self {
            name: name.to_string(),
            scale: Parameter::new(format!("{name}.scale"), vec(1.0)),
            shift: Parameter::new(format!("{name}.shift"), vec(0.0)),
            state: BatchNormState {
                running_mean: vec![0.0; features],
                running_var: vec![1.0; features],
                momentum,
                initial_momentum: momentum.min(0.5),
                warmup_steps,
                mode: NormMode::Training,
                step_count: 0,
            },
        })
    }

    pub fn features(&self) -> usize {
        self.state.running_mean.len()
    }

    pub fn set_mode(&mut self, mode: NormMode) {
        self.state.mode = mode;
    }

    /// Applies the layer in its current mode; training mode updates the
    /// running statistics.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var> {
        match self.state.mode {
            NormMode::Evaluation => self.forward_eval(tape, x, frozen),
            NormMode::Training => self.forward_train(tape, x, frozen),
        }
    }

    pub fn forward_train(&mut self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var> {
        let (g, b) = leaf_pair(tape, &self.scale, &self.shift, frozen);
        let (y, mean, var) = tape.batch_norm(x, g, b, BN_EPS)?;
        let mom = self.state.effective_momentum();
        for j in 0..mean.len() {
            self.state.running_mean[j] = mom * self.state.running_mean[j] + (1.0 - mom) * mean[j];
            self.state.running_var[j] = mom * self.state.running_var[j] + (1.0 - mom) * var[j];
        }
        self.state.step_count += 1;
        Ok(y)
    }

    /// Normalizes with the running statistics only; never mutates state.
    pub fn forward_eval(&self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var> {
        let inv: Vec<f64> = self
            .state
            .running_var
            .iter()
            .map(|v| 1.0 / (v + BN_EPS).sqrt())
            .collect();
        let shift: Vec<f64> = self
            .state
            .running_mean
            .iter()
            .zip(&inv)
            .map(|(m, s)| -m * s)
            .collect();
        let normed = tape.col_affine(x, &inv, &shift)?;
        let (g, b) = leaf_pair(tape, &self.scale, &self.shift, frozen);
        let scaled = tape.mul_row(normed, g)?;
        tape.add_row(scaled, b)
    }
}

impl Module for BatchNorm {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.scale, &self.shift]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.scale, &mut self.shift]
    }

    fn state(&self) -> Vec<(String, DenseArray)> {
        let n = self.features();
        let as_arr = |v: &[f64]| DenseArray::new(vec![n], v.to_vec()).unwrap();
        vec![
            (self.scale.name().to_string(), self.scale.value.clone()),
            (self.shift.name().to_string(), self.shift.value.clone()),
            (
                format!("{}.running_mean", self.name),
                as_arr(&self.state.running_mean),
            ),
            (
                format!("{}.running_var", self.name),
                as_arr(&self.state.running_var),
            ),
        ]
    }

    fn load_state(&mut self, ckpt: &Checkpoint) -> Result<()> {
        let n = self.features();
        self.scale.value = ckpt.get_shaped(self.scale.name(), &[n])?.clone();
        self.shift.value = ckpt.get_shaped(self.shift.name(), &[n])?.clone();
        self.state.running_mean = ckpt
            .get_shaped(&format!("{}.running_mean", self.name), &[n])?
            .data()
            .to_vec();
        self.state.running_var = ckpt
            .get_shaped(&format!("{}.running_var", self.name), &[n])?
            .data()
            .to_vec();
        Ok(())
    }
}

/// `dim / 2` frequencies spaced geometrically over `[1, 1000]`.
pub fn fourier_frequencies(dim: usize) -> Vec<f64> {
    let k = dim / 2;
    match k {
        0 => vec![],
        1 => vec![1.0],
        _ => (0..k)
            .map(|i| 1000f64.powf(i as f64 / (k - 1) as f64))
            .collect(),
    }
}

/// `[sin(2 pi f_k t)..., cos(2 pi f_k t)...]` as a `1 x dim` row.
pub fn fourier_time_embedding(t: f64, dim: usize) -> Result<DenseArray> {
    if dim % 2 != 0 || dim == 0 {
        return Err(Error::Config(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("time {t} outside [0, 1]")));
    }
    let freqs = fourier_frequencies(dim);
    let mut out = Vec::with_capacity(dim);
    out.extend(freqs.iter().map(|f| (2.0 * PI * f * t).sin()));
    out.extend(freqs.iter().map(|f| (2.0 * PI * f * t).cos()));
    Ok(DenseArray::row(out))
}
