use ndiff_core::{
    fourier_time_embedding, Activation, BatchNorm, Checkpoint, DenseArray, Mlp, Module, Parameter,
    Tape, Var,
};
use rand::Rng;

use crate::error::{Error, Result};

/// A state-conditioned score model `f(a, s, t)`.
///
/// `bind` records parameters and any state-only work once per batch; `score`
/// is then called once per denoising step.
pub trait ScoreModel: Module {
    type Context;

    fn state_dim(&self) -> usize;

    fn action_dim(&self) -> usize;

    /// `states` is `[n, state_dim]`. With `frozen` the parameters enter the
    /// tape as constants.
    fn bind(&self, tape: &mut Tape, states: Var, frozen: bool) -> Result<Self::Context>;

    /// Like [`ScoreModel::bind`] but with any normalization layers in training
    /// mode, updating their running statistics.
    fn bind_training(&mut self, tape: &mut Tape, states: Var, frozen: bool) -> Result<Self::Context> {
        self.bind(tape, states, frozen)
    }

    /// Score for `a` (`[n, action_dim]`) at diffusion time `t`.
    fn score(&self, tape: &mut Tape, ctx: &Self::Context, a: Var, t: f64) -> Result<Var>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreNetConfig {
    pub hidden: Vec<usize>,
    pub time_dim: usize,
    /// Batch-normalize the state block of the input.
    pub state_norm: bool,
    pub bn_momentum: f64,
    pub bn_warmup: u64,
}

impl Default for ScoreNetConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            time_dim: 256,
            state_norm: true,
            bn_momentum: 0.99,
            bn_warmup: 100_000,
        }
    }
}

impl ScoreNetConfig {
    pub fn small(hidden: usize, time_dim: usize) -> Self {
        Self {
            hidden: vec![hidden, hidden],
            time_dim,
            ..Self::default()
        }
    }
}

/// GELU MLP over `[bn(s), a, emb(t)]`.
///
/// The first layer's weight rows are split by input block so the state
/// contribution is computed once per batch. Only the state block is
/// normalized: within a batch the embedding columns are constant.
#[derive(Clone, Debug)]
pub struct ScoreNet {
    mlp: Mlp,
    state_norm: Option<BatchNorm>,
    state_dim: usize,
    action_dim: usize,
    time_dim: usize,
}

pub struct ScoreNetContext {
    w_action: Var,
    w_time: Var,
    state_part: Var,
    rest: Vec<(Var, Var)>,
    rows: usize,
}

impl ScoreNet {
    pub fn new(
        name: &str,
        state_dim: usize,
        action_dim: usize,
        config: &ScoreNetConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.time_dim == 0 || config.time_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding dimension must be even and positive, got {}",
                config.time_dim
            )));
        }
        if action_dim == 0 {
            return Err(Error::Config("action dimension must be positive".into()));
        }
        if config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "score network needs non-empty hidden widths, got {:?}",
                config.hidden
            )));
        }
        let mut widths = vec![state_dim + action_dim + config.time_dim];
        widths.extend(&config.hidden);
        widths.push(action_dim);
        let state_norm = if config.state_norm && state_dim > 0 {
            Some(BatchNorm::new(
                &format!("{name}.bn_state"),
                state_dim,
                config.bn_momentum,
                config.bn_warmup,
            )?)
        } else {
            None
        };
        Ok(Self {
            mlp: Mlp::new(name, &widths, Activation::Gelu, rng)?,
            state_norm,
            state_dim,
            action_dim,
            time_dim: config.time_dim,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn state_norm(&self) -> Option<&BatchNorm> {
        self.state_norm.as_ref()
    }

    fn check_states(&self, tape: &Tape, states: Var) -> Result<()> {
        let cols = tape.value(states).cols();
        if cols != self.state_dim {
            return Err(Error::Config(format!(
                "score network expects state width {}, got {cols}",
                self.state_dim
            )));
        }
        Ok(())
    }

    fn bind_normed(&self, tape: &mut Tape, states: Var, frozen: bool) -> Result<ScoreNetContext> {
        let rows = tape.value(states).rows();
        let first = &self.mlp.layers[0];
        let w = leaf(tape, &first.weight, frozen);
        let b = leaf(tape, &first.bias, frozen);
        let (s, a) = (self.state_dim, self.action_dim);
        let w_state = tape.slice_rows(w, 0, s);
        let w_action = tape.slice_rows(w, s, s + a);
        let w_time = tape.slice_rows(w, s + a, s + a + self.time_dim);
        let state_part = if s == 0 {
            let zeros = tape.constant(DenseArray::zeros(&[rows, first.fan_out()]));
            tape.add_row(zeros, b)?
        } else {
            let sw = tape.matmul(states, w_state)?;
            tape.add_row(sw, b)?
        };
        let rest = self.mlp.layers[1..]
            .iter()
            .map(|l| (leaf(tape, &l.weight, frozen), leaf(tape, &l.bias, frozen)))
            .collect();
        Ok(ScoreNetContext {
            w_action,
            w_time,
            state_part,
            rest,
            rows,
        })
    }
}

impl Module for ScoreNet {
    fn params(&self) -> Vec<&Parameter> {
        let mut ps = self.state_norm.as_ref().map(|bn| bn.params()).unwrap_or_default();
        ps.extend(self.mlp.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = self
            .state_norm
            .as_mut()
            .map(|bn| bn.params_mut())
            .unwrap_or_default();
        ps.extend(self.mlp.params_mut());
        ps
    }

    fn state(&self) -> Vec<(String, DenseArray)> {
        let mut out = self.state_norm.as_ref().map(|bn| bn.state()).unwrap_or_default();
        out.extend(self.mlp.state());
        out
    }

    fn load_state(&mut self, ckpt: &Checkpoint) -> ndiff_core::Result<()> {
        if let Some(bn) = &mut self.state_norm {
            bn.load_state(ckpt)?;
        }
        self.mlp.load_state(ckpt)
    }
}

fn leaf(tape: &mut Tape, p: &Parameter, frozen: bool) -> Var {
    if frozen {
        tape.frozen(p)
    } else {
        tape.param(p)
    }
}

impl ScoreModel for ScoreNet {
    type Context = ScoreNetContext;

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn bind(&self, tape: &mut Tape, states: Var, frozen: bool) -> Result<ScoreNetContext> {
        self.check_states(tape, states)?;
        let normed = match &self.state_norm {
            Some(bn) => bn.forward_eval(tape, states, frozen)?,
            None => states,
        };
        self.bind_normed(tape, normed, frozen)
    }

    fn bind_training(&mut self, tape: &mut Tape, states: Var, frozen: bool) -> Result<ScoreNetContext> {
        self.check_states(tape, states)?;
        let normed = match &mut self.state_norm {
            Some(bn) => bn.forward_train(tape, states, frozen)?,
            None => states,
        };
        self.bind_normed(tape, normed, frozen)
    }

    fn score(&self, tape: &mut Tape, ctx: &ScoreNetContext, a: Var, t: f64) -> Result<Var> {
        let rows = tape.value(a).rows();
        if rows != ctx.rows {
            return Err(Error::Config(format!(
                "action batch has {rows} rows, state batch {}",
                ctx.rows
            )));
        }
        let emb = tape.constant(fourier_time_embedding(t, self.time_dim)?);
        let time_part = tape.matmul(emb, ctx.w_time)?;
        let aw = tape.matmul(a, ctx.w_action)?;
        let pre = tape.add(aw, ctx.state_part)?;
        let mut h = tape.add_row(pre, time_part)?;
        for &(w, b) in &ctx.rest {
            h = self.mlp.activation.apply(tape, h);
            let hw = tape.matmul(h, w)?;
            h = tape.add_row(hw, b)?;
        }
        Ok(h)
    }
}

/// The exact score `-a / eta^2` of the stationary law `N(0, eta^2 I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StationaryScore {
    pub state_dim: usize,
    pub action_dim: usize,
    pub eta: f64,
}

impl Module for StationaryScore {
    fn params(&self) -> Vec<&Parameter> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        Vec::new()
    }
}

impl ScoreModel for StationaryScore {
    type Context = ();

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn bind(&self, _tape: &mut Tape, _states: Var, _frozen: bool) -> Result<()> {
        Ok(())
    }

    fn score(&self, tape: &mut Tape, _ctx: &(), a: Var, _t: f64) -> Result<Var> {
        Ok(tape.scale(a, -1.0 / (self.eta * self.eta)))
    }
}
