use ndiff_core::{BatchNorm, Checkpoint, DenseArray, Linear, Module, NormMode, Parameter, Tape, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::support::{project_into, ValueSupport};

#[derive(Clone, Debug, PartialEq)]
pub struct CriticConfig {
    pub hidden: Vec<usize>,
    pub bn_momentum: f64,
    pub bn_warmup: u64,
}

impl Default for CriticConfig {
    fn default() -> Self {
        Self {
            hidden: vec![2048, 2048],
            bn_momentum: 0.99,
            bn_warmup: 100_000,
        }
    }
}

/// `BN -> [Linear -> ReLU -> BN] x k -> Linear -> log_softmax` over the
/// concatenated global state and joint action.
#[derive(Clone, Debug)]
pub struct CriticNetwork {
    input_norm: BatchNorm,
    hidden: Vec<(Linear, BatchNorm)>,
    head: Linear,
    support: ValueSupport,
    state_dim: usize,
    action_dim: usize,
}

impl CriticNetwork {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        support: ValueSupport,
        config: &CriticConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.hidden.is_empty() || config.hidden.contains(&0) {
            return Err(Error::Config(format!(
                "critic hidden widths must be non-empty and positive, got {:?}",
                config.hidden
            )));
        }
        let width = state_dim + action_dim;
        let (mom, warm) = (config.bn_momentum, config.bn_warmup);
        let input_norm = BatchNorm::new("critic.bn_in", width, mom, warm)?;
        let mut hidden = Vec::new();
        let mut fan_in = width;
        for (i, &h) in config.hidden.iter().enumerate() {
            let lin = Linear::new(&format!("critic.l{i}"), fan_in, h, rng);
            let bn = BatchNorm::new(&format!("critic.bn{i}"), h, mom, warm)?;
            hidden.push((lin, bn));
            fan_in = h;
        }
        let head = Linear::new("critic.head", fan_in, support.len(), rng);
        Ok(Self {
            input_norm,
            hidden,
            head,
            support,
            state_dim,
            action_dim,
        })
    }

    pub fn support(&self) -> &ValueSupport {
        &self.support
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn set_mode(&mut self, mode: NormMode) {
        self.input_norm.set_mode(mode);
        for (_, bn) in &mut self.hidden {
            bn.set_mode(mode);
        }
    }

    pub fn mode(&self) -> NormMode {
        self.input_norm.state.mode
    }

    pub fn norms(&self) -> Vec<&BatchNorm> {
        std::iter::once(&self.input_norm)
            .chain(self.hidden.iter().map(|(_, bn)| bn))
            .collect()
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let cols = tape.value(x).cols();
        if cols != self.state_dim + self.action_dim {
            return Err(Error::Dimension(format!(
                "critic expects {} input columns, got {cols}",
                self.state_dim + self.action_dim
            )));
        }
        Ok(())
    }

    /// Log-probabilities `[n, M]` for inputs `[n, state_dim + action_dim]` in
    /// the current mode. Training mode updates running statistics.
    pub fn forward(&mut self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var> {
        self.check_input(tape, x)?;
        let mut h = self.input_norm.forward(tape, x, frozen)?;
        for (lin, bn) in &mut self.hidden {
            let z = lin.forward(tape, h, frozen)?;
            let a = tape.relu(z);
            h = bn.forward(tape, a, frozen)?;
        }
        let logits = self.head.forward(tape, h, frozen)?;
        Ok(tape.log_softmax(logits))
    }

    /// Evaluation-mode forward pass using running statistics only.
    pub fn forward_eval(&self, tape: &mut Tape, x: Var, frozen: bool) -> Result<Var> {
        self.check_input(tape, x)?;
        let mut h = self.input_norm.forward_eval(tape, x, frozen)?;
        for (lin, bn) in &self.hidden {
            let z = lin.forward(tape, h, frozen)?;
            let a = tape.relu(z);
            h = bn.forward_eval(tape, a, frozen)?;
        }
        let logits = self.head.forward(tape, h, frozen)?;
        Ok(tape.log_softmax(logits))
    }

    /// Probabilities for `[s, a]` rows in evaluation mode.
    pub fn probs(&self, states: &DenseArray, actions: &DenseArray) -> Result<DenseArray> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone());
        let a = tape.constant(actions.clone());
        let x = tape.concat_cols(&[s, a])?;
        let lp = self.forward_eval(&mut tape, x, true)?;
        Ok(tape.value(lp).map(f64::exp))
    }
}

impl Module for CriticNetwork {
    fn params(&self) -> Vec<&Parameter> {
        let mut ps = self.input_norm.params();
        for (lin, bn) in &self.hidden {
            ps.extend(lin.params());
            ps.extend(bn.params());
        }
        ps.extend(self.head.params());
        ps
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut ps = self.input_norm.params_mut();
        for (lin, bn) in &mut self.hidden {
            ps.extend(lin.params_mut());
            ps.extend(bn.params_mut());
        }
        ps.extend(self.head.params_mut());
        ps
    }

    fn state(&self) -> Vec<(String, DenseArray)> {
        let mut out = self.input_norm.state();
        for (lin, bn) in &self.hidden {
            out.extend(lin.state());
            out.extend(bn.state());
        }
        out.extend(self.head.state());
        out
    }

    fn load_state(&mut self, ckpt: &Checkpoint) -> ndiff_core::Result<()> {
        self.input_norm.load_state(ckpt)?;
        for (lin, bn) in &mut self.hidden {
            lin.load_state(ckpt)?;
            bn.load_state(ckpt)?;
        }
        self.head.load_state(ckpt)
    }
}

/// Output of [`critic_forward_pair`]. `next` is detached from the graph.
pub struct PairOutput {
    pub current: Var,
    pub next: Var,
}

/// Runs `(s, a)` and `(s', a')` through the critic as one `2B`-row batch so
/// both halves share batch-norm statistics, then splits the result. The
/// `(s', a')` half is returned under stop-gradient.
pub fn critic_forward_pair(
    critic: &mut CriticNetwork,
    tape: &mut Tape,
    states: Var,
    actions: Var,
    next_states: Var,
    next_actions: Var,
) -> Result<PairOutput> {
    let b = tape.value(states).rows();
    let dims = [actions, next_states, next_actions].map(|v| tape.value(v).rows());
    if dims.iter().any(|&r| r != b) {
        return Err(Error::Dimension(format!(
            "pair batches differ in size: {b} vs {dims:?}"
        )));
    }
    let cur = tape.concat_cols(&[states, actions])?;
    let nxt = tape.concat_cols(&[next_states, next_actions])?;
    let joint = tape.concat_rows(&[cur, nxt])?;
    let lp = critic.forward(tape, joint, false)?;
    let current = tape.slice_rows(lp, 0, b);
    let next_live = tape.slice_rows(lp, b, 2 * b);
    let next = tape.detach(next_live);
    Ok(PairOutput { current, next })
}

/// Projected distributional targets, one row per transition.
///
/// Row `i` maps atom `z_j` to `r_i + (1 - done_i) gamma (z_j + alpha l_i)`
/// carrying `next_probs[i, j]`, then projects back onto the support.
pub fn projected_targets(
    rewards: &[f64],
    dones: &[bool],
    next_probs: &DenseArray,
    support: &ValueSupport,
    gamma: f64,
    alpha: f64,
    elbo_sums: &[f64],
) -> Result<DenseArray> {
    let (n, m) = next_probs.dims2();
    if m != support.len() || rewards.len() != n || dones.len() != n || elbo_sums.len() != n {
        return Err(Error::Dimension(format!(
            "target inputs: {n} x {m} probs, {} rewards, {} dones, {} elbo values, {} atoms",
            rewards.len(),
            dones.len(),
            elbo_sums.len(),
            support.len()
        )));
    }
    let mut out = DenseArray::zeros(&[n, m]);
    let mut shifted = vec![0.0; m];
    for i in 0..n {
        let discount = if dones[i] { 0.0 } else { gamma };
        for (s, z) in shifted.iter_mut().zip(support.atoms()) {
            *s = rewards[i] + discount * (z + alpha * elbo_sums[i]);
        }
        let row = &mut out.data_mut()[i * m..(i + 1) * m];
        project_into(&shifted, next_probs.row_slice(i), support, row);
    }
    Ok(out)
}

/// `log(1e-12)`, the floor applied to log-probabilities inside the loss.
pub const LOG_FLOOR: f64 = -27.631021115928547;

/// Batch mean of `-sum_j target_j log p_j + xi * H(p)` with `p = exp(log_probs)`.
pub fn critic_loss(tape: &mut Tape, log_probs: Var, target: &DenseArray, xi: f64) -> Result<Var> {
    let (n, m) = tape.value(log_probs).dims2();
    if target.dims2() != (n, m) {
        return Err(Error::Dimension(format!(
            "prediction {n} x {m} vs target {:?}",
            target.shape()
        )));
    }
    let lp = tape.clamp_min(log_probs, LOG_FLOOR);
    let t = tape.constant(target.clone());
    let ce_terms = tape.mul(t, lp)?;
    let ce = tape.sum_cols(ce_terms);
    let p = tape.exp(log_probs);
    let ent_terms = tape.mul(p, lp)?;
    let neg_h = tape.sum_cols(ent_terms);
    let reg = tape.scale(neg_h, xi);
    let per_row_neg = tape.add(ce, reg)?;
    let per_row = tape.neg(per_row_neg);
    Ok(tape.mean(per_row))
}

/// Plain-value version of [`critic_loss`] on probabilities.
pub fn critic_loss_value(pred_probs: &[f64], target: &[f64], xi: f64) -> f64 {
    let ce: f64 = target
        .iter()
        .zip(pred_probs)
        .map(|(t, p)| -t * p.ln().max(LOG_FLOOR))
        .sum();
    let h: f64 = pred_probs.iter().map(|p| -p * p.ln().max(LOG_FLOOR)).sum();
    ce + xi * h
}

/// Differentiable scalar action value used inside the policy loss.
pub trait ActionValue {
    /// `Q(s, a)` as an `[n, 1]` node; parameters enter as constants so only
    /// `actions` carries gradient.
    fn q_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Result<Var>;
}

impl ActionValue for CriticNetwork {
    fn q_on_tape(&self, tape: &mut Tape, states: Var, actions: Var) -> Result<Var> {
        let x = tape.concat_cols(&[states, actions])?;
        let lp = self.forward_eval(tape, x, true)?;
        let p = tape.exp(lp);
        let z = tape.constant(DenseArray::matrix(
            self.support.len(),
            1,
            self.support.atoms().to_vec(),
        ));
        Ok(tape.matmul(p, z)?)
    }
}

/// `Q(s, a) = -||a - target||^2`, independent of the state.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticCritic {
    pub target: Vec<f64>,
}

impl ActionValue for QuadraticCritic {
    fn q_on_tape(&self, tape: &mut Tape, _states: Var, actions: Var) -> Result<Var> {
        let n = tape.value(actions).rows();
        if tape.value(actions).cols() != self.target.len() {
            return Err(Error::Dimension(format!(
                "quadratic critic expects {} action columns",
                self.target.len()
            )));
        }
        let t = tape.constant(DenseArray::row(self.target.clone()));
        let neg = tape.neg(t);
        let diff = tape.add_row(actions, neg)?;
        let sq = tape.square(diff);
        let s = tape.sum_cols(sq);
        debug_assert_eq!(tape.value(s).rows(), n);
        Ok(tape.neg(s))
    }
}
