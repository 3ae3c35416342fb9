use std::f64::consts::PI;

use ndiff_core::{DenseArray, Module, Parameter, Tape, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreModel;

/// A per-agent diffusion policy: a score model driving the reverse SDE.
#[derive(Clone, Debug)]
pub struct ScorePolicy<M> {
    pub agent_id: usize,
    pub net: M,
    pub schedule: NoiseSchedule,
}

/// A batch of reverse chains together with the draws that produced them.
///
/// `chain` runs `a_H, a_{H-1}, ..., a_0`; `noises[k]` is the draw added on the
/// step from `chain[k]` to `chain[k + 1]`. Every entry is `[n, action_dim]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTrajectory {
    pub states: DenseArray,
    pub chain: Vec<DenseArray>,
    pub noises: Vec<DenseArray>,
    pub schedule: NoiseSchedule,
}

impl DiffusionTrajectory {
    pub fn prior_draw(&self) -> &DenseArray {
        &self.chain[0]
    }

    /// The emitted action `a_0`.
    pub fn action(&self) -> &DenseArray {
        self.chain.last().expect("chain is never empty")
    }

    /// `a_h` for `h` in `0..=H`.
    pub fn iterate(&self, h: usize) -> &DenseArray {
        &self.chain[self.schedule.steps() - h]
    }

    /// The draw `xi_h` used on the step `a_h -> a_{h-1}`.
    pub fn noise(&self, h: usize) -> &DenseArray {
        &self.noises[self.schedule.steps() - h]
    }
}

/// A reverse chain recorded on a tape. `iterates[h]` is `a_h` and
/// `reverse_means[h - 1]` is the mean of `a_{h-1}` given `a_h`.
#[derive(Clone, Debug)]
pub struct TapeChain {
    pub iterates: Vec<Var>,
    pub reverse_means: Vec<Var>,
}

impl TapeChain {
    pub fn action(&self) -> Var {
        self.iterates[0]
    }
}

/// Row-wise `log N(x; x - diff, var I)` as an `[n, 1]` node.
pub fn log_normal_rows(tape: &mut Tape, diff: Var, var: f64) -> Var {
    let d = tape.value(diff).cols() as f64;
    let sq = tape.square(diff);
    let s = tape.sum_cols(sq);
    let scaled = tape.scale(s, -0.5 / var);
    tape.add_scalar(scaled, -0.5 * d * (2.0 * PI * var).ln())
}

fn gaussian(rows: usize, cols: usize, sd: f64, rng: &mut impl Rng) -> DenseArray {
    DenseArray::matrix(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    )
}

impl<M: ScoreModel> ScorePolicy<M> {
    pub fn new(agent_id: usize, net: M, schedule: NoiseSchedule) -> Self {
        Self {
            agent_id,
            net,
            schedule,
        }
    }

    pub fn action_dim(&self) -> usize {
        self.net.action_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.net.state_dim()
    }

    /// Prior draw and per-step noises for `n` chains, in trajectory order.
    pub fn draw_noise(&self, n: usize, rng: &mut impl Rng) -> (DenseArray, Vec<DenseArray>) {
        let d = self.action_dim();
        let prior = gaussian(n, d, self.schedule.eta(), rng);
        let noises = (1..=self.schedule.steps())
            .rev()
            .map(|h| gaussian(n, d, self.schedule.variance(h).sqrt(), rng))
            .collect();
        (prior, noises)
    }

    fn reverse_mean(&self, tape: &mut Tape, ctx: &M::Context, a: Var, h: usize) -> Result<Var> {
        let f = self.net.score(tape, ctx, a, self.schedule.time(h))?;
        let bad = tape.value(f).data().iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(Error::NonFiniteScore { step: h, count: bad });
        }
        let bd = self.schedule.beta(h) * self.schedule.delta();
        let eta2 = self.schedule.prior_variance();
        let drift_a = tape.scale(a, 1.0 + bd);
        let drift_f = tape.scale(f, 2.0 * eta2 * bd);
        Ok(tape.add(drift_a, drift_f)?)
    }

    /// Runs the reverse chain on `tape` from a fixed prior draw and noises.
    /// Noises enter as constants, so the chain is differentiable in the
    /// score parameters. Normalization layers use running statistics.
    pub fn rollout(
        &self,
        tape: &mut Tape,
        states: Var,
        prior: &DenseArray,
        noises: &[DenseArray],
        frozen: bool,
    ) -> Result<TapeChain> {
        self.check_noises(noises)?;
        let ctx = self.net.bind(tape, states, frozen)?;
        self.rollout_with(tape, &ctx, prior, noises)
    }

    /// [`ScorePolicy::rollout`] with normalization layers in training mode.
    pub fn rollout_training(
        &mut self,
        tape: &mut Tape,
        states: Var,
        prior: &DenseArray,
        noises: &[DenseArray],
    ) -> Result<TapeChain> {
        self.check_noises(noises)?;
        let ctx = self.net.bind_training(tape, states, false)?;
        self.rollout_with(tape, &ctx, prior, noises)
    }

    fn check_noises(&self, noises: &[DenseArray]) -> Result<()> {
        let steps = self.schedule.steps();
        if noises.len() != steps {
            return Err(Error::Config(format!(
                "expected {steps} noise draws, got {}",
                noises.len()
            )));
        }
        Ok(())
    }

    fn rollout_with(
        &self,
        tape: &mut Tape,
        ctx: &M::Context,
        prior: &DenseArray,
        noises: &[DenseArray],
    ) -> Result<TapeChain> {
        let steps = self.schedule.steps();
        let mut iterates = vec![tape.constant(prior.clone())];
        let mut reverse_means = Vec::with_capacity(steps);
        for (k, h) in (1..=steps).rev().enumerate() {
            let a_h = *iterates.last().unwrap();
            let mean = self.reverse_mean(tape, ctx, a_h, h)?;
            let xi = tape.constant(noises[k].clone());
            iterates.push(tape.add(mean, xi)?);
            reverse_means.push(mean);
        }
        iterates.reverse();
        reverse_means.reverse();
        Ok(TapeChain {
            iterates,
            reverse_means,
        })
    }

    /// Per-row entropy lower bound `l` as an `[n, 1]` node:
    /// `sum_h log q_fwd(a_h | a_{h-1}) - log N(a_H; 0, eta^2) - sum_h log q_rev(a_{h-1} | a_h)`.
    pub fn elbo_on_tape(&self, tape: &mut Tape, chain: &TapeChain) -> Result<Var> {
        let steps = self.schedule.steps();
        let a_top = chain.iterates[steps];
        let mut total = log_normal_rows(tape, a_top, self.schedule.prior_variance());
        total = tape.neg(total);
        for h in 1..=steps {
            let var = self.schedule.variance(h);
            let (prev, cur) = (chain.iterates[h - 1], chain.iterates[h]);
            let fwd_mean = tape.scale(prev, self.schedule.forward_coeff(h));
            let fwd_diff = tape.sub(cur, fwd_mean)?;
            let fwd = log_normal_rows(tape, fwd_diff, var);
            let rev_diff = tape.sub(prev, chain.reverse_means[h - 1])?;
            let rev = log_normal_rows(tape, rev_diff, var);
            let ratio = tape.sub(fwd, rev)?;
            total = tape.add(total, ratio)?;
        }
        Ok(total)
    }

    fn run(
        &self,
        states: &DenseArray,
        prior: DenseArray,
        noises: Vec<DenseArray>,
        with_elbo: bool,
    ) -> Result<(DiffusionTrajectory, Option<Vec<f64>>)> {
        let mut tape = Tape::new();
        let s = tape.constant(states.clone());
        let chain = self.rollout(&mut tape, s, &prior, &noises, true)?;
        let elbo = if with_elbo {
            let l = self.elbo_on_tape(&mut tape, &chain)?;
            Some(tape.value(l).data().to_vec())
        } else {
            None
        };
        let chain_values = chain
            .iterates
            .iter()
            .rev()
            .map(|&v| tape.value(v).clone())
            .collect();
        Ok((
            DiffusionTrajectory {
                states: states.clone(),
                chain: chain_values,
                noises,
                schedule: self.schedule.clone(),
            },
            elbo,
        ))
    }

    /// Samples one chain per state row.
    pub fn sample(&self, states: &DenseArray, rng: &mut impl Rng) -> Result<DiffusionTrajectory> {
        let (prior, noises) = self.draw_noise(states.rows(), rng);
        Ok(self.run(states, prior, noises, false)?.0)
    }

    /// Samples and evaluates the per-row entropy bound on the same tape.
    pub fn sample_with_elbo(
        &self,
        states: &DenseArray,
        rng: &mut impl Rng,
    ) -> Result<(DiffusionTrajectory, Vec<f64>)> {
        let (prior, noises) = self.draw_noise(states.rows(), rng);
        let (traj, elbo) = self.run(states, prior, noises, true)?;
        Ok((traj, elbo.expect("requested")))
    }

    /// Single-state convenience returning `a_0`.
    pub fn act(&self, state: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        let traj = self.sample(&DenseArray::row(state.to_vec()), rng)?;
        Ok(traj.action().data().to_vec())
    }

    /// Regenerates a chain from its states, prior draw and noises.
    pub fn replay(&self, traj: &DiffusionTrajectory) -> Result<DiffusionTrajectory> {
        if traj.schedule != self.schedule {
            return Err(Error::ScheduleMismatch);
        }
        Ok(self
            .run(&traj.states, traj.prior_draw().clone(), traj.noises.clone(), false)?
            .0)
    }

    /// One reverse step `a_h -> a_{h-1}` with supplied noise `xi`.
    pub fn reverse_step(
        &self,
        states: &DenseArray,
        a_h: &DenseArray,
        h: usize,
        xi: &DenseArray,
    ) -> Result<DenseArray> {
        if h == 0 || h > self.schedule.steps() {
            return Err(Error::Config(format!(
                "step {h} outside 1..={}",
                self.schedule.steps()
            )));
        }
        let mut tape = Tape::new();
        let s = tape.constant(states.clone());
        let ctx = self.net.bind(&mut tape, s, true)?;
        let a = tape.constant(a_h.clone());
        let mean = self.reverse_mean(&mut tape, &ctx, a, h)?;
        let xi = tape.constant(xi.clone());
        let out = tape.add(mean, xi)?;
        Ok(tape.value(out).clone())
    }
}

/// Single-sample entropy lower bound per chain in `traj`, evaluated from the
/// stored iterates.
pub fn elbo_entropy<M: ScoreModel>(traj: &DiffusionTrajectory, policy: &ScorePolicy<M>) -> Result<Vec<f64>> {
    if traj.schedule != policy.schedule || traj.chain.len() != policy.schedule.steps() + 1 {
        return Err(Error::ScheduleMismatch);
    }
    let mut tape = Tape::new();
    let s = tape.constant(traj.states.clone());
    let ctx = policy.net.bind(&mut tape, s, true)?;
    let steps = policy.schedule.steps();
    let iterates: Vec<Var> = (0..=steps)
        .map(|h| tape.constant(traj.iterate(h).clone()))
        .collect();
    let mut reverse_means = Vec::with_capacity(steps);
    for h in 1..=steps {
        reverse_means.push(policy.reverse_mean(&mut tape, &ctx, iterates[h], h)?);
    }
    let chain = TapeChain {
        iterates,
        reverse_means,
    };
    let l = policy.elbo_on_tape(&mut tape, &chain)?;
    Ok(tape.value(l).data().to_vec())
}

impl<M: Module> Module for ScorePolicy<M> {
    fn params(&self) -> Vec<&Parameter> {
        self.net.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.net.params_mut()
    }

    fn state(&self) -> Vec<(String, DenseArray)> {
        self.net.state()
    }

    fn load_state(&mut self, ckpt: &ndiff_core::Checkpoint) -> ndiff_core::Result<()> {
        self.net.load_state(ckpt)
    }
}
