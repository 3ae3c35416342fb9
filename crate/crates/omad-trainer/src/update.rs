use diffusion_policy::{ScoreModel, ScorePolicy};
use dist_critic::{critic_forward_pair, critic_loss, projected_targets, ActionValue};
use ndiff_core::{Adam, DenseArray, Module, NormMode, Parameter, Tape, Var};
use rand::Rng;

use crate::agents::{sample_joint, AgentSet, TemperatureState};
use crate::buffer::Batch;
use crate::config::TrainerConfig;
use crate::error::{Error, Result};

/// Clamps every entry to the action box `[-1, 1]`; zero gradient outside.
pub fn clip_to_box(tape: &mut Tape, x: Var) -> Var {
    let lo = tape.clamp_min(x, -1.0);
    let flipped = tape.neg(lo);
    let hi = tape.clamp_min(flipped, -1.0);
    tape.neg(hi)
}

fn summary(xs: &[f64]) -> String {
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    format!("mean {mean:.6e} min {lo:.6e} max {hi:.6e}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticStats {
    pub loss: f64,
    /// Batch mean of the predicted `E[Z(s, a)]`.
    pub q_mean: f64,
    /// Batch mean of the joint entropy bound at the next states.
    pub next_elbo_mean: f64,
}

/// One distributional critic step on `batch`. Next actions and their entropy
/// bounds come from the target policies without gradient.
pub fn update_critic<M: ScoreModel>(
    agents: &mut AgentSet<M>,
    batch: &Batch,
    config: &TrainerConfig,
    rng: &mut impl Rng,
) -> Result<CriticStats> {
    let alpha = agents.alpha();
    let (next_actions, elbo) = sample_joint(&agents.targets, &batch.next_states, rng)?;
    let next_actions = next_actions.map(|v| v.clamp(-1.0, 1.0));

    let critic = &mut agents.critic;
    critic.set_mode(NormMode::Training);
    let mut tape = Tape::new();
    let s = tape.constant(batch.states.clone());
    let a = tape.constant(batch.actions.clone());
    let s2 = tape.constant(batch.next_states.clone());
    let a2 = tape.constant(next_actions);
    let pair = critic_forward_pair(critic, &mut tape, s, a, s2, a2);
    critic.set_mode(NormMode::Evaluation);
    let pair = pair?;

    let next_probs = tape.value(pair.next).map(f64::exp);
    let support = critic.support().clone();
    let targets = projected_targets(
        &batch.rewards,
        &batch.terminals,
        &next_probs,
        &support,
        config.gamma,
        alpha,
        &elbo,
    )?;
    let loss = critic_loss(&mut tape, pair.current, &targets, config.critic_entropy_coef)?;
    let loss_value = tape.scalar(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite {
            what: "critic loss",
            detail: format!(
                "rewards {}; next elbo {}; alpha {alpha}",
                summary(&batch.rewards),
                summary(&elbo)
            ),
        });
    }
    let probs = tape.value(pair.current).map(f64::exp);
    let (n, m) = probs.dims2();
    let q_mean = (0..n)
        .map(|i| (0..m).map(|j| probs.get(i, j) * support.atoms()[j]).sum::<f64>())
        .sum::<f64>()
        / n as f64;

    let grads = tape.backward(loss)?;
    critic.zero_grad();
    grads.accumulate(critic.params_mut());
    agents.critic_opt.step(&mut critic.params_mut())?;
    Ok(CriticStats {
        loss: loss_value,
        q_mean,
        next_elbo_mean: elbo.iter().sum::<f64>() / elbo.len() as f64,
    })
}

/// Prior draw and per-step noises for one agent's batch of chains.
pub type ChainNoise = (DenseArray, Vec<DenseArray>);

pub fn draw_policy_noise<M: ScoreModel>(
    policies: &[ScorePolicy<M>],
    n: usize,
    rng: &mut impl Rng,
) -> Vec<ChainNoise> {
    policies.iter().map(|p| p.draw_noise(n, rng)).collect()
}

/// Nodes of the joint policy objective recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct PolicyObjective {
    /// Batch mean of `-sum_i l_i - Q(s, a_0) / alpha`.
    pub loss: Var,
    /// `[n, 1]` joint entropy bound.
    pub joint_elbo: Var,
    /// `[n, 1]` action values.
    pub q: Var,
}

/// Records every agent's reparameterized chain under fixed noise, the joint
/// entropy bound and the critic's value of the clipped joint action.
pub fn policy_objective<M: ScoreModel, Q: ActionValue>(
    tape: &mut Tape,
    policies: &mut [ScorePolicy<M>],
    critic: &Q,
    states: Var,
    noise: &[ChainNoise],
    alpha: f64,
    training: bool,
    clip: bool,
) -> Result<PolicyObjective> {
    if noise.len() != policies.len() {
        return Err(Error::Config(format!(
            "{} noise sets for {} policies",
            noise.len(),
            policies.len()
        )));
    }
    let mut actions = Vec::with_capacity(policies.len());
    let mut joint_elbo: Option<Var> = None;
    for (p, (prior, noises)) in policies.iter_mut().zip(noise) {
        let chain = if training {
            p.rollout_training(tape, states, prior, noises)?
        } else {
            p.rollout(tape, states, prior, noises, false)?
        };
        let l = p.elbo_on_tape(tape, &chain)?;
        joint_elbo = Some(match joint_elbo {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
        actions.push(chain.action());
    }
    let joint_elbo = joint_elbo.expect("at least one policy");
    let joint = tape.concat_cols(&actions)?;
    let joint = if clip { clip_to_box(tape, joint) } else { joint };
    let q = critic.q_on_tape(tape, states, joint)?;
    let q_term = tape.scale(q, 1.0 / alpha);
    let reward_like = tape.add(joint_elbo, q_term)?;
    let per_row = tape.neg(reward_like);
    let loss = tape.mean(per_row);
    Ok(PolicyObjective { loss, joint_elbo, q })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyStats {
    pub loss: f64,
    pub elbo_mean: f64,
    pub q_mean: f64,
    /// Per-row joint entropy bound, detached.
    pub joint_elbo: Vec<f64>,
}

/// One synchronized step over every agent's parameters.
pub fn update_policies<M: ScoreModel, Q: ActionValue>(
    policies: &mut [ScorePolicy<M>],
    optimizer: &mut Adam,
    critic: &Q,
    states: &DenseArray,
    alpha: f64,
    clip: bool,
    rng: &mut impl Rng,
) -> Result<PolicyStats> {
    let noise = draw_policy_noise(policies, states.rows(), rng);
    let mut tape = Tape::new();
    let s = tape.constant(states.clone());
    let obj = policy_objective(&mut tape, policies, critic, s, &noise, alpha, true, clip)?;
    let loss = tape.scalar(obj.loss);
    let joint_elbo = tape.value(obj.joint_elbo).data().to_vec();
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "policy loss",
            detail: format!(
                "joint elbo {}; q {}; alpha {alpha}",
                summary(&joint_elbo),
                summary(tape.value(obj.q).data())
            ),
        });
    }
    let q_mean = tape.value(obj.q).mean();
    let grads = tape.backward(obj.loss)?;
    let mut params: Vec<&mut Parameter> = policies.iter_mut().flat_map(|p| p.params_mut()).collect();
    for p in params.iter_mut() {
        p.zero_grad();
    }
    grads.accumulate(params.iter_mut().map(|p| &mut **p));
    optimizer.step(&mut params)?;
    Ok(PolicyStats {
        loss,
        elbo_mean: joint_elbo.iter().sum::<f64>() / joint_elbo.len() as f64,
        q_mean,
        joint_elbo,
    })
}

/// One Adam step on `log alpha` that moves the joint entropy bound toward
/// `H_target`: `alpha` grows while the bound is below target and shrinks
/// above it. Returns `alpha (H_target - mean_joint_elbo)`.
pub fn update_temperature(temp: &mut TemperatureState, optimizer: &mut Adam, mean_joint_elbo: f64) -> Result<f64> {
    if !mean_joint_elbo.is_finite() {
        return Err(Error::NonFinite {
            what: "joint entropy bound",
            detail: format!("{mean_joint_elbo}"),
        });
    }
    let alpha = temp.alpha();
    let gap = temp.target_entropy - mean_joint_elbo;
    // ascent on alpha * gap, the dual of the entropy constraint
    temp.log_alpha.grad = DenseArray::full(temp.log_alpha.value.shape(), -alpha * gap);
    optimizer.step(&mut [&mut temp.log_alpha])?;
    Ok(alpha * gap)
}
