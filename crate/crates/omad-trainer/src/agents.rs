use diffusion_policy::{ScoreModel, ScoreNet, ScorePolicy};
use dist_critic::CriticNetwork;
use marl_envs::EnvSpec;
use ndiff_core::{Adam, Checkpoint, DenseArray, Module, Parameter};
use rand::Rng;

use crate::config::TrainerConfig;
use crate::error::{Error, Result};

/// Learnable temperature, stored as `log alpha` so `alpha > 0` always.
#[derive(Clone, Debug)]
pub struct TemperatureState {
    pub log_alpha: Parameter,
    pub target_entropy: f64,
}

impl TemperatureState {
    pub fn new(init_alpha: f64, target_entropy: f64) -> Result<Self> {
        if !(init_alpha > 0.0) {
            return Err(Error::Config(format!("initial alpha must be positive, got {init_alpha}")));
        }
        Ok(Self {
            log_alpha: Parameter::new("temperature.log_alpha", DenseArray::scalar(init_alpha.ln())),
            target_entropy,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.value.data()[0].exp()
    }
}

/// Online and target policies per agent, the joint critic, the temperature
/// and one optimizer for each.
#[derive(Clone, Debug)]
pub struct AgentSet<M = ScoreNet> {
    pub policies: Vec<ScorePolicy<M>>,
    pub targets: Vec<ScorePolicy<M>>,
    pub critic: CriticNetwork,
    pub temperature: TemperatureState,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub temperature_opt: Adam,
}

/// Which copy of the policies acts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Acting {
    Online,
    Target,
}

impl AgentSet<ScoreNet> {
    pub fn new(spec: &EnvSpec, config: &TrainerConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let schedule = config.schedule()?;
        let net_cfg = config.score_net();
        let policies = (0..spec.n_agents)
            .map(|i| {
                let net = ScoreNet::new(&format!("pi{i}"), spec.state_dim, spec.action_dim, &net_cfg, rng)?;
                Ok(ScorePolicy::new(i, net, schedule.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let critic = CriticNetwork::new(
            spec.state_dim,
            spec.joint_action_dim(),
            config.support()?,
            &config.critic_net(),
            rng,
        )?;
        Self::from_parts(policies, critic, config)
    }
}

impl<M: ScoreModel + Clone> AgentSet<M> {
    /// Targets start as exact copies of `policies`.
    pub fn from_parts(policies: Vec<ScorePolicy<M>>, critic: CriticNetwork, config: &TrainerConfig) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::Config("need at least one agent".into()));
        }
        let joint: usize = policies.iter().map(|p| p.action_dim()).sum();
        if joint != critic.action_dim() {
            return Err(Error::Config(format!(
                "policies emit {joint} action columns, critic expects {}",
                critic.action_dim()
            )));
        }
        let targets = policies.clone();
        Ok(Self {
            policies,
            targets,
            critic,
            temperature: TemperatureState::new(config.init_alpha, config.target_entropy_for(joint))?,
            actor_opt: Adam::new(config.actor_adam()),
            critic_opt: Adam::new(config.critic_adam()),
            temperature_opt: Adam::new(config.temperature_adam()),
        })
    }
}

impl<M: ScoreModel> AgentSet<M> {
    pub fn n_agents(&self) -> usize {
        self.policies.len()
    }

    pub fn joint_action_dim(&self) -> usize {
        self.policies.iter().map(|p| p.action_dim()).sum()
    }

    pub fn alpha(&self) -> f64 {
        self.temperature.alpha()
    }

    pub fn acting(&self, which: Acting) -> &[ScorePolicy<M>] {
        match which {
            Acting::Online => &self.policies,
            Acting::Target => &self.targets,
        }
    }

    /// Joint actions `a_0` (unclipped) and the per-row sum of per-agent
    /// entropy bounds, without gradient.
    pub fn sample_joint(&self, which: Acting, states: &DenseArray, rng: &mut impl Rng) -> Result<(DenseArray, Vec<f64>)> {
        sample_joint(self.acting(which), states, rng)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for p in &self.policies {
            ckpt.extend(p.state());
        }
        for p in &self.targets {
            ckpt.extend(p.state().into_iter().map(|(k, v)| (format!("target.{k}"), v)));
        }
        ckpt.extend(self.critic.state());
        ckpt.insert(self.temperature.log_alpha.name(), self.temperature.log_alpha.value.clone());
        ckpt
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for p in &mut self.policies {
            p.load_state(ckpt)?;
        }
        let mut target_view = Checkpoint::new();
        target_view.extend(
            ckpt.entries()
                .iter()
                .filter_map(|(k, v)| k.strip_prefix("target.").map(|k| (k.to_string(), v.clone()))),
        );
        for p in &mut self.targets {
            p.load_state(&target_view)?;
        }
        self.critic.load_state(ckpt)?;
        let la = ckpt.get_shaped(self.temperature.log_alpha.name(), self.temperature.log_alpha.value.shape())?;
        self.temperature.log_alpha.value = la.clone();
        Ok(())
    }
}

/// Horizontal concatenation of equally tall matrices.
pub fn concat_cols(parts: &[DenseArray]) -> Result<DenseArray> {
    let rows = parts.first().map(|p| p.rows()).unwrap_or(0);
    if parts.iter().any(|p| p.rows() != rows) {
        return Err(Error::Config("column blocks differ in height".into()));
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row_slice(r));
        }
    }
    Ok(DenseArray::matrix(rows, cols, data))
}

pub fn sample_joint<M: ScoreModel>(
    policies: &[ScorePolicy<M>],
    states: &DenseArray,
    rng: &mut impl Rng,
) -> Result<(DenseArray, Vec<f64>)> {
    let mut actions = Vec::with_capacity(policies.len());
    let mut total = vec![0.0; states.rows()];
    for p in policies {
        let (traj, l) = p.sample_with_elbo(states, rng)?;
        for (t, v) in total.iter_mut().zip(&l) {
            *t += v;
        }
        actions.push(traj.action().clone());
    }
    Ok((concat_cols(&actions)?, total))
}

/// `target <- rho target + (1 - rho) source`, parameters and running
/// statistics alike.
pub fn blend_into<M: Module>(target: &mut M, source: &M, rho: f64) -> Result<()> {
    let src = source.state();
    let dst = target.state();
    if src.len() != dst.len() {
        return Err(Error::Config(format!(
            "target has {} tensors, source {}",
            dst.len(),
            src.len()
        )));
    }
    let mut ckpt = Checkpoint::new();
    for ((dn, dv), (sn, sv)) in dst.into_iter().zip(src) {
        if dn != sn || dv.shape() != sv.shape() {
            return Err(Error::Config(format!(
                "target tensor {dn} {:?} does not match {sn} {:?}",
                dv.shape(),
                sv.shape()
            )));
        }
        let value = if rho == 0.0 {
            sv
        } else {
            let data = dv
                .data()
                .iter()
                .zip(sv.data())
                .map(|(t, s)| rho * t + (1.0 - rho) * s)
                .collect();
            DenseArray::new(dv.shape().to_vec(), data)?
        };
        ckpt.insert(dn, value);
    }
    target.load_state(&ckpt)?;
    Ok(())
}

pub fn update_targets<M: Module>(targets: &mut [M], online: &[M], rho: f64) -> Result<()> {
    if targets.len() != online.len() {
        return Err(Error::Config("target and online agent counts differ".into()));
    }
    for (t, o) in targets.iter_mut().zip(online) {
        blend_into(t, o, rho)?;
    }
    Ok(())
}
