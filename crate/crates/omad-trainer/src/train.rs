use diffusion_policy::{ScoreModel, ScoreNet};
use marl_envs::{CoverageGrid, Environment};
use ndiff_core::DenseArray;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{sample_joint, update_targets, AgentSet};
use crate::buffer::{ReplayBuffer, Transition};
use crate::config::TrainerConfig;
use crate::error::{Error, Result};
use crate::update::{update_critic, update_policies, update_temperature};

/// One entry of the instrumented update log, tagged with the 1-based
/// episode index it ran in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateEvent {
    Critic(u64),
    Policy(u64),
    Temperature(u64),
    Targets(u64),
}

/// Most recent value of each training signal.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub temperature_loss: Option<f64>,
    pub joint_elbo: Option<f64>,
    pub q_mean: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpisodeReport {
    pub episode: u64,
    pub env_steps: u64,
    pub episode_return: f64,
    pub learned: bool,
}

/// Counters for each kind of gradient step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct UpdateCounts {
    pub critic: u64,
    pub policy: u64,
    pub temperature: u64,
    pub targets: u64,
}

/// The episode loop: collect with the target policies, then run the update
/// block once the buffer is warm.
pub struct Trainer<E, M = ScoreNet> {
    pub config: TrainerConfig,
    pub env: E,
    pub agents: AgentSet<M>,
    pub buffer: ReplayBuffer,
    pub coverage: Option<CoverageGrid>,
    pub stats: TrainStats,
    pub counts: UpdateCounts,
    /// Filled only when `instrument` is set.
    pub log: Vec<UpdateEvent>,
    pub instrument: bool,
    rng: ChaCha8Rng,
    episode: u64,
    env_steps: u64,
}

impl<E: Environment> Trainer<E, ScoreNet> {
    pub fn new(config: TrainerConfig, env: E, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = AgentSet::new(env.spec(), &config, &mut rng)?;
        Self::with_agents(config, env, agents, rng)
    }
}

impl<E: Environment, M: ScoreModel + Clone> Trainer<E, M> {
    pub fn with_agents(config: TrainerConfig, env: E, agents: AgentSet<M>, rng: ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let spec = env.spec();
        if agents.joint_action_dim() != spec.joint_action_dim() || agents.n_agents() != spec.n_agents {
            return Err(Error::Config(format!(
                "agents emit {} action columns over {} agents, environment expects {} over {}",
                agents.joint_action_dim(),
                agents.n_agents(),
                spec.joint_action_dim(),
                spec.n_agents
            )));
        }
        Ok(Self {
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            config,
            env,
            agents,
            coverage: None,
            stats: TrainStats::default(),
            counts: UpdateCounts::default(),
            log: Vec::new(),
            instrument: false,
            rng,
            episode: 0,
            env_steps: 0,
        })
    }

    /// Episodes completed so far.
    pub fn episode(&self) -> u64 {
        self.episode
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn joint_action(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        let dim = self.agents.joint_action_dim();
        if self.env_steps < self.config.warmup_steps {
            return Ok((0..dim).map(|_| self.rng.random_range(-1.0..=1.0)).collect());
        }
        let s = DenseArray::row(state.to_vec());
        let mut actions = Vec::with_capacity(dim);
        for p in &self.agents.targets {
            actions.extend(p.sample(&s, &mut self.rng)?.action().data());
        }
        Ok(actions)
    }

    /// Runs one episode and appends its transitions to the buffer. Returns
    /// the undiscounted return.
    pub fn collect_episode(&mut self) -> Result<f64> {
        let seed = self.rng.random::<u64>();
        let mut state = self.env.reset(seed);
        let mut total = 0.0;
        loop {
            if let Some(g) = &mut self.coverage {
                g.update(&state)?;
            }
            let raw = self.joint_action(&state)?;
            let action: Vec<f64> = raw
                .iter()
                .map(|a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) })
                .collect();
            let out = self.env.step(&action)?;
            self.env_steps += 1;
            total += out.reward;
            let done = out.done;
            self.buffer.push(Transition {
                state,
                action,
                reward: out.reward,
                next_state: out.state.clone(),
                done,
                time_limit: done,
            })?;
            state = out.state;
            if done {
                if let Some(g) = &mut self.coverage {
                    g.update(&state)?;
                }
                return Ok(total);
            }
        }
    }

    fn record(&mut self, e: UpdateEvent) {
        if self.instrument {
            self.log.push(e);
        }
    }

    /// The update block for episode `m`: critic, gated policy, temperature,
    /// targets.
    fn learn(&mut self, m: u64) -> Result<()> {
        let cfg = self.config.clone();
        let batch = self.buffer.sample(cfg.batch_size, &mut self.rng)?;
        let c = update_critic(&mut self.agents, &batch, &cfg, &mut self.rng)?;
        self.counts.critic += 1;
        self.stats.critic_loss = Some(c.loss);
        self.stats.q_mean = Some(c.q_mean);
        self.record(UpdateEvent::Critic(m));

        let alpha = self.agents.alpha();
        let mut joint_elbo = None;
        if m % cfg.policy_delay == 0 {
            let agents = &mut self.agents;
            let p = update_policies(
                &mut agents.policies,
                &mut agents.actor_opt,
                &agents.critic,
                &batch.states,
                alpha,
                cfg.clip_policy_actions,
                &mut self.rng,
            )?;
            self.counts.policy += 1;
            self.stats.policy_loss = Some(p.loss);
            joint_elbo = Some(p.elbo_mean);
            self.record(UpdateEvent::Policy(m));
        }

        let elbo = match joint_elbo {
            Some(v) => v,
            None => {
                let (_, l) = sample_joint(&self.agents.policies, &batch.states, &mut self.rng)?;
                l.iter().sum::<f64>() / l.len() as f64
            }
        };
        let agents = &mut self.agents;
        let t = update_temperature(&mut agents.temperature, &mut agents.temperature_opt, elbo)?;
        self.counts.temperature += 1;
        self.stats.temperature_loss = Some(t);
        self.stats.joint_elbo = Some(elbo);
        self.record(UpdateEvent::Temperature(m));

        update_targets(&mut self.agents.targets, &self.agents.policies, cfg.rho)?;
        self.counts.targets += 1;
        self.record(UpdateEvent::Targets(m));
        Ok(())
    }

    /// Collects one episode, then updates if the buffer holds more than
    /// `learning_starts` transitions.
    pub fn run_episode(&mut self) -> Result<EpisodeReport> {
        self.episode += 1;
        let m = self.episode;
        let episode_return = self.collect_episode()?;
        let learned = self.buffer.len() > self.config.learning_starts;
        if learned {
            for _ in 0..self.config.updates_per_episode {
                self.learn(m)?;
            }
        }
        Ok(EpisodeReport {
            episode: m,
            env_steps: self.env_steps,
            episode_return,
            learned,
        })
    }

    /// Runs `episodes` episodes, calling `after` with each report. `after`
    /// may stop the loop early by returning `false`.
    pub fn train(
        &mut self,
        episodes: u64,
        mut after: impl FnMut(&mut Self, &EpisodeReport) -> Result<bool>,
    ) -> Result<()> {
        for _ in 0..episodes {
            let report = self.run_episode()?;
            if !after(self, &report)? {
                break;
            }
        }
        Ok(())
    }
}
