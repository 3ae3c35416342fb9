use diffusion_policy::{cosine_schedule, NoiseSchedule, ScoreNetConfig};
use dist_critic::{support_atoms, CriticConfig, ValueSupport};
use ndiff_core::AdamConfig;

use crate::error::{Error, Result};

/// Every knob of the training loop. `Default` carries the reference values;
/// [`TrainerConfig::desk`] is a reduced preset sized for toy tasks on one core.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    /// Environment steps collected with uniform random actions.
    pub warmup_steps: u64,
    /// Learning starts once the buffer holds more transitions than this.
    pub learning_starts: usize,
    /// Target blend: `theta' <- rho theta' + (1 - rho) theta`.
    pub rho: f64,
    pub gamma: f64,
    pub policy_delay: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub init_alpha: f64,
    /// `None` means `4 * joint action dimension`.
    pub target_entropy: Option<f64>,
    pub n_atoms: usize,
    pub v_max: f64,
    /// Weight of the predicted-distribution entropy in the critic loss.
    pub critic_entropy_coef: f64,
    pub bn_momentum: f64,
    pub bn_warmup: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub grad_clip: Option<f64>,
    pub diffusion_steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub eta: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// `None` reuses the actor rate.
    pub temperature_lr: Option<f64>,
    pub actor_hidden: Vec<usize>,
    pub time_dim: usize,
    pub actor_state_norm: bool,
    pub critic_hidden: Vec<usize>,
    /// Repetitions of the per-episode update block.
    pub updates_per_episode: usize,
    /// Clamp policy actions to the box before the critic sees them in the
    /// policy objective. Without it, gradients also reach actions outside
    /// the box.
    pub clip_policy_actions: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 60_000,
            learning_starts: 5_000,
            rho: 0.0,
            gamma: 0.99,
            policy_delay: 3,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            init_alpha: 1.0,
            target_entropy: None,
            n_atoms: 101,
            v_max: 200.0,
            critic_entropy_coef: 0.005,
            bn_momentum: 0.99,
            bn_warmup: 100_000,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            grad_clip: Some(1.0),
            diffusion_steps: 8,
            beta_min: 1e-3,
            beta_max: 0.9999,
            eta: 1.0,
            actor_lr: 3.5e-5,
            critic_lr: 3.5e-5,
            temperature_lr: None,
            actor_hidden: vec![256, 256],
            time_dim: 256,
            actor_state_norm: true,
            critic_hidden: vec![2048, 2048],
            updates_per_episode: 1,
            clip_policy_actions: true,
        }
    }
}

impl TrainerConfig {
    /// Smaller networks, shorter warmup and faster rates for the built-in toy
    /// tasks.
    pub fn desk() -> Self {
        Self {
            warmup_steps: 2_000,
            learning_starts: 1_000,
            gamma: 0.9,
            buffer_capacity: 100_000,
            init_alpha: 0.1,
            v_max: 40.0,
            bn_warmup: 5_000,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            temperature_lr: Some(3e-3),
            actor_hidden: vec![64, 64],
            time_dim: 16,
            critic_hidden: vec![128, 128],
            updates_per_episode: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return bad(format!("rho must lie in [0, 1], got {}", self.rho));
        }
        if self.policy_delay == 0 {
            return bad("policy_delay must be at least 1".into());
        }
        if self.batch_size == 0 || self.buffer_capacity == 0 {
            return bad("batch_size and buffer_capacity must be positive".into());
        }
        if !(self.init_alpha > 0.0) || !self.init_alpha.is_finite() {
            return bad(format!("init_alpha must be positive, got {}", self.init_alpha));
        }
        if let Some(h) = self.target_entropy {
            if !h.is_finite() {
                return bad("target_entropy must be finite".into());
            }
        }
        if self.n_atoms < 2 || !(self.v_max > 0.0) {
            return bad(format!(
                "need at least 2 atoms and v_max > 0, got {} / {}",
                self.n_atoms, self.v_max
            ));
        }
        if !self.critic_entropy_coef.is_finite() {
            return bad("critic_entropy_coef must be finite".into());
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return bad(format!("bn_momentum must lie in [0, 1), got {}", self.bn_momentum));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        let rates = [Some(self.actor_lr), Some(self.critic_lr), self.temperature_lr];
        if rates.iter().flatten().any(|lr| !(*lr > 0.0) || !lr.is_finite()) {
            return bad("learning rates must be positive".into());
        }
        if self.updates_per_episode == 0 {
            return bad("updates_per_episode must be at least 1".into());
        }
        if self.actor_hidden.is_empty() || self.actor_hidden.contains(&0) {
            return bad(format!("bad actor_hidden {:?}", self.actor_hidden));
        }
        if self.critic_hidden.is_empty() || self.critic_hidden.contains(&0) {
            return bad(format!("bad critic_hidden {:?}", self.critic_hidden));
        }
        if self.time_dim == 0 || self.time_dim % 2 != 0 {
            return bad(format!("time_dim must be even and positive, got {}", self.time_dim));
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        Ok(cosine_schedule(
            self.diffusion_steps,
            self.beta_min,
            self.beta_max,
            self.eta,
        )?)
    }

    pub fn support(&self) -> Result<ValueSupport> {
        Ok(support_atoms(self.v_max, self.n_atoms)?)
    }

    pub fn target_entropy_for(&self, joint_action_dim: usize) -> f64 {
        self.target_entropy
            .unwrap_or(4.0 * joint_action_dim as f64)
    }

    pub fn score_net(&self) -> ScoreNetConfig {
        ScoreNetConfig {
            hidden: self.actor_hidden.clone(),
            time_dim: self.time_dim,
            state_norm: self.actor_state_norm,
            bn_momentum: self.bn_momentum,
            bn_warmup: self.bn_warmup,
        }
    }

    pub fn critic_net(&self) -> CriticConfig {
        CriticConfig {
            hidden: self.critic_hidden.clone(),
            bn_momentum: self.bn_momentum,
            bn_warmup: self.bn_warmup,
        }
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            clip_norm: self.grad_clip,
            ..AdamConfig::default()
        }
    }

    pub fn actor_adam(&self) -> AdamConfig {
        self.adam(self.actor_lr)
    }

    pub fn critic_adam(&self) -> AdamConfig {
        self.adam(self.critic_lr)
    }

    pub fn temperature_adam(&self) -> AdamConfig {
        self.adam(self.temperature_lr.unwrap_or(self.actor_lr))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainerConfig::default().validate().unwrap();
        TrainerConfig::desk().validate().unwrap();
    }

    #[test]
    fn rejects_bad_gamma() {
        let cfg = TrainerConfig {
            gamma: 1.5,
            ..TrainerConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn target_entropy_default_scales_with_action_dim() {
        assert_eq!(TrainerConfig::default().target_entropy_for(4), 16.0);
        let cfg = TrainerConfig {
            target_entropy: Some(-2.0),
            ..TrainerConfig::default()
        };
        assert_eq!(cfg.target_entropy_for(4), -2.0);
    }
}
