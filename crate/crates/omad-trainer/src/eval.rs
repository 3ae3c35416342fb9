use diffusion_policy::{ScoreModel, ScorePolicy};
use marl_envs::{Controller, Environment};
use ndiff_core::DenseArray;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Acts with a set of policies in stochastic sampling mode, normalization in
/// evaluation mode.
pub struct PolicyController<'a, M> {
    policies: &'a [ScorePolicy<M>],
    rng: ChaCha8Rng,
    error: Option<Error>,
}

impl<'a, M: ScoreModel> PolicyController<'a, M> {
    pub fn new(policies: &'a [ScorePolicy<M>], seed: u64) -> Self {
        Self {
            policies,
            rng: ChaCha8Rng::seed_from_u64(seed),
            error: None,
        }
    }

    /// The first sampling failure, if any. Failed steps emit zero actions.
    pub fn take_error(&mut self) -> Option<Error> {
        self.error.take()
    }

    pub fn try_act(&mut self, state: &[f64]) -> Result<Vec<f64>> {
        let s = DenseArray::row(state.to_vec());
        let mut out = Vec::new();
        for p in self.policies {
            out.extend(p.sample(&s, &mut self.rng)?.action().data());
        }
        Ok(out)
    }
}

impl<M: ScoreModel> Controller for PolicyController<'_, M> {
    fn begin(&mut self, _state: &[f64]) {}

    fn act(&mut self, state: &[f64]) -> Vec<f64> {
        match self.try_act(state) {
            Ok(a) => a,
            Err(e) => {
                let dim = self.policies.iter().map(|p| p.action_dim()).sum();
                self.error.get_or_insert(e);
                vec![0.0; dim]
            }
        }
    }
}

/// Mean and population standard deviation of `values`.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Episode returns of `controller` on the episodes seeded `seed, seed + 1, ...`.
pub fn episode_returns(
    env: &mut impl Environment,
    controller: &mut impl Controller,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..n_episodes as u64)
        .map(|k| Ok(marl_envs::rollout_return(env, controller, seed.wrapping_add(k))?))
        .collect()
}

/// Mean and standard deviation of the policies' return over `n_episodes`.
pub fn evaluate<M: ScoreModel>(
    env: &mut impl Environment,
    policies: &[ScorePolicy<M>],
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let joint: usize = policies.iter().map(|p| p.action_dim()).sum();
    if joint != env.spec().joint_action_dim() || policies.first().map(|p| p.state_dim()) != Some(env.spec().state_dim) {
        return Err(Error::Config(
            "policies do not match the environment's state or action size".into(),
        ));
    }
    let mut ctl = PolicyController::new(policies, seed);
    let returns = episode_returns(env, &mut ctl, n_episodes, seed)?;
    if let Some(e) = ctl.take_error() {
        return Err(e);
    }
    Ok(mean_std(&returns))
}
