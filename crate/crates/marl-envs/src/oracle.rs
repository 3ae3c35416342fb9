use crate::env::{make_env, EnvConfig, EnvKind, EnvSpec, Environment, LINE_TARGETS};
use crate::error::{Error, Result};

/// A joint-action controller driven by the global state.
pub trait Controller {
    /// Called with the initial state of each episode.
    fn begin(&mut self, state: &[f64]);

    fn act(&mut self, state: &[f64]) -> Vec<f64>;
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let n = used.len();
        if prefix.len() == n {
            out.push(prefix.clone());
            return;
        }
        for i in 0..n {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Assignment `sigma` minimizing `sum_i cost(i, sigma(i))`; ties keep the
/// lexicographically first permutation.
pub fn best_assignment(n: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    let mut best = (f64::INFINITY, Vec::new());
    for perm in permutations(n) {
        let c: f64 = perm.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
        if c < best.0 {
            best = (c, perm);
        }
    }
    best.1
}

/// Greedy scripted controller: fix the optimal agent-to-target matching at
/// the start of the episode and steer each agent to its target.
#[derive(Clone, Debug)]
pub struct ScriptedOracle {
    spec: EnvSpec,
    assignment: Vec<usize>,
    pub kp: f64,
    pub kd: f64,
}

impl ScriptedOracle {
    pub fn new(spec: &EnvSpec) -> Result<Self> {
        if spec.n_agents > 4 {
            return Err(Error::Unsupported(format!(
                "brute-force matching over {} agents",
                spec.n_agents
            )));
        }
        Ok(Self {
            spec: spec.clone(),
            assignment: (0..spec.n_agents).collect(),
            kp: 9.0,
            kd: 5.0,
        })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    fn targets(&self, state: &[f64]) -> Vec<[f64; 2]> {
        match self.spec.kind {
            EnvKind::CoopNav => {
                let n = self.spec.n_agents;
                (0..n)
                    .map(|j| [state[4 * n + 2 * j], state[4 * n + 2 * j + 1]])
                    .collect()
            }
            EnvKind::LineSpread => LINE_TARGETS.iter().map(|&t| [t, 0.0]).collect(),
        }
    }

    fn position(&self, state: &[f64], i: usize) -> [f64; 2] {
        match self.spec.kind {
            EnvKind::CoopNav => [state[4 * i], state[4 * i + 1]],
            EnvKind::LineSpread => [state[i], 0.0],
        }
    }
}

impl Controller for ScriptedOracle {
    fn begin(&mut self, state: &[f64]) {
        let targets = self.targets(state);
        let pos: Vec<[f64; 2]> = (0..self.spec.n_agents).map(|i| self.position(state, i)).collect();
        self.assignment = best_assignment(self.spec.n_agents, |i, j| {
            let d = [pos[i][0] - targets[j][0], pos[i][1] - targets[j][1]];
            (d[0] * d[0] + d[1] * d[1]).sqrt()
        });
    }

    fn act(&mut self, state: &[f64]) -> Vec<f64> {
        let targets = self.targets(state);
        let mut out = Vec::with_capacity(self.spec.joint_action_dim());
        for i in 0..self.spec.n_agents {
            let tgt = targets[self.assignment[i]];
            match self.spec.kind {
                EnvKind::CoopNav => {
                    for k in 0..2 {
                        let e = tgt[k] - state[4 * i + k];
                        let v = state[4 * i + 2 + k];
                        out.push((self.kp * e - self.kd * v).clamp(-1.0, 1.0));
                    }
                }
                EnvKind::LineSpread => {
                    // single integrator: land on the target when within one step
                    out.push(((tgt[0] - state[i]) / self.spec.dt).clamp(-1.0, 1.0));
                }
            }
        }
        out
    }
}

/// Always emits the zero joint action.
#[derive(Clone, Debug)]
pub struct ZeroController {
    pub joint_dim: usize,
}

impl Controller for ZeroController {
    fn begin(&mut self, _state: &[f64]) {}

    fn act(&mut self, _state: &[f64]) -> Vec<f64> {
        vec![0.0; self.joint_dim]
    }
}

/// Undiscounted return of one episode driven by `controller`.
pub fn rollout_return(env: &mut impl Environment, controller: &mut impl Controller, seed: u64) -> Result<f64> {
    let mut state = env.reset(seed);
    controller.begin(&state);
    let mut total = 0.0;
    loop {
        let a = controller.act(&state);
        let out = env.step(&a)?;
        total += out.reward;
        state = out.state;
        if out.done {
            return Ok(total);
        }
    }
}

/// Return of the scripted oracle on the episode started from `seed`.
pub fn oracle_return(config: &EnvConfig, seed: u64) -> Result<f64> {
    let mut env = make_env(config)?;
    let mut oracle = ScriptedOracle::new(env.spec())?;
    rollout_return(&mut env, &mut oracle, seed)
}

/// Return of the zero-action baseline on the episode started from `seed`.
pub fn zero_action_return(config: &EnvConfig, seed: u64) -> Result<f64> {
    let mut env = make_env(config)?;
    let mut zero = ZeroController {
        joint_dim: env.spec().joint_action_dim(),
    };
    rollout_return(&mut env, &mut zero, seed)
}
