use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EnvKind {
    CoopNav,
    LineSpread,
}

impl EnvKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "coopnav" => Ok(EnvKind::CoopNav),
            "linespread" => Ok(EnvKind::LineSpread),
            other => Err(Error::Unsupported(other.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::CoopNav => "coopnav",
            EnvKind::LineSpread => "linespread",
        }
    }
}

/// Static description of a task. Actions live in `[-1, 1]^action_dim` per agent.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub n_agents: usize,
    pub state_dim: usize,
    pub action_dim: usize,
    pub episode_length: usize,
    pub dt: f64,
    pub damping: f64,
    pub world_bound: f64,
}

impl EnvSpec {
    pub fn joint_action_dim(&self) -> usize {
        self.n_agents * self.action_dim
    }

    /// Length of the diagonal of the square world.
    pub fn world_diag(&self) -> f64 {
        2.0 * self.world_bound * 2f64.sqrt()
    }
}

/// Tunable parameters shared by the built-in tasks.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub n_agents: usize,
    pub episode_length: usize,
    pub dt: f64,
    pub damping: f64,
    pub collision_radius: f64,
    pub collision_penalty: f64,
    /// Half-width of the box initial positions are drawn from.
    pub init_range: f64,
    pub world_bound: f64,
}

impl EnvConfig {
    pub fn coopnav(n_agents: usize) -> Self {
        Self {
            kind: EnvKind::CoopNav,
            n_agents,
            episode_length: 25,
            dt: 0.1,
            damping: 0.9,
            collision_radius: 0.2,
            collision_penalty: 1.0,
            init_range: 1.0,
            world_bound: 2.0,
        }
    }

    pub fn linespread() -> Self {
        Self {
            kind: EnvKind::LineSpread,
            n_agents: 2,
            episode_length: 25,
            dt: 0.2,
            damping: 0.0,
            collision_radius: 0.0,
            collision_penalty: 0.0,
            init_range: 0.05,
            world_bound: 2.0,
        }
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::CoopNav => Self::coopnav(2),
            EnvKind::LineSpread => Self::linespread(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.episode_length == 0 {
            return bad("episode_length must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return bad(format!("damping must lie in [0, 1), got {}", self.damping));
        }
        if !(self.world_bound > 0.0) || !(self.init_range >= 0.0) || self.init_range > self.world_bound {
            return bad("need 0 <= init_range <= world_bound and world_bound > 0".into());
        }
        if self.collision_radius < 0.0 || self.collision_penalty < 0.0 {
            return bad("collision radius and penalty must be non-negative".into());
        }
        match self.kind {
            EnvKind::CoopNav if !(1..=4).contains(&self.n_agents) => {
                bad(format!("coopnav supports 1 to 4 agents, got {}", self.n_agents))
            }
            EnvKind::LineSpread if self.n_agents != 2 => {
                bad(format!("linespread has exactly 2 agents, got {}", self.n_agents))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    pub reward: f64,
    /// Set on the final step of the episode (time limit).
    pub done: bool,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode and returns the initial global state.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn state(&self) -> Vec<f64>;

    fn timestep(&self) -> usize;

    /// Advances one step. Actions are clipped to `[-1, 1]` here.
    fn step(&mut self, joint_action: &[f64]) -> Result<StepOutcome>;
}

fn check_action(spec: &EnvSpec, joint: &[f64]) -> Result<Vec<f64>> {
    if joint.len() != spec.joint_action_dim() {
        return Err(Error::ActionSize {
            expected: spec.joint_action_dim(),
            got: joint.len(),
        });
    }
    // NaN maps to 0 so the state stays finite
    Ok(joint
        .iter()
        .map(|a| if a.is_nan() { 0.0 } else { a.clamp(-1.0, 1.0) })
        .collect())
}

/// Cooperative navigation: N point masses cover N landmarks.
///
/// State: `[x, y, vx, vy]` per agent followed by `[x, y]` per landmark.
#[derive(Clone, Debug)]
pub struct CoopNav {
    spec: EnvSpec,
    config: EnvConfig,
    pos: Vec<[f64; 2]>,
    vel: Vec<[f64; 2]>,
    landmarks: Vec<[f64; 2]>,
    t: usize,
}

impl CoopNav {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        if config.kind != EnvKind::CoopNav {
            return Err(Error::Config("CoopNav needs a coopnav config".into()));
        }
        let n = config.n_agents;
        let spec = EnvSpec {
            kind: EnvKind::CoopNav,
            n_agents: n,
            state_dim: 6 * n,
            action_dim: 2,
            episode_length: config.episode_length,
            dt: config.dt,
            damping: config.damping,
            world_bound: config.world_bound,
        };
        Ok(Self {
            spec,
            config,
            pos: vec![[0.0; 2]; n],
            vel: vec![[0.0; 2]; n],
            landmarks: vec![[0.0; 2]; n],
            t: 0,
        })
    }

    /// Places agents and landmarks explicitly (velocities zero).
    pub fn set_layout(&mut self, agents: &[[f64; 2]], landmarks: &[[f64; 2]]) -> Result<()> {
        let n = self.spec.n_agents;
        if agents.len() != n || landmarks.len() != n {
            return Err(Error::Config(format!("layout needs {n} agents and {n} landmarks")));
        }
        self.pos = agents.to_vec();
        self.vel = vec![[0.0; 2]; n];
        self.landmarks = landmarks.to_vec();
        self.t = 0;
        Ok(())
    }

    pub fn positions(&self) -> &[[f64; 2]] {
        &self.pos
    }

    pub fn velocities(&self) -> &[[f64; 2]] {
        &self.vel
    }

    pub fn landmarks(&self) -> &[[f64; 2]] {
        &self.landmarks
    }

    /// Team reward for the current configuration.
    pub fn reward(&self) -> f64 {
        coopnav_reward(
            &self.pos,
            &self.landmarks,
            self.config.collision_radius,
            self.config.collision_penalty,
        )
    }
}

/// `-sum_l min_i |p_i - l| - penalty * #{pairs closer than radius}`.
pub fn coopnav_reward(pos: &[[f64; 2]], landmarks: &[[f64; 2]], radius: f64, penalty: f64) -> f64 {
    let dist = |a: &[f64; 2], b: &[f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let cover: f64 = landmarks
        .iter()
        .map(|l| pos.iter().map(|p| dist(p, l)).fold(f64::INFINITY, f64::min))
        .sum();
    let mut collisions = 0usize;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            if dist(&pos[i], &pos[j]) < radius {
                collisions += 1;
            }
        }
    }
    -cover - penalty * collisions as f64
}

impl Environment for CoopNav {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = self.config.init_range;
        let mut draw = || -> [f64; 2] {
            if r == 0.0 {
                [0.0, 0.0]
            } else {
                [rng.random_range(-r..=r), rng.random_range(-r..=r)]
            }
        };
        let n = self.spec.n_agents;
        self.pos = (0..n).map(|_| draw()).collect();
        self.landmarks = (0..n).map(|_| draw()).collect();
        self.vel = vec![[0.0; 2]; n];
        self.t = 0;
        self.state()
    }

    fn state(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.spec.state_dim);
        for (p, v) in self.pos.iter().zip(&self.vel) {
            s.extend_from_slice(&[p[0], p[1], v[0], v[1]]);
        }
        for l in &self.landmarks {
            s.extend_from_slice(l);
        }
        s
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn step(&mut self, joint_action: &[f64]) -> Result<StepOutcome> {
        if self.t >= self.spec.episode_length {
            return Err(Error::EpisodeOver);
        }
        let a = check_action(&self.spec, joint_action)?;
        let (dt, damp, bound) = (self.spec.dt, self.spec.damping, self.spec.world_bound);
        for i in 0..self.spec.n_agents {
            for k in 0..2 {
                self.vel[i][k] = damp * self.vel[i][k] + a[2 * i + k] * dt;
                self.pos[i][k] = (self.pos[i][k] + self.vel[i][k] * dt).clamp(-bound, bound);
            }
        }
        self.t += 1;
        Ok(StepOutcome {
            state: self.state(),
            reward: self.reward(),
            done: self.t >= self.spec.episode_length,
        })
    }
}

/// Two agents on a line with targets at -1 and +1; either assignment is
/// optimal. State: `[x_1, x_2]`.
#[derive(Clone, Debug)]
pub struct LineSpread {
    spec: EnvSpec,
    config: EnvConfig,
    x: [f64; 2],
    t: usize,
}

pub const LINE_TARGETS: [f64; 2] = [-1.0, 1.0];

/// `-min over assignments of sum_i |x_i - target_sigma(i)|`.
pub fn linespread_reward(x: &[f64; 2]) -> f64 {
    let [l, r] = LINE_TARGETS;
    let keep = (x[0] - l).abs() + (x[1] - r).abs();
    let swap = (x[0] - r).abs() + (x[1] - l).abs();
    -keep.min(swap)
}

impl LineSpread {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        if config.kind != EnvKind::LineSpread {
            return Err(Error::Config("LineSpread needs a linespread config".into()));
        }
        let spec = EnvSpec {
            kind: EnvKind::LineSpread,
            n_agents: 2,
            state_dim: 2,
            action_dim: 1,
            episode_length: config.episode_length,
            dt: config.dt,
            damping: 0.0,
            world_bound: config.world_bound,
        };
        Ok(Self {
            spec,
            config,
            x: [0.0, 0.0],
            t: 0,
        })
    }

    pub fn set_positions(&mut self, x: [f64; 2]) {
        self.x = x;
        self.t = 0;
    }

    pub fn positions(&self) -> [f64; 2] {
        self.x
    }
}

impl Environment for LineSpread {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let r = self.config.init_range;
        self.x = if r == 0.0 {
            [0.0, 0.0]
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            [rng.random_range(-r..=r), rng.random_range(-r..=r)]
        };
        self.t = 0;
        self.state()
    }

    fn state(&self) -> Vec<f64> {
        self.x.to_vec()
    }

    fn timestep(&self) -> usize {
        self.t
    }

    fn step(&mut self, joint_action: &[f64]) -> Result<StepOutcome> {
        if self.t >= self.spec.episode_length {
            return Err(Error::EpisodeOver);
        }
        let a = check_action(&self.spec, joint_action)?;
        let bound = self.spec.world_bound;
        for i in 0..2 {
            self.x[i] = (self.x[i] + a[i] * self.spec.dt).clamp(-bound, bound);
        }
        self.t += 1;
        Ok(StepOutcome {
            state: self.state(),
            reward: linespread_reward(&self.x),
            done: self.t >= self.spec.episode_length,
        })
    }
}

/// Any built-in task, selected at run time.
#[derive(Clone, Debug)]
pub enum AnyEnv {
    CoopNav(CoopNav),
    LineSpread(LineSpread),
}

pub fn make_env(config: &EnvConfig) -> Result<AnyEnv> {
    match config.kind {
        EnvKind::CoopNav => Ok(AnyEnv::CoopNav(CoopNav::new(config.clone())?)),
        EnvKind::LineSpread => Ok(AnyEnv::LineSpread(LineSpread::new(config.clone())?)),
    }
}

impl Environment for AnyEnv {
    fn spec(&self) -> &EnvSpec {
        match self {
            AnyEnv::CoopNav(e) => e.spec(),
            AnyEnv::LineSpread(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            AnyEnv::CoopNav(e) => e.reset(seed),
            AnyEnv::LineSpread(e) => e.reset(seed),
        }
    }

    fn state(&self) -> Vec<f64> {
        match self {
            AnyEnv::CoopNav(e) => e.state(),
            AnyEnv::LineSpread(e) => e.state(),
        }
    }

    fn timestep(&self) -> usize {
        match self {
            AnyEnv::CoopNav(e) => e.timestep(),
            AnyEnv::LineSpread(e) => e.timestep(),
        }
    }

    fn step(&mut self, joint_action: &[f64]) -> Result<StepOutcome> {
        match self {
            AnyEnv::CoopNav(e) => e.step(joint_action),
            AnyEnv::LineSpread(e) => e.step(joint_action),
        }
    }
}
