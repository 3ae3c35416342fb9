use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use marl_envs::{EnvConfig, EnvKind};
use omad_trainer::TrainerConfig;

use crate::error::{Error, Result};

/// Where the state-coverage grid looks.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageSpec {
    pub dims: (usize, usize),
    pub lo: [f64; 2],
    pub hi: [f64; 2],
    pub cell: f64,
}

impl Default for CoverageSpec {
    fn default() -> Self {
        Self {
            dims: (0, 1),
            lo: [-2.0, -2.0],
            hi: [2.0, 2.0],
            cell: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    /// Episodes between metric rows.
    pub interval: u64,
    pub episodes: usize,
    /// Evaluation episode `k` is seeded `seed + k`.
    pub seed: u64,
    /// Stop once the normalized evaluation score reaches this value.
    pub stop_score: Option<f64>,
    pub coverage: CoverageSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval: 10,
            episodes: 10,
            seed: 1_000_000,
            stop_score: None,
            coverage: CoverageSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub episodes: u64,
    pub wall_clock: bool,
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    /// Defaults for everything but the seed.
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            episodes: 1_000,
            wall_clock: false,
            env: EnvConfig::coopnav(2),
            trainer: TrainerConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T>
where
    T::Err: Display,
{
    raw.parse().map_err(|e: T::Err| Error::Config {
        line,
        msg: format!("{key}: cannot parse {raw:?}: {e}"),
    })
}

fn parse_list<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    raw.split(',').map(|p| parse(line, key, p.trim())).collect()
}

fn parse_opt<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<Option<T>>
where
    T::Err: Display,
{
    match raw {
        "none" | "auto" => Ok(None),
        _ => parse(line, key, raw).map(Some),
    }
}

fn pair<T: FromStr + Copy>(line: usize, key: &str, raw: &str) -> Result<[T; 2]>
where
    T::Err: Display,
{
    match parse_list::<T>(line, key, raw)?.as_slice() {
        [a, b] => Ok([*a, *b]),
        _ => Err(Error::Config {
            line,
            msg: format!("{key}: expected two comma-separated values"),
        }),
    }
}

fn set(cfg: &mut RunConfig, line: usize, key: &str, v: &str) -> Result<()> {
    let t = &mut cfg.trainer;
    let e = &mut cfg.env;
    let ev = &mut cfg.eval;
    match key {
        "seed" => cfg.seed = parse(line, key, v)?,
        "episodes" => cfg.episodes = parse(line, key, v)?,
        "wall_clock" => cfg.wall_clock = parse(line, key, v)?,

        "env.name" | "trainer.preset" => {}
        "env.n_agents" => e.n_agents = parse(line, key, v)?,
        "env.episode_length" => e.episode_length = parse(line, key, v)?,
        "env.dt" => e.dt = parse(line, key, v)?,
        "env.damping" => e.damping = parse(line, key, v)?,
        "env.collision_radius" => e.collision_radius = parse(line, key, v)?,
        "env.collision_penalty" => e.collision_penalty = parse(line, key, v)?,
        "env.init_range" => e.init_range = parse(line, key, v)?,
        "env.world_bound" => e.world_bound = parse(line, key, v)?,

        "trainer.warmup_steps" => t.warmup_steps = parse(line, key, v)?,
        "trainer.learning_starts" => t.learning_starts = parse(line, key, v)?,
        "trainer.rho" => t.rho = parse(line, key, v)?,
        "trainer.gamma" => t.gamma = parse(line, key, v)?,
        "trainer.policy_delay" => t.policy_delay = parse(line, key, v)?,
        "trainer.batch_size" => t.batch_size = parse(line, key, v)?,
        "trainer.buffer_capacity" => t.buffer_capacity = parse(line, key, v)?,
        "trainer.init_alpha" => t.init_alpha = parse(line, key, v)?,
        "trainer.target_entropy" => t.target_entropy = parse_opt(line, key, v)?,
        "trainer.n_atoms" => t.n_atoms = parse(line, key, v)?,
        "trainer.v_max" => t.v_max = parse(line, key, v)?,
        "trainer.critic_entropy_coef" => t.critic_entropy_coef = parse(line, key, v)?,
        "trainer.bn_momentum" => t.bn_momentum = parse(line, key, v)?,
        "trainer.bn_warmup" => t.bn_warmup = parse(line, key, v)?,
        "trainer.adam_beta1" => t.adam_beta1 = parse(line, key, v)?,
        "trainer.adam_beta2" => t.adam_beta2 = parse(line, key, v)?,
        "trainer.grad_clip" => t.grad_clip = parse_opt(line, key, v)?,
        "trainer.diffusion_steps" => t.diffusion_steps = parse(line, key, v)?,
        "trainer.beta_min" => t.beta_min = parse(line, key, v)?,
        "trainer.beta_max" => t.beta_max = parse(line, key, v)?,
        "trainer.eta" => t.eta = parse(line, key, v)?,
        "trainer.actor_lr" => t.actor_lr = parse(line, key, v)?,
        "trainer.critic_lr" => t.critic_lr = parse(line, key, v)?,
        "trainer.temperature_lr" => t.temperature_lr = parse_opt(line, key, v)?,
        "trainer.actor_hidden" => t.actor_hidden = parse_list(line, key, v)?,
        "trainer.time_dim" => t.time_dim = parse(line, key, v)?,
        "trainer.actor_state_norm" => t.actor_state_norm = parse(line, key, v)?,
        "trainer.critic_hidden" => t.critic_hidden = parse_list(line, key, v)?,
        "trainer.updates_per_episode" => t.updates_per_episode = parse(line, key, v)?,
        "trainer.clip_policy_actions" => t.clip_policy_actions = parse(line, key, v)?,

        "eval.interval" => ev.interval = parse(line, key, v)?,
        "eval.episodes" => ev.episodes = parse(line, key, v)?,
        "eval.seed" => ev.seed = parse(line, key, v)?,
        "eval.stop_score" => ev.stop_score = parse_opt(line, key, v)?,
        "eval.coverage_dims" => {
            let [a, b] = pair::<usize>(line, key, v)?;
            ev.coverage.dims = (a, b);
        }
        "eval.coverage_lo" => ev.coverage.lo = pair(line, key, v)?,
        "eval.coverage_hi" => ev.coverage.hi = pair(line, key, v)?,
        "eval.coverage_cell" => ev.coverage.cell = parse(line, key, v)?,
        _ => {
            return Err(Error::Config {
                line,
                msg: format!("unknown key {key:?}"),
            })
        }
    }
    Ok(())
}

/// Parses `key = value` lines. `#` starts a comment. `env.name` and
/// `trainer.preset` pick the base defaults, so they apply before any other
/// key regardless of position.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected `key = value`, got {content:?}"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if entries.iter().any(|(_, key, _): &(usize, &str, &str)| *key == k) {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key {k:?}"),
            });
        }
        entries.push((line, k, v));
    }

    let mut cfg = RunConfig::with_seed(0);
    let mut seen_seed = false;
    for &(line, k, v) in &entries {
        match k {
            "env.name" => {
                let kind = EnvKind::parse(v).map_err(|e| Error::Config {
                    line,
                    msg: e.to_string(),
                })?;
                cfg.env = EnvConfig::default_for(kind);
            }
            "trainer.preset" => {
                cfg.trainer = match v {
                    "reference" => TrainerConfig::default(),
                    "desk" => TrainerConfig::desk(),
                    other => {
                        return Err(Error::Config {
                            line,
                            msg: format!("unknown preset {other:?}, expected reference or desk"),
                        })
                    }
                }
            }
            _ => {}
        }
    }
    for &(line, k, v) in &entries {
        set(&mut cfg, line, k, v)?;
        seen_seed |= k == "seed";
    }
    if !seen_seed {
        return Err(Error::Config {
            line: 0,
            msg: "missing required key `seed`".into(),
        });
    }
    validate(&cfg)?;
    Ok(cfg)
}

pub fn validate(cfg: &RunConfig) -> Result<()> {
    let at0 = |msg: String| Error::Config { line: 0, msg };
    cfg.env.validate().map_err(|e| at0(e.to_string()))?;
    cfg.trainer.validate().map_err(|e| at0(e.to_string()))?;
    if cfg.eval.interval == 0 || cfg.eval.episodes == 0 {
        return Err(at0("eval.interval and eval.episodes must be positive".into()));
    }
    let c = &cfg.eval.coverage;
    if !(c.cell > 0.0) || !(c.hi[0] > c.lo[0]) || !(c.hi[1] > c.lo[1]) {
        return Err(at0("coverage grid needs a positive cell and non-empty range".into()));
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    parse_config(&text)
}

fn opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".to_string(), |x| x.to_string())
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// The full effective configuration in the input format; parsing it back
/// reproduces `cfg`.
pub fn echo_config(cfg: &RunConfig) -> String {
    let t = &cfg.trainer;
    let e = &cfg.env;
    let ev = &cfg.eval;
    let c = &ev.coverage;
    let lines: Vec<(&str, String)> = vec![
        ("seed", cfg.seed.to_string()),
        ("episodes", cfg.episodes.to_string()),
        ("wall_clock", cfg.wall_clock.to_string()),
        ("env.name", e.kind.name().to_string()),
        ("env.n_agents", e.n_agents.to_string()),
        ("env.episode_length", e.episode_length.to_string()),
        ("env.dt", e.dt.to_string()),
        ("env.damping", e.damping.to_string()),
        ("env.collision_radius", e.collision_radius.to_string()),
        ("env.collision_penalty", e.collision_penalty.to_string()),
        ("env.init_range", e.init_range.to_string()),
        ("env.world_bound", e.world_bound.to_string()),
        ("trainer.warmup_steps", t.warmup_steps.to_string()),
        ("trainer.learning_starts", t.learning_starts.to_string()),
        ("trainer.rho", t.rho.to_string()),
        ("trainer.gamma", t.gamma.to_string()),
        ("trainer.policy_delay", t.policy_delay.to_string()),
        ("trainer.batch_size", t.batch_size.to_string()),
        ("trainer.buffer_capacity", t.buffer_capacity.to_string()),
        ("trainer.init_alpha", t.init_alpha.to_string()),
        ("trainer.target_entropy", opt(&t.target_entropy)),
        ("trainer.n_atoms", t.n_atoms.to_string()),
        ("trainer.v_max", t.v_max.to_string()),
        ("trainer.critic_entropy_coef", t.critic_entropy_coef.to_string()),
        ("trainer.bn_momentum", t.bn_momentum.to_string()),
        ("trainer.bn_warmup", t.bn_warmup.to_string()),
        ("trainer.adam_beta1", t.adam_beta1.to_string()),
        ("trainer.adam_beta2", t.adam_beta2.to_string()),
        ("trainer.grad_clip", opt(&t.grad_clip)),
        ("trainer.diffusion_steps", t.diffusion_steps.to_string()),
        ("trainer.beta_min", t.beta_min.to_string()),
        ("trainer.beta_max", t.beta_max.to_string()),
        ("trainer.eta", t.eta.to_string()),
        ("trainer.actor_lr", t.actor_lr.to_string()),
        ("trainer.critic_lr", t.critic_lr.to_string()),
        ("trainer.temperature_lr", opt(&t.temperature_lr)),
        ("trainer.actor_hidden", list(&t.actor_hidden)),
        ("trainer.time_dim", t.time_dim.to_string()),
        ("trainer.actor_state_norm", t.actor_state_norm.to_string()),
        ("trainer.critic_hidden", list(&t.critic_hidden)),
        ("trainer.updates_per_episode", t.updates_per_episode.to_string()),
        ("trainer.clip_policy_actions", t.clip_policy_actions.to_string()),
        ("eval.interval", ev.interval.to_string()),
        ("eval.episodes", ev.episodes.to_string()),
        ("eval.seed", ev.seed.to_string()),
        ("eval.stop_score", opt(&ev.stop_score)),
        ("eval.coverage_dims", format!("{},{}", c.dims.0, c.dims.1)),
        ("eval.coverage_lo", list(&c.lo)),
        ("eval.coverage_hi", list(&c.hi)),
        ("eval.coverage_cell", c.cell.to_string()),
    ];
    lines
        .into_iter()
        .map(|(k, v)| format!("{k} = {v}\n"))
        .collect()
}

/// Output directory default: `runs/seed-<seed>`.
pub fn default_out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from("runs").join(format!("seed-{}", cfg.seed))
}
