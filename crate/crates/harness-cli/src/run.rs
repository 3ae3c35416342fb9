use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use marl_envs::{
    make_env, oracle_return, zero_action_return, AnyEnv, CoverageGrid, EnvConfig, Environment,
};
use ndiff_core::{read_checkpoint, write_checkpoint};
use omad_trainer::{evaluate, AgentSet, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{echo_config, validate, RunConfig};
use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "episode,env_steps,eval_return_mean,eval_return_std,joint_elbo_mean,alpha,critic_loss,policy_loss,coverage,wall_clock_s";

/// One line of `metrics.csv`. Absent values print as `NA`.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub episode: u64,
    pub env_steps: u64,
    pub eval_return_mean: f64,
    pub eval_return_std: f64,
    pub joint_elbo_mean: Option<f64>,
    pub alpha: f64,
    pub critic_loss: Option<f64>,
    pub policy_loss: Option<f64>,
    pub coverage: f64,
    pub wall_clock_s: Option<f64>,
}

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x}"),
        _ => "NA".into(),
    }
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        [
            self.episode.to_string(),
            self.env_steps.to_string(),
            cell(Some(self.eval_return_mean)),
            cell(Some(self.eval_return_std)),
            cell(self.joint_elbo_mean),
            cell(Some(self.alpha)),
            cell(self.critic_loss),
            cell(self.policy_loss),
            cell(Some(self.coverage)),
            cell(self.wall_clock_s),
        ]
        .join(",")
    }
}

/// Mean oracle and zero-action returns over the evaluation seeds. They anchor
/// the normalized score `(R - zero) / (oracle - zero)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct References {
    pub oracle: f64,
    pub zero: f64,
}

impl References {
    pub fn compute(env: &EnvConfig, episodes: usize, seed: u64) -> Result<Self> {
        let mut oracle = 0.0;
        let mut zero = 0.0;
        for k in 0..episodes as u64 {
            oracle += oracle_return(env, seed + k)?;
            zero += zero_action_return(env, seed + k)?;
        }
        let n = episodes as f64;
        Ok(Self {
            oracle: oracle / n,
            zero: zero / n,
        })
    }

    pub fn normalized(&self, ret: f64) -> f64 {
        (ret - self.zero) / (self.oracle - self.zero)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub rows: Vec<MetricsRow>,
    pub episodes: u64,
    pub env_steps: u64,
    pub references: Option<References>,
    /// Episode at which the stop score was first reached.
    pub stopped_at: Option<u64>,
    pub out_dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

struct MetricsFile {
    path: PathBuf,
    out: BufWriter<File>,
}

impl MetricsFile {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(io_err(&path))?;
        let mut m = Self {
            out: BufWriter::new(file),
            path,
        };
        m.line(METRICS_HEADER)?;
        Ok(m)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}")
            .and_then(|_| self.out.flush())
            .map_err(io_err(&self.path))
    }
}

fn coverage_csv(grid: &CoverageGrid) -> String {
    let mut s = String::from("cell_x,cell_y,x0,y0\n");
    for c in grid.visited() {
        let o = grid.cell_origin(c);
        s.push_str(&format!("{},{},{},{}\n", c.0, c.1, o[0], o[1]));
    }
    s
}

/// Builds a fresh trainer for `cfg` with the coverage grid attached.
pub fn build_trainer(cfg: &RunConfig) -> Result<Trainer<AnyEnv>> {
    let env = make_env(&cfg.env)?;
    let mut tr = Trainer::new(cfg.trainer.clone(), env, cfg.seed)?;
    let c = &cfg.eval.coverage;
    tr.coverage = Some(CoverageGrid::new(c.dims, c.lo, c.hi, c.cell)?);
    Ok(tr)
}

/// Trains per `cfg`, writing `config.echo`, `metrics.csv`, `coverage.csv`
/// and `final.ckpt` under `out_dir`. On a training failure the artifacts
/// written so far stay in place next to an `abort.txt` diagnostic.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunSummary> {
    validate(cfg)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    write_text(&out_dir.join("config.echo"), &echo_config(cfg))?;
    let mut metrics = MetricsFile::create(out_dir.join("metrics.csv"))?;

    let references = match cfg.eval.stop_score {
        Some(_) => Some(References::compute(&cfg.env, cfg.eval.episodes, cfg.eval.seed)?),
        None => None,
    };
    let mut tr = build_trainer(cfg)?;
    let mut eval_env = make_env(&cfg.env)?;
    let start = Instant::now();
    let mut rows = Vec::new();
    let mut stopped_at = None;

    let outcome = tr.train(cfg.episodes, |t, r| {
        if r.episode % cfg.eval.interval != 0 {
            return Ok(true);
        }
        let (mean, std) = evaluate(&mut eval_env, &t.agents.policies, cfg.eval.episodes, cfg.eval.seed)?;
        let alpha = t.agents.alpha();
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(omad_trainer::Error::NonFinite {
                what: "alpha",
                detail: format!("alpha = {alpha} at episode {}", r.episode),
            });
        }
        let row = MetricsRow {
            episode: r.episode,
            env_steps: r.env_steps,
            eval_return_mean: mean,
            eval_return_std: std,
            joint_elbo_mean: t.stats.joint_elbo,
            alpha,
            critic_loss: t.stats.critic_loss,
            policy_loss: t.stats.policy_loss,
            coverage: t.coverage.as_ref().map_or(0.0, |g| g.fraction()),
            wall_clock_s: cfg.wall_clock.then(|| start.elapsed().as_secs_f64()),
        };
        metrics
            .line(&row.to_csv())
            .map_err(|e| omad_trainer::Error::Config(e.to_string()))?;
        rows.push(row);
        if let (Some(stop), Some(refs)) = (cfg.eval.stop_score, references) {
            if refs.normalized(mean) >= stop {
                stopped_at = Some(r.episode);
                return Ok(false);
            }
        }
        Ok(true)
    });

    if let Some(g) = &tr.coverage {
        write_text(&out_dir.join("coverage.csv"), &coverage_csv(g))?;
    }
    write_checkpoint(&out_dir.join("final.ckpt"), &tr.agents.checkpoint())?;
    if let Err(e) = outcome {
        let diag = format!(
            "training aborted at episode {} after {} env steps\nerror: {e}\nalpha: {}\nlast stats: {:?}\n",
            tr.episode(),
            tr.env_steps(),
            tr.agents.alpha(),
            tr.stats
        );
        write_text(&out_dir.join("abort.txt"), &diag)?;
        return Err(e.into());
    }
    Ok(RunSummary {
        rows,
        episodes: tr.episode(),
        env_steps: tr.env_steps(),
        references,
        stopped_at,
        out_dir: out_dir.to_path_buf(),
    })
}

/// Loads the online policies of a checkpoint written by [`run`] and evaluates
/// them on `cfg.env`.
pub fn evaluate_checkpoint(cfg: &RunConfig, ckpt: &Path, episodes: usize, seed: u64) -> Result<(f64, f64)> {
    let ckpt = read_checkpoint(ckpt)?;
    let mut env = make_env(&cfg.env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut agents = AgentSet::new(env.spec(), &cfg.trainer, &mut rng)?;
    agents.load_checkpoint(&ckpt)?;
    Ok(evaluate(&mut env, &agents.policies, episodes, seed)?)
}
