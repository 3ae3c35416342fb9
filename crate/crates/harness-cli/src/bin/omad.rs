use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use harness_cli::{default_out_dir, evaluate_checkpoint, load_config, run, Result};

/// Train or evaluate multi-agent diffusion policies.
#[derive(Parser, Debug)]
#[command(name = "omad", version)]
struct Args {
    /// Run configuration in `key = value` form.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Defaults to `runs/seed-<seed>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate this checkpoint instead of training.
    #[arg(long, value_name = "CKPT")]
    eval_only: Option<PathBuf>,
}

fn main_inner(args: Args) -> Result<()> {
    let mut cfg = load_config(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(ckpt) = &args.eval_only {
        let (mean, std) = evaluate_checkpoint(&cfg, ckpt, cfg.eval.episodes, cfg.eval.seed)?;
        println!("eval_return_mean {mean}");
        println!("eval_return_std {std}");
        return Ok(());
    }
    let out = args.out.unwrap_or_else(|| default_out_dir(&cfg));
    let summary = run(&cfg, &out)?;
    println!(
        "{} episodes, {} env steps, {} metric rows -> {}",
        summary.episodes,
        summary.env_steps,
        summary.rows.len(),
        out.display()
    );
    if let Some(last) = summary.rows.last() {
        println!("final eval return {} +- {}", last.eval_return_mean, last.eval_return_std);
    }
    Ok(())
}

fn main() -> ExitCode {
    match main_inner(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("omad: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
