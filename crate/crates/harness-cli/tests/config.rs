use harness_cli::{echo_config, load_config, parse_config, Error, RunConfig};
use marl_envs::{EnvConfig, EnvKind};
use omad_trainer::TrainerConfig;

fn line_of(e: Error) -> usize {
    match e {
        Error::Config { line, .. } => line,
        other => panic!("expected a config error, got {other}"),
    }
}

#[test]
fn empty_file_requires_seed() {
    let err = parse_config("").unwrap_err();
    assert!(err.to_string().contains("seed"), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn seed_alone_gives_defaults() {
    let cfg = parse_config("seed = 4\n").unwrap();
    let mut expect = RunConfig::with_seed(4);
    expect.seed = 4;
    assert_eq!(cfg, expect);
    assert_eq!(cfg.trainer, TrainerConfig::default());
    assert_eq!(cfg.eval.episodes, 10);
}

#[test]
fn policy_delay_parses() {
    let cfg = parse_config("seed = 1\ntrainer.policy_delay = 3\n").unwrap();
    assert_eq!(cfg.trainer.policy_delay, 3);
    let cfg = parse_config("seed = 1\ntrainer.policy_delay = 5 # sparse\n").unwrap();
    assert_eq!(cfg.trainer.policy_delay, 5);
}

#[test]
fn gamma_outside_unit_interval_is_rejected() {
    assert!(parse_config("seed = 1\ntrainer.gamma = 1.5\n").is_err());
    assert!(parse_config("seed = 1\ntrainer.gamma = 1.0\n").is_err());
    assert!(parse_config("seed = 1\ntrainer.gamma = 0.0\n").is_ok());
}

#[test]
fn errors_name_the_line() {
    assert_eq!(line_of(parse_config("seed = 1\n\ntrainer.bogus = 2\n").unwrap_err()), 3);
    assert_eq!(line_of(parse_config("seed = 1\ntrainer.batch_size = many\n").unwrap_err()), 2);
    assert_eq!(line_of(parse_config("seed = 1\nno equals sign\n").unwrap_err()), 2);
    assert_eq!(line_of(parse_config("seed = 1\nseed = 2\n").unwrap_err()), 2);
    assert_eq!(line_of(parse_config("seed = 1\nenv.name = pong\n").unwrap_err()), 2);
}

#[test]
fn name_and_preset_apply_before_other_keys() {
    let text = "trainer.actor_lr = 0.01\nenv.episode_length = 30\nseed = 9\nenv.name = linespread\ntrainer.preset = desk\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.env.kind, EnvKind::LineSpread);
    assert_eq!(cfg.env.episode_length, 30);
    assert_eq!(cfg.trainer.actor_lr, 0.01);
    assert_eq!(cfg.trainer.actor_hidden, TrainerConfig::desk().actor_hidden);
    assert_eq!(
        EnvConfig {
            episode_length: 25,
            ..cfg.env.clone()
        },
        EnvConfig::linespread()
    );
}

#[test]
fn lists_and_optional_values() {
    let text = "seed = 1\ntrainer.critic_hidden = 32, 16\ntrainer.grad_clip = none\ntrainer.target_entropy = -3.5\ntrainer.temperature_lr = auto\neval.stop_score = 0.8\neval.coverage_lo = -1,-0.5\n";
    let cfg = parse_config(text).unwrap();
    assert_eq!(cfg.trainer.critic_hidden, vec![32, 16]);
    assert_eq!(cfg.trainer.grad_clip, None);
    assert_eq!(cfg.trainer.target_entropy, Some(-3.5));
    assert_eq!(cfg.trainer.temperature_lr, None);
    assert_eq!(cfg.eval.stop_score, Some(0.8));
    assert_eq!(cfg.eval.coverage.lo, [-1.0, -0.5]);
}

#[test]
fn echo_round_trips() {
    let text = "seed = 12\nenv.name = coopnav\nenv.n_agents = 3\ntrainer.preset = desk\ntrainer.target_entropy = -4\ntrainer.beta_min = 0.00123\neval.stop_score = 0.75\nwall_clock = true\n";
    let cfg = parse_config(text).unwrap();
    let echoed = echo_config(&cfg);
    assert_eq!(parse_config(&echoed).unwrap(), cfg);
    assert_eq!(echo_config(&parse_config(&echoed).unwrap()), echoed);
}

#[test]
fn load_reads_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(&path, "seed = 3\neval.episodes = 4\n").unwrap();
    let cfg = load_config(&path).unwrap();
    assert_eq!((cfg.seed, cfg.eval.episodes), (3, 4));
    assert!(matches!(load_config(&dir.path().join("missing")), Err(Error::Io { .. })));
}
