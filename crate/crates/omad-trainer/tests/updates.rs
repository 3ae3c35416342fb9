use std::f64::consts::PI;

use diffusion_policy::{cosine_schedule, NoiseSchedule, ScoreModel, ScoreNet, ScoreNetConfig, ScorePolicy};
use dist_critic::QuadraticCritic;
use ndiff_core::{Adam, AdamConfig, DenseArray, Module, Parameter, Tape, Var};
use omad_trainer::{
    blend_into, draw_policy_noise, policy_objective, update_critic, update_policies, update_temperature,
    AgentSet, Batch, TemperatureState, Transition, TrainerConfig,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `f(a, s) = w a + u s` on 1-d actions and states.
#[derive(Clone)]
struct LinearScore {
    w: Parameter,
    u: Parameter,
}

impl Module for LinearScore {
    fn params(&self) -> Vec<&Parameter> {
        vec![&self.w, &self.u]
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w, &mut self.u]
    }
}

impl ScoreModel for LinearScore {
    type Context = (Var, Var);

    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn bind(&self, tape: &mut Tape, states: Var, _frozen: bool) -> diffusion_policy::Result<(Var, Var)> {
        let u = tape.param(&self.u);
        let w = tape.param(&self.w);
        Ok((tape.matmul(states, u)?, w))
    }

    fn score(&self, tape: &mut Tape, ctx: &(Var, Var), a: Var, _t: f64) -> diffusion_policy::Result<Var> {
        let aw = tape.matmul(a, ctx.1)?;
        Ok(tape.add(aw, ctx.0)?)
    }
}

fn log_n(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - (x - mean).powi(2) / (2.0 * var)
}

fn small_config() -> TrainerConfig {
    TrainerConfig {
        actor_hidden: vec![16, 16],
        time_dim: 8,
        critic_hidden: vec![32, 32],
        n_atoms: 21,
        v_max: 5.0,
        actor_lr: 1e-3,
        critic_lr: 1e-3,
        ..TrainerConfig::default()
    }
}

#[test]
fn single_step_policy_loss_matches_expansion() {
    let eta = 0.9;
    let beta = 0.5;
    let (w, u) = (-0.6, 0.3);
    let schedule = NoiseSchedule::new(vec![beta], eta).unwrap();
    let net = LinearScore {
        w: Parameter::new("w", DenseArray::scalar(w)),
        u: Parameter::new("u", DenseArray::scalar(u)),
    };
    let mut policies = vec![ScorePolicy::new(0, net, schedule)];
    let critic = QuadraticCritic { target: vec![0.25] };
    let alpha = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let states = DenseArray::matrix(3, 1, vec![0.2, -0.5, 0.9]);
    let noise = draw_policy_noise(&policies, 3, &mut rng);

    let mut tape = Tape::new();
    let s = tape.constant(states.clone());
    let obj = policy_objective(&mut tape, &mut policies, &critic, s, &noise, alpha, false, true).unwrap();

    let var = 2.0 * eta * eta * beta;
    let mut expect = 0.0;
    for r in 0..3 {
        let a1 = noise[0].0.data()[r];
        let s = states.data()[r];
        let rev_mean = (1.0 + beta) * a1 + 2.0 * eta * eta * beta * (w * a1 + u * s);
        let a0 = rev_mean + noise[0].1[0].data()[r];
        let l = log_n(a1, (1.0 - beta) * a0, var) - log_n(a1, 0.0, eta * eta) - log_n(a0, rev_mean, var);
        let q = -(a0.clamp(-1.0, 1.0) - 0.25).powi(2);
        expect += -l - q / alpha;
    }
    expect /= 3.0;
    let got = tape.scalar(obj.loss);
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
}

fn objective_value_and_grads(
    policies: &mut [ScorePolicy<ScoreNet>],
    critic: &QuadraticCritic,
    states: &DenseArray,
    noise: &[omad_trainer::ChainNoise],
) -> (f64, ndiff_core::Gradients) {
    let mut tape = Tape::new();
    let s = tape.constant(states.clone());
    let obj = policy_objective(&mut tape, policies, critic, s, noise, 0.8, false, true).unwrap();
    (tape.scalar(obj.loss), tape.backward(obj.loss).unwrap())
}

#[test]
fn policy_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let cfg = ScoreNetConfig {
        hidden: vec![5, 5],
        time_dim: 4,
        ..ScoreNetConfig::default()
    };
    let schedule = cosine_schedule(2, 1e-3, 0.9999, 1.0).unwrap();
    let mut policies: Vec<_> = (0..2)
        .map(|i| ScorePolicy::new(i, ScoreNet::new(&format!("pi{i}"), 1, 1, &cfg, &mut rng).unwrap(), schedule.clone()))
        .collect();
    let critic = QuadraticCritic { target: vec![0.3, -0.2] };
    let states = DenseArray::matrix(4, 1, vec![0.1, -0.7, 0.4, 1.2]);
    // keep samples away from the box edges where the clamp has a kink
    let noise: Vec<_> = draw_policy_noise(&policies, 4, &mut rng)
        .into_iter()
        .map(|(prior, ns)| (prior.map(|v| 0.3 * v), ns.into_iter().map(|n| n.map(|v| 0.3 * v)).collect()))
        .collect();
    let (_, grads) = objective_value_and_grads(&mut policies, &critic, &states, &noise);

    let h = 1e-5;
    let (mut num, mut den) = (0.0, 0.0);
    for agent in 0..2 {
        for k in 0..policies[agent].params().len() {
            let (id, len) = {
                let p = policies[agent].params()[k];
                (p.id(), p.value.len())
            };
            let analytic = grads.param(id).cloned().unwrap_or_else(|| DenseArray::zeros(&[len]));
            for i in 0..len {
                policies[agent].params_mut()[k].value.data_mut()[i] += h;
                let up = objective_value_and_grads(&mut policies, &critic, &states, &noise).0;
                policies[agent].params_mut()[k].value.data_mut()[i] -= 2.0 * h;
                let down = objective_value_and_grads(&mut policies, &critic, &states, &noise).0;
                policies[agent].params_mut()[k].value.data_mut()[i] += h;
                let fd = (up - down) / (2.0 * h);
                num += (analytic.data()[i] - fd).powi(2);
                den += fd * fd;
            }
        }
    }
    let rel = num.sqrt() / den.sqrt();
    assert!(rel < 1e-4, "relative error {rel}");
}

#[test]
fn quadratic_bowl_pulls_actions_to_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ScoreNetConfig {
        hidden: vec![32, 32],
        time_dim: 8,
        ..ScoreNetConfig::default()
    };
    let schedule = cosine_schedule(8, 1e-3, 0.9999, 1.0).unwrap();
    let mut policies = vec![ScorePolicy::new(0, ScoreNet::new("pi0", 1, 1, &cfg, &mut rng).unwrap(), schedule)];
    let target = 0.5;
    let critic = QuadraticCritic { target: vec![target] };
    let mut opt = Adam::new(AdamConfig {
        lr: 1e-3,
        ..AdamConfig::default()
    });
    let states = DenseArray::zeros(&[128, 1]);
    for _ in 0..2000 {
        update_policies(&mut policies, &mut opt, &critic, &states, 0.05, true, &mut rng).unwrap();
    }
    let probe = DenseArray::zeros(&[2000, 1]);
    let mean = policies[0].sample(&probe, &mut rng).unwrap().action().mean();
    assert!((mean - target).abs() < 0.1, "mean action {mean}");
}

fn bandit_agents(cfg: &TrainerConfig, rng: &mut ChaCha8Rng) -> AgentSet<ScoreNet> {
    let spec = marl_envs::EnvSpec {
        kind: marl_envs::EnvKind::LineSpread,
        n_agents: 1,
        state_dim: 1,
        action_dim: 1,
        episode_length: 1,
        dt: 1.0,
        damping: 0.0,
        world_bound: 1.0,
    };
    AgentSet::new(&spec, cfg, rng).unwrap()
}

fn repeated(t: &Transition, n: usize) -> Batch {
    let refs: Vec<&Transition> = (0..n).map(|_| t).collect();
    Batch::from_transitions(&refs).unwrap()
}

#[test]
fn critic_reaches_deterministic_fixed_point() {
    let cfg = TrainerConfig {
        gamma: 0.0,
        ..small_config()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut agents = bandit_agents(&cfg, &mut rng);
    let t = Transition {
        state: vec![0.3],
        action: vec![-0.2],
        reward: 1.0,
        next_state: vec![0.3],
        done: false,
        time_limit: false,
    };
    let batch = repeated(&t, 32);
    for _ in 0..2000 {
        update_critic(&mut agents, &batch, &cfg, &mut rng).unwrap();
    }
    let probs = agents
        .critic
        .probs(&DenseArray::row(vec![0.3]), &DenseArray::row(vec![-0.2]))
        .unwrap();
    let q = dist_critic::q_mean(probs.row_slice(0), agents.critic.support());
    assert!((q - 1.0).abs() < 0.05, "q_mean {q}");
}

#[test]
fn critic_update_leaves_policies_untouched() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut agents = bandit_agents(&cfg, &mut rng);
    let before: Vec<DenseArray> = agents.policies[0].params().iter().map(|p| p.value.clone()).collect();
    let t = Transition {
        state: vec![0.1],
        action: vec![0.4],
        reward: -0.5,
        next_state: vec![0.2],
        done: false,
        time_limit: true,
    };
    update_critic(&mut agents, &repeated(&t, 16), &cfg, &mut rng).unwrap();
    for (p, v) in agents.policies[0].params().iter().zip(&before) {
        assert!(p.grad.data().iter().all(|&g| g == 0.0), "{} has gradient", p.name());
        assert_eq!(&p.value, v);
    }
    for p in agents.targets[0].params() {
        assert!(p.grad.data().iter().all(|&g| g == 0.0));
    }
    assert_eq!(agents.critic_opt.steps(), 1);
    assert_eq!(agents.actor_opt.steps(), 0);
}

fn temperature(target: f64) -> (TemperatureState, Adam) {
    (
        TemperatureState::new(1.0, target).unwrap(),
        Adam::new(AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        }),
    )
}

#[test]
fn temperature_fixed_at_target() {
    let (mut t, mut opt) = temperature(2.0);
    update_temperature(&mut t, &mut opt, 2.0).unwrap();
    assert_eq!(t.alpha(), 1.0);
}

#[test]
fn temperature_rises_below_target() {
    let (mut t, mut opt) = temperature(2.0);
    let mut last = t.alpha();
    for _ in 0..100 {
        update_temperature(&mut t, &mut opt, 0.5).unwrap();
        assert!(t.alpha() > last);
        last = t.alpha();
    }
}

#[test]
fn temperature_falls_above_target() {
    let (mut t, mut opt) = temperature(2.0);
    let mut last = t.alpha();
    for _ in 0..100 {
        update_temperature(&mut t, &mut opt, 4.0).unwrap();
        assert!(t.alpha() < last && t.alpha() > 0.0);
        last = t.alpha();
    }
}

fn single_net(rng: &mut ChaCha8Rng) -> ScorePolicy<ScoreNet> {
    let cfg = ScoreNetConfig {
        hidden: vec![4],
        time_dim: 2,
        ..ScoreNetConfig::default()
    };
    ScorePolicy::new(0, ScoreNet::new("pi0", 2, 1, &cfg, rng).unwrap(), cosine_schedule(2, 1e-3, 0.9999, 1.0).unwrap())
}

fn set_all(p: &mut ScorePolicy<ScoreNet>, v: f64) {
    for q in p.params_mut() {
        q.value.fill(v);
    }
}

#[test]
fn target_blend_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let online = single_net(&mut rng);
    let mut target = single_net(&mut rng);
    blend_into(&mut target, &online, 0.0).unwrap();
    for (a, b) in target.state().iter().zip(online.state()) {
        assert_eq!(a.1.data(), b.1.data());
    }

    let mut other = single_net(&mut rng);
    let snapshot = other.state();
    blend_into(&mut other, &online, 1.0).unwrap();
    assert_eq!(other.state(), snapshot);

    let mut zero = single_net(&mut rng);
    let mut two = single_net(&mut rng);
    set_all(&mut zero, 0.0);
    set_all(&mut two, 2.0);
    blend_into(&mut zero, &two, 0.5).unwrap();
    assert!(zero.params().iter().all(|p| p.value.data().iter().all(|&v| v == 1.0)));
}

#[test]
fn target_blend_rejects_mismatched_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = single_net(&mut rng);
    let cfg = ScoreNetConfig {
        hidden: vec![6],
        time_dim: 2,
        ..ScoreNetConfig::default()
    };
    let mut b = ScorePolicy::new(0, ScoreNet::new("pi0", 2, 1, &cfg, &mut rng).unwrap(), a.schedule.clone());
    assert!(blend_into(&mut b, &a, 0.0).is_err());
}

#[test]
fn agent_checkpoint_round_trip() {
    let cfg = small_config();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut agents = bandit_agents(&cfg, &mut rng);
    set_all(&mut agents.targets[0], 0.25);
    agents.temperature.log_alpha.value = DenseArray::scalar(-1.5);
    let ckpt = agents.checkpoint();
    let mut fresh = bandit_agents(&cfg, &mut ChaCha8Rng::seed_from_u64(10));
    fresh.load_checkpoint(&ckpt).unwrap();
    assert_eq!(fresh.checkpoint(), ckpt);
    assert_eq!(fresh.alpha(), (-1.5f64).exp());
}
