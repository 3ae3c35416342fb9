use std::f64::consts::{E, PI};

use diffusion_policy::{
    cosine_schedule, elbo_entropy, NoiseSchedule, ScoreModel, ScoreNet, ScoreNetConfig, ScorePolicy,
    StationaryScore,
};
use ndiff_core::{DenseArray, Module, Parameter, Tape, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// `f(a, s) = w a + u s` on 1-d actions and states.
#[derive(Clone)]
struct LinearScore {
    w: Parameter,
    u: Parameter,
}

impl LinearScore {
    fn new(w: f64, u: f64) -> Self {
        Self {
            w: Parameter::new("w", DenseArray::scalar(w)),
            u: Parameter::new("u", DenseArray::scalar(u)),
        }
    }
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

#[test]
fn single_step_symbolic_expansion() {
    let eta = 0.8;
    let schedule = NoiseSchedule::new(vec![0.6], eta).unwrap();
    let (w, u) = (-0.7, 0.4);
    let p = ScorePolicy::new(0, LinearScore::new(w, u), schedule);
    let s = 0.9;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let traj = p.sample(&DenseArray::row(vec![s]), &mut rng).unwrap();
    let l = elbo_entropy(&traj, &p).unwrap()[0];

    let a1 = traj.iterate(1).data()[0];
    let a0 = traj.iterate(0).data()[0];
    let (beta, delta) = (0.6, 1.0);
    let var = 2.0 * eta * eta * beta * delta;
    let f = w * a1 + u * s;
    let rev_mean = a1 + (beta * a1 + 2.0 * eta * eta * beta * f) * delta;
    assert!((a0 - rev_mean - traj.noise(1).data()[0]).abs() < 1e-14);
    let expect = log_n(a1, (1.0 - beta * delta) * a0, var) - log_n(a1, 0.0, eta * eta) - log_n(a0, rev_mean, var);
    assert!((l - expect).abs() < 1e-12, "{l} vs {expect}");
}

#[test]
fn two_agent_joint_is_sum() {
    let schedule = cosine_schedule(4, 1e-3, 0.9999, 1.0).unwrap();
    let p1 = ScorePolicy::new(0, LinearScore::new(-0.5, 0.2), schedule.clone());
    let p2 = ScorePolicy::new(1, LinearScore::new(-1.2, -0.3), schedule);
    let states = DenseArray::matrix(3, 1, vec![0.1, -0.4, 0.7]);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (t1, l1) = p1.sample_with_elbo(&states, &mut rng).unwrap();
    let (t2, l2) = p2.sample_with_elbo(&states, &mut rng).unwrap();
    assert_eq!(elbo_entropy(&t1, &p1).unwrap(), l1);
    assert_eq!(elbo_entropy(&t2, &p2).unwrap(), l2);
    let joint: Vec<f64> = l1.iter().zip(&l2).map(|(a, b)| a + b).collect();
    for r in 0..3 {
        assert_eq!(joint[r], l1[r] + l2[r]);
    }
    assert!(elbo_entropy(&t1, &ScorePolicy::new(0, LinearScore::new(0.0, 0.0), cosine_schedule(2, 1e-3, 0.9, 1.0).unwrap())).is_err());
}

fn elbo_sum_and_grads<M: ScoreModel>(
    p: &mut ScorePolicy<M>,
    states: &DenseArray,
    prior: &DenseArray,
    noises: &[DenseArray],
    training: bool,
) -> (f64, ndiff_core::Gradients) {
    let mut tape = Tape::new();
    let s = tape.constant(states.clone());
    let chain = if training {
        p.rollout_training(&mut tape, s, prior, noises).unwrap()
    } else {
        p.rollout(&mut tape, s, prior, noises, false).unwrap()
    };
    let l = p.elbo_on_tape(&mut tape, &chain).unwrap();
    let total = tape.sum(l);
    (tape.scalar(total), tape.backward(total).unwrap())
}

#[test]
fn elbo_gradient_matches_finite_differences() {
    for training in [false, true] {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = ScoreNetConfig {
            hidden: vec![6, 6],
            time_dim: 4,
            ..ScoreNetConfig::default()
        };
        let net = ScoreNet::new("pi", 2, 1, &cfg, &mut rng).unwrap();
        let mut p = ScorePolicy::new(0, net, cosine_schedule(2, 1e-3, 0.9999, 1.0).unwrap());
        let states = DenseArray::matrix(3, 2, vec![0.3, -0.1, 0.8, 0.5, -0.6, 0.2]);
        let (prior, noises) = p.draw_noise(3, &mut rng);
        let (_, grads) = elbo_sum_and_grads(&mut p, &states, &prior, &noises, training);

        let h = 1e-5;
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..p.params().len() {
            let (id, len) = (p.params()[k].id(), p.params()[k].value.len());
            let analytic = grads.param(id).cloned().unwrap_or_else(|| DenseArray::zeros(&[len]));
            for i in 0..len {
                p.params_mut()[k].value.data_mut()[i] += h;
                let up = elbo_sum_and_grads(&mut p, &states, &prior, &noises, training).0;
                p.params_mut()[k].value.data_mut()[i] -= 2.0 * h;
                let down = elbo_sum_and_grads(&mut p, &states, &prior, &noises, training).0;
                p.params_mut()[k].value.data_mut()[i] += h;
                let fd = (up - down) / (2.0 * h);
                num += (analytic.data()[i] - fd).powi(2);
                den += fd * fd;
            }
        }
        let rel = num.sqrt() / den.sqrt();
        assert!(rel < 1e-4, "training={training}: relative error {rel}");
    }
}

#[test]
fn prior_term_has_no_parameter_gradient() {
    // a_H is a tape constant, so only the transition terms reach theta
    let p = ScorePolicy::new(0, LinearScore::new(-0.3, 0.1), cosine_schedule(2, 1e-3, 0.9999, 1.0).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let states = DenseArray::matrix(4, 1, vec![0.2, 0.1, -0.5, 0.9]);
    let (prior, noises) = p.draw_noise(4, &mut rng);
    let mut tape = Tape::new();
    let s = tape.constant(states);
    let chain = p.rollout(&mut tape, s, &prior, &noises, false).unwrap();
    let top = chain.iterates[2];
    let lp = diffusion_policy::log_normal_rows(&mut tape, top, 1.0);
    let total = tape.sum(lp);
    let g = tape.backward(total).unwrap();
    assert!(g.param(p.net.w.id()).is_none());
    assert!(g.param(p.net.u.id()).is_none());
}

#[test]
fn stationary_bound_below_gaussian_entropy() {
    let d = 2;
    let entropy = 0.5 * d as f64 * (2.0 * PI * E).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for steps in [8, 64] {
        let net = StationaryScore {
            state_dim: 1,
            action_dim: d,
            eta: 1.0,
        };
        let p = ScorePolicy::new(0, net, cosine_schedule(steps, 1e-3, 0.9999, 1.0).unwrap());
        let n = 10_000;
        let (_, l) = p.sample_with_elbo(&DenseArray::zeros(&[n, 1]), &mut rng).unwrap();
        let mean = l.iter().sum::<f64>() / n as f64;
        let var = l.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(mean <= entropy + 3.0 * se, "H={steps}: {mean} above {entropy}");
        if steps == 64 {
            assert!(mean >= 0.9 * entropy, "H=64: {mean} below 90% of {entropy}");
        }
    }
}
