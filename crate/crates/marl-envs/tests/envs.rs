use marl_envs::{
    coopnav_reward, linespread_reward, make_env, oracle_return, permutations, zero_action_return,
    CoopNav, CoverageGrid, EnvConfig, Environment, LineSpread,
};
use proptest::prelude::*;

#[test]
fn agents_on_landmarks_score_zero() {
    let mut env = CoopNav::new(EnvConfig::coopnav(2)).unwrap();
    env.set_layout(&[[0.5, 0.5], [-0.5, -0.3]], &[[-0.5, -0.3], [0.5, 0.5]]).unwrap();
    assert_eq!(env.reward(), 0.0);
    let out = env.step(&[0.0; 4]).unwrap();
    assert_eq!(out.reward, 0.0);
}

#[test]
fn coincident_agents_collide() {
    let r = coopnav_reward(&[[0.1, 0.1], [0.1, 0.1]], &[[0.1, 0.1], [0.1, 0.1]], 0.2, 1.0);
    assert_eq!(r, -1.0);
}

#[test]
fn zero_actions_from_rest_are_static() {
    let mut env = CoopNav::new(EnvConfig::coopnav(3)).unwrap();
    let s0 = env.reset(4);
    let r0 = env.reward();
    for _ in 0..25 {
        let out = env.step(&[0.0; 6]).unwrap();
        assert_eq!(out.state, s0);
        assert_eq!(out.reward, r0);
    }
    assert!(env.step(&[0.0; 6]).is_err());
}

#[test]
fn episode_has_fixed_length() {
    let mut env = make_env(&EnvConfig::linespread()).unwrap();
    env.reset(0);
    let mut steps = 0;
    loop {
        steps += 1;
        if env.step(&[0.3, -0.3]).unwrap().done {
            break;
        }
    }
    assert_eq!(steps, 25);
    assert!(env.step(&[0.0]).is_err());
}

#[test]
fn linespread_values() {
    assert_eq!(linespread_reward(&[-1.0, 1.0]), 0.0);
    assert_eq!(linespread_reward(&[1.0, -1.0]), 0.0);
    assert_eq!(linespread_reward(&[0.0, 0.0]), -2.0);
}

#[test]
fn linespread_optima_are_exactly_two() {
    // grid search at resolution 0.01 over [-2, 2]^2
    let mut best = f64::NEG_INFINITY;
    let mut argmax = Vec::new();
    for i in -200..=200 {
        for j in -200..=200 {
            let x = [i as f64 / 100.0, j as f64 / 100.0];
            let r = linespread_reward(&x);
            if r > best + 1e-12 {
                best = r;
                argmax = vec![(i, j)];
            } else if (r - best).abs() <= 1e-12 {
                argmax.push((i, j));
            }
        }
    }
    assert_eq!(best, 0.0);
    assert_eq!(argmax, vec![(-100, 100), (100, -100)]);
}

#[test]
fn oracle_on_landmarks_matches_static_return() {
    let mut cfg = EnvConfig::coopnav(2);
    cfg.init_range = 0.0;
    // all agents and landmarks at the origin: oracle has nothing to do
    assert_eq!(oracle_return(&cfg, 3).unwrap(), zero_action_return(&cfg, 3).unwrap());
}

#[test]
fn oracle_dominates_zero_action() {
    for n in [2, 3] {
        let cfg = EnvConfig::coopnav(n);
        for seed in 0..100 {
            let o = oracle_return(&cfg, seed).unwrap();
            let z = zero_action_return(&cfg, seed).unwrap();
            assert!(o >= z, "n={n} seed={seed}: oracle {o} below zero-action {z}");
        }
    }
    let cfg = EnvConfig::linespread();
    for seed in 0..100 {
        assert!(oracle_return(&cfg, seed).unwrap() >= zero_action_return(&cfg, seed).unwrap());
    }
}

#[test]
fn oracle_is_deterministic() {
    let cfg = EnvConfig::coopnav(2);
    assert_eq!(oracle_return(&cfg, 17).unwrap(), oracle_return(&cfg, 17).unwrap());
}

#[test]
fn permutations_are_complete() {
    assert_eq!(permutations(3).len(), 6);
    assert_eq!(permutations(4).len(), 24);
}

#[test]
fn coverage_is_monotone_over_a_trajectory() {
    let mut env = CoopNav::new(EnvConfig::coopnav(2)).unwrap();
    let mut grid = CoverageGrid::new((0, 1), [-2.0, -2.0], [2.0, 2.0], 0.5).unwrap();
    let mut s = env.reset(1);
    let mut last = 0.0;
    for t in 0..25 {
        grid.update(&s).unwrap();
        assert!(grid.fraction() >= last);
        last = grid.fraction();
        let a = (t as f64 * 0.7).sin();
        s = env.step(&[a, -a, 1.0, 0.5]).unwrap().state;
    }
    assert!(grid.visited_count() <= grid.total_cells());
}

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    move || {
        x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((x >> 11) as f64 / (1u64 << 53) as f64) * 3.0 - 1.5
    }
}

proptest! {
    #[test]
    fn coopnav_is_deterministic_and_bounded(seed in any::<u64>(), n in 1usize..=4) {
        let cfg = EnvConfig::coopnav(n);
        let mut a = CoopNav::new(cfg.clone()).unwrap();
        let mut b = CoopNav::new(cfg).unwrap();
        prop_assert_eq!(a.reset(seed), b.reset(seed));
        let lower = -(n as f64 * a.spec().world_diag() + (n * n) as f64);
        let mut draw = lcg(seed);
        for _ in 0..25 {
            let act: Vec<f64> = (0..2 * n).map(|_| draw()).collect();
            let oa = a.step(&act).unwrap();
            let ob = b.step(&act).unwrap();
            prop_assert_eq!(&oa, &ob);
            prop_assert!(oa.reward <= 0.0 && oa.reward >= lower);
            prop_assert!(oa.state.iter().all(|v| v.is_finite() && v.abs() <= 2.0 + 1.0));
        }
    }

    #[test]
    fn linespread_reward_is_swap_symmetric(x in -2.0f64..2.0, y in -2.0f64..2.0) {
        prop_assert_eq!(linespread_reward(&[x, y]), linespread_reward(&[y, x]));
    }

    #[test]
    fn linespread_is_deterministic(seed in any::<u64>()) {
        let mut a = LineSpread::new(EnvConfig::linespread()).unwrap();
        let mut b = LineSpread::new(EnvConfig::linespread()).unwrap();
        prop_assert_eq!(a.reset(seed), b.reset(seed));
        let mut draw = lcg(seed);
        for _ in 0..25 {
            let act = [draw(), draw()];
            prop_assert_eq!(a.step(&act).unwrap(), b.step(&act).unwrap());
        }
    }
}
