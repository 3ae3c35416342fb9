use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Discretized noise grid shared by the forward and reverse processes.
///
/// Step `h` (1-based) connects `a_{h-1}` and `a_h` and carries `beta(h)` in
/// both directions. Time runs over `[0, 1]`, so `delta = 1 / H`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    delta: f64,
    eta: f64,
}

impl NoiseSchedule {
    pub fn new(beta: Vec<f64>, eta: f64) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Config(format!("diffusion scale must be positive, got {eta}")));
        }
        let delta = 1.0 / beta.len() as f64;
        for (i, &b) in beta.iter().enumerate() {
            if !(b > 0.0 && b * delta < 1.0) {
                return Err(Error::Config(format!(
                    "beta_{} = {b} violates 0 < beta * delta < 1",
                    i + 1
                )));
            }
        }
        if beta.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("beta must be non-decreasing".into()));
        }
        Ok(Self { beta, delta, eta })
    }

    /// Number of denoising steps `H`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    /// `beta_h` for `h` in `1..=H`.
    pub fn beta(&self, h: usize) -> f64 {
        self.beta[h - 1]
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// Diffusion time `t_h = h / H`.
    pub fn time(&self, h: usize) -> f64 {
        h as f64 / self.steps() as f64
    }

    /// Transition variance `2 eta^2 beta_h delta`, used by both kernels.
    pub fn variance(&self, h: usize) -> f64 {
        2.0 * self.eta * self.eta * self.beta(h) * self.delta
    }

    /// Forward mean coefficient `1 - beta_h delta`.
    pub fn forward_coeff(&self, h: usize) -> f64 {
        1.0 - self.beta(h) * self.delta
    }

    /// Prior variance `eta^2`.
    pub fn prior_variance(&self) -> f64 {
        self.eta * self.eta
    }
}

/// `beta_h = beta_min + (beta_max - beta_min) * (1 - cos(pi (h - 1/2) / H)) / 2`.
pub fn cosine_schedule(steps: usize, beta_min: f64, beta_max: f64, eta: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("denoising steps must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min < beta_max) {
        return Err(Error::Config(format!(
            "need 0 < beta_min < beta_max, got {beta_min} and {beta_max}"
        )));
    }
    let h_f = steps as f64;
    let beta = (1..=steps)
        .map(|h| {
            let phase = PI * (h as f64 - 0.5) / h_f;
            beta_min + (beta_max - beta_min) * 0.5 * (1.0 - phase.cos())
        })
        .collect();
    NoiseSchedule::new(beta, eta)
}

/// Draws `a_H ~ N(0, eta^2 I)`.
pub fn sample_prior(action_dim: usize, eta: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..action_dim)
        .map(|_| eta * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// One forward (noising) step `a_{h-1} -> a_h` with explicit noise.
pub fn forward_step_with_noise(a: &[f64], h: usize, schedule: &NoiseSchedule, eps: &[f64]) -> Vec<f64> {
    let c = schedule.forward_coeff(h);
    a.iter().zip(eps).map(|(x, e)| c * x + e).collect()
}

/// One forward (noising) step `a_{h-1} -> a_h` with `eps ~ N(0, 2 eta^2 beta_h delta)`.
pub fn forward_step(a: &[f64], h: usize, schedule: &NoiseSchedule, rng: &mut impl Rng) -> Vec<f64> {
    let sd = schedule.variance(h).sqrt();
    let eps: Vec<f64> = (0..a.len())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    forward_step_with_noise(a, h, schedule, &eps)
}

/// `log N(x; mean, var I)`.
pub fn gaussian_log_density(x: &[f64], mean: &[f64], var: f64) -> Result<f64> {
    if !(var > 0.0) {
        return Err(Error::InvalidVariance(var));
    }
    if x.len() != mean.len() {
        return Err(Error::Config(format!(
            "density arguments differ in length: {} vs {}",
            x.len(),
            mean.len()
        )));
    }
    let d = x.len() as f64;
    let sq: f64 = x.iter().zip(mean).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(-0.5 * d * (2.0 * PI * var).ln() - sq / (2.0 * var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_step_is_midpoint() {
        let s = cosine_schedule(1, 1e-3, 0.9, 1.0).unwrap();
        assert!((s.beta(1) - (1e-3 + 0.5 * (0.9 - 1e-3))).abs() < 1e-15);
        assert_eq!(s.delta(), 1.0);
    }

    #[test]
    fn eight_step_first_beta() {
        let s = cosine_schedule(8, 1e-3, 0.9999, 1.0).unwrap();
        let expect = 1e-3 + (0.9999 - 1e-3) * 0.5 * (1.0 - (PI / 16.0).cos());
        assert!((s.beta(1) - expect).abs() < 1e-15);
        assert!(s.betas().windows(2).all(|w| w[0] < w[1]));
        assert!(s.betas().iter().all(|&b| (1e-3..=0.9999).contains(&b)));
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(cosine_schedule(0, 1e-3, 0.9, 1.0).is_err());
        assert!(cosine_schedule(4, 0.5, 0.1, 1.0).is_err());
        assert!(cosine_schedule(4, 1e-3, 0.9, 0.0).is_err());
        // beta * delta must stay below 1
        assert!(cosine_schedule(1, 1e-3, 3.0, 1.0).is_err());
    }

    #[test]
    fn zero_eta_prior_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_prior(3, 0.0, &mut rng), vec![0.0; 3]);
    }

    #[test]
    fn prior_is_seeded() {
        let a = sample_prior(4, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_prior(4, 1.0, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn forward_mean_map() {
        // beta * delta = 0.1 with H = 1
        let s = NoiseSchedule::new(vec![0.1], 1.0).unwrap();
        assert!((forward_step_with_noise(&[1.0], 1, &s, &[0.0])[0] - 0.9).abs() < 1e-15);
        assert_eq!(forward_step_with_noise(&[0.0], 1, &s, &[0.0]), vec![0.0]);
    }

    #[test]
    fn log_density_values() {
        let c = -0.5 * (2.0 * PI).ln();
        assert!((gaussian_log_density(&[0.3], &[0.3], 1.0).unwrap() - c).abs() < 1e-15);
        assert!((gaussian_log_density(&[1.0], &[0.0], 1.0).unwrap() - (c - 0.5)).abs() < 1e-15);
        assert!(gaussian_log_density(&[1.0], &[0.0], 0.0).is_err());
        assert!(gaussian_log_density(&[1.0], &[0.0], -1.0).is_err());
    }
}
