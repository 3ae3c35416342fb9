use crate::error::{Error, Result};

/// Equally spaced atoms on `[-v_max, v_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueSupport {
    v_max: f64,
    atoms: Vec<f64>,
    gap: f64,
}

pub fn support_atoms(v_max: f64, n_atoms: usize) -> Result<ValueSupport> {
    if n_atoms < 2 {
        return Err(Error::Config(format!("need at least 2 atoms, got {n_atoms}")));
    }
    if !(v_max > 0.0 && v_max.is_finite()) {
        return Err(Error::Config(format!("v_max must be positive, got {v_max}")));
    }
    let gap = 2.0 * v_max / (n_atoms - 1) as f64;
    let mut atoms: Vec<f64> = (0..n_atoms).map(|j| -v_max + j as f64 * gap).collect();
    // pin the endpoints and the symmetry exactly
    for j in 0..n_atoms / 2 {
        atoms[n_atoms - 1 - j] = -atoms[j];
    }
    if n_atoms % 2 == 1 {
        atoms[n_atoms / 2] = 0.0;
    }
    atoms[0] = -v_max;
    atoms[n_atoms - 1] = v_max;
    Ok(ValueSupport { v_max, atoms, gap })
}

impl ValueSupport {
    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn v_min(&self) -> f64 {
        -self.v_max
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn gap(&self) -> f64 {
        self.gap
    }
}

/// Probabilities over a [`ValueSupport`].
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalValueDistribution {
    probs: Vec<f64>,
}

impl CategoricalValueDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config("probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }
}

/// `sum_j p_j z_j`.
pub fn q_mean(probs: &[f64], support: &ValueSupport) -> f64 {
    probs.iter().zip(support.atoms()).map(|(p, z)| p * z).sum()
}

/// Shifted atoms `r + (1 - done) gamma (z_j + alpha * elbo_sum)`; the
/// probabilities carry over unchanged.
pub fn bellman_target(
    reward: f64,
    done: bool,
    next_probs: &[f64],
    support: &ValueSupport,
    gamma: f64,
    alpha: f64,
    elbo_sum: f64,
) -> (Vec<f64>, Vec<f64>) {
    let discount = if done { 0.0 } else { gamma };
    let shifted = support
        .atoms()
        .iter()
        .map(|z| reward + discount * (z + alpha * elbo_sum))
        .collect();
    (shifted, next_probs.to_vec())
}

/// Splits each shifted atom's mass between its two neighbouring support atoms
/// in proportion to proximity, clipping to the support range first.
pub fn project_to_support(shifted: &[f64], probs: &[f64], support: &ValueSupport) -> Vec<f64> {
    let m = support.len();
    let mut out = vec![0.0; m];
    project_into(shifted, probs, support, &mut out);
    out
}

pub(crate) fn project_into(shifted: &[f64], probs: &[f64], support: &ValueSupport, out: &mut [f64]) {
    let m = support.len();
    let (lo, hi) = (support.v_min(), support.v_max());
    for (&z, &p) in shifted.iter().zip(probs) {
        let z = z.clamp(lo, hi);
        let b = ((z - lo) / support.gap()).clamp(0.0, (m - 1) as f64);
        let l = b.floor() as usize;
        let u = (l + 1).min(m - 1);
        let frac = b - l as f64;
        if l == u || frac == 0.0 {
            out[l] += p;
        } else {
            let upper = p * frac;
            out[u] += upper;
            out[l] += p - upper;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_atoms() {
        let s = support_atoms(1.0, 3).unwrap();
        assert_eq!(s.atoms(), &[-1.0, 0.0, 1.0]);
        assert!(support_atoms(1.0, 1).is_err());
        assert!(support_atoms(0.0, 5).is_err());
    }

    #[test]
    fn wide_support_gap() {
        let s = support_atoms(1200.0, 101).unwrap();
        assert!((s.gap() - 24.0).abs() < 1e-12);
        let rev: Vec<f64> = s.atoms().iter().rev().map(|z| -z).collect();
        assert_eq!(rev, s.atoms());
    }

    #[test]
    fn target_cases() {
        let s = support_atoms(20.0, 5).unwrap();
        let probs = vec![0.1, 0.2, 0.3, 0.2, 0.2];
        let (z, p) = bellman_target(0.7, false, &probs, &s, 0.0, 0.5, 3.0);
        assert!(z.iter().all(|&x| x == 0.7));
        assert_eq!(p, probs);
        let (zd, _) = bellman_target(0.7, true, &probs, &s, 0.99, 0.5, 3.0);
        assert_eq!(z, zd);
        let s10 = support_atoms(10.0, 3).unwrap();
        let (z10, _) = bellman_target(1.0, false, &[0.0, 0.0, 1.0], &s10, 0.99, 0.0, 5.0);
        assert!((z10[2] - 10.9).abs() < 1e-12);
    }

    #[test]
    fn projection_cases() {
        let s = support_atoms(1.0, 3).unwrap();
        assert_eq!(project_to_support(&[0.0], &[1.0], &s), vec![0.0, 1.0, 0.0]);
        assert_eq!(project_to_support(&[0.5], &[1.0], &s), vec![0.0, 0.5, 0.5]);
        assert_eq!(project_to_support(&[101.0], &[1.0], &s), vec![0.0, 0.0, 1.0]);
        assert_eq!(project_to_support(&[-7.0], &[1.0], &s), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn q_mean_cases() {
        let s = support_atoms(3.0, 7).unwrap();
        assert!(q_mean(&[1.0 / 7.0; 7], &s).abs() < 1e-15);
        let mut top = vec![0.0; 7];
        top[6] = 1.0;
        assert_eq!(q_mean(&top, &s), 3.0);
    }

    #[test]
    fn distribution_validation() {
        assert!(CategoricalValueDistribution::new(vec![0.5, 0.5]).is_ok());
        assert!(CategoricalValueDistribution::new(vec![0.5, 0.6]).is_err());
        assert!(CategoricalValueDistribution::new(vec![1.5, -0.5]).is_err());
    }
}
