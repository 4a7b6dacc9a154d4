//! Entropy-based effective length, volume and density of categorical
//! distributions, plus the naive Cartesian density used as a baseline.
//!
//! For a component with effective size `n` and per-attribute entropies
//! `S_m` (nats), the effective volume is `exp(Σ S_m)` and the density is
//! `n · exp(-Σ S_m)`. For duplicate-free data the density cannot exceed 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::x_ln_x;
use crate::model::{Component, MixtureModel};

const NORMALIZATION_TOL: f64 = 1e-6;

/// A value counts as observed when its count exceeds this fraction of the
/// component's effective size.
pub const SUPPORT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub per_attribute_entropy: Vec<f64>,
    pub effective_volume: f64,
    pub density: f64,
    pub cartesian_density: f64,
}

/// Which density ranks components during pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DensityMetric {
    #[default]
    Entropy,
    Cartesian,
}

/// Shannon entropy in nats, `0 ln 0 = 0`.
pub fn entropy(dist: &[f64]) -> Result<f64> {
    let mut sum = 0.0;
    for &p in dist {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::InvalidProbability { value: p });
        }
        sum += p;
    }
    if (sum - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::NotNormalized { sum });
    }
    let s = -dist.iter().map(|&p| x_ln_x(p)).sum::<f64>();
    Ok(s.max(0.0))
}

pub fn effective_length(dist: &[f64]) -> Result<f64> {
    entropy(dist).map(f64::exp)
}

/// Entropy of the distribution proportional to `counts`, computed as
/// `ln T - (1/T) Σ c ln c` so that unnormalized counts need no copy.
pub fn entropy_of_counts(counts: &[f64]) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let s = total.ln() - counts.iter().map(|&c| x_ln_x(c)).sum::<f64>() / total;
    s.max(0.0)
}

pub fn component_density(c: &Component) -> Result<DensityReport> {
    let n = c.effective_size;
    if !(n > 0.0) {
        return Err(Error::EmptyComponent);
    }
    let per_attribute_entropy: Vec<f64> = c.counts.iter().map(|v| entropy_of_counts(v)).collect();
    let total_entropy: f64 = per_attribute_entropy.iter().sum();
    let cutoff = SUPPORT_THRESHOLD * n;
    let support: f64 = c
        .counts
        .iter()
        .map(|v| v.iter().filter(|&&x| x > cutoff).count().max(1) as f64)
        .product();
    Ok(DensityReport {
        effective_volume: total_entropy.exp(),
        density: n * (-total_entropy).exp(),
        cartesian_density: n / support,
        per_attribute_entropy,
    })
}

impl DensityReport {
    pub fn metric(&self, metric: DensityMetric) -> f64 {
        match metric {
            DensityMetric::Entropy => self.density,
            DensityMetric::Cartesian => self.cartesian_density,
        }
    }
}

/// `ρ̄ = Σ α_i ρ_i`; empty components count as density 0.
pub fn weighted_average_density(model: &MixtureModel) -> f64 {
    model
        .components
        .iter()
        .map(|c| component_density(c).map_or(0.0, |r| c.prior * r.density))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn normalized(counts: &[f64]) -> Vec<f64> {
        let t: f64 = counts.iter().sum();
        counts.iter().map(|c| c / t).collect()
    }

    #[test]
    fn entropy_uniform_is_log_len() {
        assert_abs_diff_eq!(entropy(&[0.25; 4]).unwrap(), 4f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(entropy(&[0.25; 4]).unwrap(), 1.386294, epsilon = 1e-6);
    }

    #[test]
    fn entropy_point_mass_is_zero() {
        assert_eq!(entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn entropy_skewed_histogram() {
        // -(2·0.375 ln 0.375 + 2·0.125 ln 0.125), evaluated by hand.
        let expected = -(0.75 * 0.375f64.ln() + 0.25 * 0.125f64.ln());
        let s = entropy(&[0.375, 0.375, 0.125, 0.125]).unwrap();
        assert_abs_diff_eq!(s, expected, epsilon = 1e-15);
        assert_abs_diff_eq!(s, 1.255480, epsilon = 5e-6);
    }

    #[test]
    fn entropy_rejects_bad_input() {
        assert!(matches!(entropy(&[0.5, 0.6]), Err(Error::NotNormalized { .. })));
        assert!(matches!(entropy(&[1.5, -0.5]), Err(Error::InvalidProbability { .. })));
        assert!(entropy(&[f64::NAN]).is_err());
    }

    #[test]
    fn effective_lengths_of_small_histograms() {
        assert_abs_diff_eq!(effective_length(&normalized(&[3.0, 3.0, 1.0, 1.0])).unwrap(), 3.51, epsilon = 5e-3);
        assert_abs_diff_eq!(effective_length(&normalized(&[2.0; 4])).unwrap(), 4.0, epsilon = 1e-12);
        assert_eq!(effective_length(&[0.0, 1.0]).unwrap(), 1.0);
    }

    #[test]
    fn density_of_small_histograms() {
        let left = Component::from_counts(vec![vec![3.0, 3.0, 1.0, 1.0]], 1.0);
        let rho = component_density(&left).unwrap().density;
        assert_abs_diff_eq!(rho, 2.2795, epsilon = 1e-4);
        let right = Component::from_counts(vec![vec![2.0; 4]], 1.0);
        let r = component_density(&right).unwrap();
        assert_abs_diff_eq!(r.density, 2.0, epsilon = 1e-12);
        // Identical support, so the Cartesian metric cannot tell them apart.
        assert_eq!(r.cartesian_density, 2.0);
        assert_eq!(component_density(&left).unwrap().cartesian_density, 2.0);
    }

    #[test]
    fn density_of_full_grid_is_one() {
        let grid = Component::from_counts(vec![vec![2.0, 2.0], vec![2.0, 2.0]], 1.0);
        let r = component_density(&grid).unwrap();
        assert_abs_diff_eq!(r.density, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.effective_volume, 4.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_diagonal_has_density_one() {
        // Points (0,0) twice and (1,1) twice: each marginal is uniform.
        let c = Component::from_counts(vec![vec![2.0, 2.0], vec![2.0, 2.0]], 1.0);
        assert_abs_diff_eq!(component_density(&c).unwrap().density, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_component_is_an_error() {
        let c = Component::from_counts(vec![vec![0.0, 0.0]], 1.0);
        assert!(matches!(component_density(&c), Err(Error::EmptyComponent)));
    }

    #[test]
    fn cartesian_support_ignores_negligible_counts() {
        let c = Component::from_counts(vec![vec![10.0, 1e-13, 0.0]], 1.0);
        assert_eq!(component_density(&c).unwrap().cartesian_density, 10.0 + 1e-13);
    }

    #[test]
    fn weighted_average() {
        let mut single = Component::from_counts(vec![vec![2.0; 4]], 1.0);
        let m = MixtureModel::new(vec![single.clone()]).unwrap();
        assert_abs_diff_eq!(weighted_average_density(&m), 2.0, epsilon = 1e-12);

        // densities 1 and 3 at equal weight.
        single.prior = 0.5;
        let one = Component::from_counts(vec![vec![1.0, 1.0]], 0.5);
        let three = Component::from_counts(vec![vec![3.0]], 0.5);
        let m = MixtureModel::new(vec![one, three]).unwrap();
        assert_abs_diff_eq!(weighted_average_density(&m), 2.0, epsilon = 1e-12);

        let empty = Component::from_counts(vec![vec![0.0]], 0.0);
        let m = MixtureModel::new(vec![single, empty]).unwrap();
        assert_abs_diff_eq!(weighted_average_density(&m), 1.0, epsilon = 1e-12);
    }
}
