//! Density-based annealing of a categorical mixture.
//!
//! Starting from many components seeded around random centers, each level
//! fits the mixture by EM, records its log-likelihood, AIC, BIC and mean
//! density, then keeps only the densest components for the next (smaller)
//! level. The level that best satisfies the chosen criterion is returned.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{component_density, weighted_average_density, DensityMetric};
use crate::em::{self, EmConfig};
use crate::error::{Error, Result};
use crate::model::{ClusterAssignment, Component, Dataset, MixtureModel};
use crate::selection::{aic, bic, degrees_of_freedom};

/// Relative tolerance within which two mean densities are treated as tied
/// during selection; ties go to the smaller `k`.
pub const DENSITY_TIE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Aic,
    #[default]
    Bic,
    Density,
}

/// How initial component centers are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CenterSampling {
    /// Each attribute independently from its global marginal.
    #[default]
    Marginal,
    /// A whole record drawn from the data.
    Row,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    pub k_max: usize,
    pub beta: f64,
    pub prune_metric: DensityMetric,
    pub criterion: Criterion,
    pub seed: u64,
    pub center_sampling: CenterSampling,
    pub em: EmConfig,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            k_max: 10,
            beta: 1.0,
            prune_metric: DensityMetric::Entropy,
            criterion: Criterion::Bic,
            seed: 0,
            center_sampling: CenterSampling::Marginal,
            em: EmConfig::default(),
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_max < 1 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if !(self.beta >= 1.0) || !self.beta.is_finite() {
            return Err(Error::Config("beta must be a finite number >= 1".into()));
        }
        self.em.validate()
    }
}

/// Diagnostics recorded for one annealing level, right after EM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub k: usize,
    pub log_likelihood: f64,
    pub aic: f64,
    pub bic: f64,
    pub mean_density: f64,
    pub em_iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealTrace {
    pub levels: Vec<Level>,
    pub selected_k: usize,
}

impl AnnealTrace {
    pub fn selected(&self) -> &Level {
        self.levels
            .iter()
            .find(|l| l.k == self.selected_k)
            .expect("selected level is part of the trace")
    }
}

#[derive(Debug, Clone)]
pub struct AnnealOutcome {
    pub trace: AnnealTrace,
    pub model: MixtureModel,
    pub assignment: ClusterAssignment,
    /// Fitted model at every level, in trace order.
    pub level_models: Vec<MixtureModel>,
}

/// Descending list of component counts visited, from the recurrence
/// `k[0] = 1`, `k[i+1] = ⌊k[i] + β^i⌋`, truncated at `k_max`.
pub fn schedule(k_max: usize, beta: f64) -> Result<Vec<usize>> {
    if k_max < 1 {
        return Err(Error::Config("k_max must be at least 1".into()));
    }
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::Config("beta must be a finite number >= 1".into()));
    }
    let mut ks = vec![1usize];
    let mut step = 1.0f64;
    loop {
        let last = *ks.last().unwrap();
        let next = (last as f64 + step).floor();
        if next > k_max as f64 {
            break;
        }
        let next = next as usize;
        if next > last {
            ks.push(next);
        }
        step *= beta;
    }
    ks.reverse();
    Ok(ks)
}

/// `k` components, each the global distribution plus one random center
/// inserted `W` times (so every component starts with effective size
/// `2W`), at equal priors.
pub fn initialize(data: &Dataset, k: usize, seed: u64, sampling: CenterSampling) -> Result<MixtureModel> {
    if k < 1 {
        return Err(Error::Config("need at least one component".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let global = data.global_counts();
    let total = data.total_weight();
    let marginals = global
        .iter()
        .map(|c| WeightedIndex::new(c).map_err(|e| Error::Dataset(format!("degenerate marginal: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let rows = match sampling {
        CenterSampling::Row => Some(match data.weights() {
            Some(w) => WeightedIndex::new(w).map_err(|e| Error::Dataset(e.to_string()))?,
            None => WeightedIndex::new(vec![1.0; data.num_records()]).map_err(|e| Error::Dataset(e.to_string()))?,
        }),
        CenterSampling::Marginal => None,
    };
    let components = (0..k)
        .map(|_| {
            let center: Vec<usize> = match &rows {
                Some(rows) => data.record(rows.sample(&mut rng)).iter().map(|&c| c as usize).collect(),
                None => marginals.iter().map(|d| d.sample(&mut rng)).collect(),
            };
            let mut counts = global.clone();
            for (m, &v) in center.iter().enumerate() {
                counts[m][v] += total;
            }
            Component {
                counts,
                effective_size: 2.0 * total,
                prior: 1.0 / k as f64,
            }
        })
        .collect();
    MixtureModel::new(components)
}

/// Entropy and Cartesian densities of every component; empty components
/// score zero.
fn densities(model: &MixtureModel) -> Vec<(f64, f64)> {
    model
        .components
        .iter()
        .map(|c| match component_density(c) {
            Ok(r) => (r.density, r.cartesian_density),
            Err(_) => (0.0, 0.0),
        })
        .collect()
}

/// Keeps the `keep` densest components (stable on ties) and renormalizes
/// their priors.
pub fn prune(model: &MixtureModel, keep: usize, metric: DensityMetric) -> MixtureModel {
    let dens = densities(model);
    let score = |i: usize| match metric {
        DensityMetric::Entropy => dens[i].0,
        DensityMetric::Cartesian => dens[i].1,
    };
    let mut order: Vec<usize> = (0..model.k()).collect();
    order.sort_by(|&a, &b| score(b).total_cmp(&score(a)));
    let mut pruned = MixtureModel {
        components: order[..keep.min(order.len())]
            .iter()
            .map(|&i| model.components[i].clone())
            .collect(),
        log_likelihood: f64::NAN,
        converged: false,
        em_iterations: 0,
    };
    pruned.normalize_priors();
    pruned
}

/// Picks the level index that best satisfies `criterion`. Ties, and mean
/// densities within [`DENSITY_TIE_TOLERANCE`] of the best, go to the
/// smallest `k`.
pub fn select(levels: &[Level], criterion: Criterion) -> usize {
    // Levels are in descending k, so scan from the back for smallest k first.
    let by_min = |key: fn(&Level) -> f64| {
        let mut best = levels.len() - 1;
        for i in (0..levels.len()).rev() {
            if key(&levels[i]) < key(&levels[best]) {
                best = i;
            }
        }
        best
    };
    match criterion {
        Criterion::Aic => by_min(|l| if l.aic.is_nan() { f64::INFINITY } else { l.aic }),
        Criterion::Bic => by_min(|l| if l.bic.is_nan() { f64::INFINITY } else { l.bic }),
        Criterion::Density => {
            let max = levels
                .iter()
                .map(|l| l.mean_density)
                .filter(|d| !d.is_nan())
                .fold(f64::NEG_INFINITY, f64::max);
            let cutoff = max - DENSITY_TIE_TOLERANCE * max.abs();
            (0..levels.len())
                .rev()
                .find(|&i| levels[i].mean_density >= cutoff)
                .unwrap_or(levels.len() - 1)
        }
    }
}

/// Runs the full annealing procedure.
///
/// The initial mixture has as many components as the first schedule
/// value. Each level is recorded immediately after EM, before pruning.
pub fn anneal(data: &Dataset, config: &AnnealConfig) -> Result<AnnealOutcome> {
    config.validate()?;
    let ks = schedule(config.k_max, config.beta)?;
    let schema = data.schema();
    let total = data.total_weight();
    let mut model = initialize(data, ks[0], config.seed, config.center_sampling)?;
    let mut levels = Vec::with_capacity(ks.len());
    let mut level_models = Vec::with_capacity(ks.len());
    for (li, &k) in ks.iter().enumerate() {
        debug_assert_eq!(model.k(), k);
        model = em::fit(model, data, &config.em)?;
        let dof = degrees_of_freedom(schema, k);
        let ll = model.log_likelihood;
        levels.push(Level {
            k,
            log_likelihood: ll,
            aic: aic(ll, dof),
            bic: bic(ll, dof, total),
            mean_density: weighted_average_density(&model),
            em_iterations: model.em_iterations,
            converged: model.converged,
        });
        if let Some(&next) = ks.get(li + 1) {
            let pruned = prune(&model, next, config.prune_metric);
            level_models.push(std::mem::replace(&mut model, pruned));
        } else {
            level_models.push(model.clone());
        }
    }
    let best = select(&levels, config.criterion);
    let chosen = level_models[best].clone();
    let (posteriors, _) = em::e_step(&chosen, data, config.em.smoothing);
    Ok(AnnealOutcome {
        trace: AnnealTrace {
            selected_k: levels[best].k,
            levels,
        },
        assignment: ClusterAssignment::from_posteriors(posteriors, false),
        model: chosen,
        level_models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Schema;
    use approx::assert_abs_diff_eq;

    #[test]
    fn unit_beta_visits_every_k() {
        assert_eq!(schedule(5, 1.0).unwrap(), vec![5, 4, 3, 2, 1]);
        assert_eq!(schedule(1, 1.0).unwrap(), vec![1]);
    }

    #[test]
    fn doubling_schedule() {
        assert_eq!(schedule(23, 2.0).unwrap(), vec![16, 8, 4, 2, 1]);
    }

    #[test]
    fn fractional_beta_floors_each_step() {
        assert_eq!(schedule(31, 1.5).unwrap(), vec![31, 20, 13, 8, 5, 3, 2, 1]);
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(schedule(0, 1.0).is_err());
        assert!(schedule(5, 0.5).is_err());
        assert!(schedule(5, f64::NAN).is_err());
    }

    fn skewed_binary() -> Dataset {
        let schema = Schema::from_cardinalities(&[2]).unwrap();
        let rows = (0..100).map(|i| vec![u32::from(i >= 90)]).collect();
        Dataset::new(schema, rows).unwrap()
    }

    #[test]
    fn initial_component_mixes_global_and_center() {
        let data = skewed_binary();
        let model = initialize(&data, 6, 1, CenterSampling::Marginal).unwrap();
        for c in &model.components {
            assert_eq!(c.effective_size, 200.0);
            assert_abs_diff_eq!(c.prior, 1.0 / 6.0);
            let expected = if c.counts[0][0] > 100.0 { vec![190.0, 10.0] } else { vec![90.0, 110.0] };
            assert_eq!(c.counts[0], expected);
        }
        let c0 = Component::from_counts(vec![vec![190.0, 10.0]], 1.0);
        assert_abs_diff_eq!(c0.probability(0, 0, 0.0).unwrap(), 0.95);
    }

    #[test]
    fn initialization_is_deterministic() {
        let data = skewed_binary();
        for sampling in [CenterSampling::Marginal, CenterSampling::Row] {
            let a = initialize(&data, 8, 42, sampling).unwrap();
            let b = initialize(&data, 8, 42, sampling).unwrap();
            assert_eq!(a.components, b.components);
        }
    }

    #[test]
    fn single_component_run() {
        let data = skewed_binary();
        let cfg = AnnealConfig { k_max: 1, ..AnnealConfig::default() };
        let out = anneal(&data, &cfg).unwrap();
        assert_eq!(out.trace.levels.len(), 1);
        assert_eq!(out.trace.selected_k, 1);
        assert_eq!(out.model.components[0].counts[0], vec![90.0, 10.0]);
    }

    fn level(k: usize, aic: f64, bic: f64, rho: f64) -> Level {
        Level {
            k,
            log_likelihood: 0.0,
            aic,
            bic,
            mean_density: rho,
            em_iterations: 1,
            converged: true,
        }
    }

    #[test]
    fn selection_rules() {
        let levels = vec![
            level(4, 10.0, 30.0, 1.0),
            level(3, 9.0, 20.0, 1.0 - 1e-9),
            level(2, 9.0, 25.0, 0.8),
            level(1, 12.0, 26.0, 0.3),
        ];
        assert_eq!(levels[select(&levels, Criterion::Aic)].k, 2);
        assert_eq!(levels[select(&levels, Criterion::Bic)].k, 3);
        assert_eq!(levels[select(&levels, Criterion::Density)].k, 3);
    }

    #[test]
    fn pruning_keeps_densest_and_renormalizes() {
        let tight = Component::from_counts(vec![vec![10.0, 0.0]], 0.2);
        let loose = Component::from_counts(vec![vec![5.0, 5.0]], 0.5);
        let empty = Component::from_counts(vec![vec![0.0, 0.0]], 0.0);
        let tight2 = Component::from_counts(vec![vec![0.0, 10.0]], 0.3);
        let model = MixtureModel::new(vec![loose, tight.clone(), empty, tight2.clone()]).unwrap();
        let pruned = prune(&model, 2, DensityMetric::Entropy);
        assert_eq!(pruned.k(), 2);
        assert_eq!(pruned.components[0].counts, tight.counts);
        assert_eq!(pruned.components[1].counts, tight2.counts);
        assert_abs_diff_eq!(pruned.components[0].prior, 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(pruned.priors().iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }
}
