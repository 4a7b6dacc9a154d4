//! Expectation-maximization for a categorical mixture at fixed `k`.
//!
//! The E-step runs in log space with max subtraction. Records are split
//! into fixed-size chunks that are processed in parallel; per-chunk partial
//! sums are merged in chunk order, so results do not depend on the number
//! of worker threads.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Component, Dataset, MixtureModel};

const CHUNK: usize = 2048;

/// Components whose effective size falls below this fraction of the total
/// weight are reported as starved.
pub const STARVED_FRACTION: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iterations: usize,
    /// Stop when `|ΔlogL| / (|logL| + 1)` drops below this.
    pub rel_tolerance: f64,
    /// Pseudo-count added to every value when probabilities are read,
    /// relative to the component's effective size (floored at one record).
    pub smoothing: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_iterations: 100,
            rel_tolerance: 1e-6,
            smoothing: 1e-9,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.rel_tolerance > 0.0) {
            return Err(Error::Config("rel_tolerance must be positive".into()));
        }
        if !(self.smoothing >= 0.0) || !self.smoothing.is_finite() {
            return Err(Error::Config("smoothing must be a finite nonnegative number".into()));
        }
        Ok(())
    }
}

/// Absolute pseudo-count for a component under relative `smoothing`.
pub fn pseudo_count(c: &Component, smoothing: f64) -> f64 {
    smoothing * c.effective_size.max(1.0)
}

/// Per-component log-probabilities over the flattened value index, with
/// the log prior folded into a separate vector.
struct LogTable {
    k: usize,
    stride: usize,
    log_probs: Vec<f64>,
    log_priors: Vec<f64>,
}

impl LogTable {
    fn new(model: &MixtureModel, data: &Dataset, smoothing: f64) -> Self {
        let stride = data.num_values();
        let mut log_probs = Vec::with_capacity(model.k() * stride);
        for c in &model.components {
            let s = pseudo_count(c, smoothing);
            for counts in &c.counts {
                let denom = c.effective_size + s * counts.len() as f64;
                for &x in counts {
                    let p = if denom > 0.0 { (x + s) / denom } else { 1.0 / counts.len() as f64 };
                    log_probs.push(p.ln());
                }
            }
        }
        LogTable {
            k: model.k(),
            stride,
            log_probs,
            log_priors: model.components.iter().map(|c| c.prior.ln()).collect(),
        }
    }

    /// Fills `out[i] = ln α_i + ln Pr(x | C_i)` for a record given as flat
    /// value indices.
    #[inline]
    fn joint(&self, flat: &[usize], out: &mut [f64]) {
        for i in 0..self.k {
            let row = &self.log_probs[i * self.stride..(i + 1) * self.stride];
            let mut acc = self.log_priors[i];
            for &j in flat {
                acc += row[j];
            }
            out[i] = acc;
        }
    }
}

/// Turns joint log weights into posteriors in place; returns `ln Pr(x)`.
#[inline]
fn normalize_in_place(logs: &mut [f64]) -> f64 {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        let u = 1.0 / logs.len() as f64;
        logs.iter_mut().for_each(|l| *l = u);
        return f64::NEG_INFINITY;
    }
    let mut sum = 0.0;
    for l in logs.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    for l in logs.iter_mut() {
        *l /= sum;
    }
    max + sum.ln()
}

fn flatten_record(record: &[u32], offsets: &[usize], flat: &mut [usize]) {
    for (m, &c) in record.iter().enumerate() {
        flat[m] = offsets[m] + c as usize;
    }
}

/// Sufficient statistics of one E-step: posterior-weighted value counts
/// and effective sizes, plus the log-likelihood of the model that produced
/// them.
struct Stats {
    counts: Vec<f64>,
    sizes: Vec<f64>,
    log_likelihood: f64,
}

impl Stats {
    fn zeros(k: usize, stride: usize) -> Self {
        Stats {
            counts: vec![0.0; k * stride],
            sizes: vec![0.0; k],
            log_likelihood: 0.0,
        }
    }

    fn merge(&mut self, other: &Stats) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.sizes.iter_mut().zip(&other.sizes) {
            *a += b;
        }
        self.log_likelihood += other.log_likelihood;
    }
}

fn accumulate(model: &MixtureModel, data: &Dataset, smoothing: f64) -> Stats {
    let table = LogTable::new(model, data, smoothing);
    let k = model.k();
    let m = data.num_attributes();
    let offsets = data.value_offsets();
    let n = data.num_records();
    let chunks: Vec<Stats> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut stats = Stats::zeros(k, table.stride);
            let mut logs = vec![0.0; k];
            let mut flat = vec![0usize; m];
            for a in chunk * CHUNK..((chunk + 1) * CHUNK).min(n) {
                flatten_record(data.record(a), offsets, &mut flat);
                table.joint(&flat, &mut logs);
                let w = data.weight(a);
                stats.log_likelihood += w * normalize_in_place(&mut logs);
                for (i, &p) in logs.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    let wp = w * p;
                    stats.sizes[i] += wp;
                    let row = &mut stats.counts[i * table.stride..(i + 1) * table.stride];
                    for &j in &flat {
                        row[j] += wp;
                    }
                }
            }
            stats
        })
        .collect();
    let mut total = Stats::zeros(k, table.stride);
    for c in &chunks {
        total.merge(c);
    }
    total
}

fn model_from_stats(stats: &Stats, data: &Dataset) -> MixtureModel {
    let offsets = data.value_offsets();
    let stride = data.num_values();
    let total_weight = data.total_weight();
    let components = stats
        .sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            let row = &stats.counts[i * stride..(i + 1) * stride];
            Component {
                counts: offsets.windows(2).map(|w| row[w[0]..w[1]].to_vec()).collect(),
                effective_size: size,
                prior: size / total_weight,
            }
        })
        .collect();
    MixtureModel {
        components,
        log_likelihood: f64::NAN,
        converged: false,
        em_iterations: 0,
    }
}

/// Posterior matrix (`N × k`) and the weighted log-likelihood
/// `Σ_a w_a log Σ_i α_i Pr(x_a | C_i)`.
pub fn e_step(model: &MixtureModel, data: &Dataset, smoothing: f64) -> (Vec<Vec<f64>>, f64) {
    let table = LogTable::new(model, data, smoothing);
    let k = model.k();
    let m = data.num_attributes();
    let offsets = data.value_offsets();
    let n = data.num_records();
    let chunks: Vec<(Vec<Vec<f64>>, f64)> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut flat = vec![0usize; m];
            let mut ll = 0.0;
            let rows = (chunk * CHUNK..((chunk + 1) * CHUNK).min(n))
                .map(|a| {
                    let mut logs = vec![0.0; k];
                    flatten_record(data.record(a), offsets, &mut flat);
                    table.joint(&flat, &mut logs);
                    ll += data.weight(a) * normalize_in_place(&mut logs);
                    logs
                })
                .collect();
            (rows, ll)
        })
        .collect();
    let mut posteriors = Vec::with_capacity(n);
    let mut log_likelihood = 0.0;
    for (rows, ll) in chunks {
        posteriors.extend(rows);
        log_likelihood += ll;
    }
    (posteriors, log_likelihood)
}

/// Re-estimates components from a posterior matrix: weighted counts,
/// effective sizes and priors `α_i = n_i / W`.
pub fn m_step(posteriors: &[Vec<f64>], data: &Dataset) -> Result<MixtureModel> {
    if posteriors.len() != data.num_records() {
        return Err(Error::Dataset(format!(
            "{} posterior rows for {} records",
            posteriors.len(),
            data.num_records()
        )));
    }
    let k = posteriors.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(Error::Config("posterior matrix has no columns".into()));
    }
    let stride = data.num_values();
    let offsets = data.value_offsets();
    let mut stats = Stats::zeros(k, stride);
    for (a, (row, record)) in posteriors.iter().zip(data.records()).enumerate() {
        if row.len() != k {
            return Err(Error::Dataset(format!("posterior row {a} has {} entries, expected {k}", row.len())));
        }
        let w = data.weight(a);
        for (i, &p) in row.iter().enumerate() {
            let wp = w * p;
            stats.sizes[i] += wp;
            for (m, &c) in record.iter().enumerate() {
                stats.counts[i * stride + offsets[m] + c as usize] += wp;
            }
        }
    }
    Ok(model_from_stats(&stats, data))
}

/// Indices of components whose effective size collapsed.
pub fn starved_components(model: &MixtureModel, total_weight: f64) -> Vec<usize> {
    model
        .components
        .iter()
        .enumerate()
        .filter(|(_, c)| c.effective_size < STARVED_FRACTION * total_weight)
        .map(|(i, _)| i)
        .collect()
}

/// Runs EM to convergence; see [`fit_traced`].
pub fn fit(model: MixtureModel, data: &Dataset, config: &EmConfig) -> Result<MixtureModel> {
    fit_traced(model, data, config).map(|(m, _)| m)
}

/// Runs EM and also returns the log-likelihood evaluated at every
/// iteration. The returned model is the last one evaluated, so its
/// `log_likelihood` is the final trace entry.
pub fn fit_traced(
    mut model: MixtureModel,
    data: &Dataset,
    config: &EmConfig,
) -> Result<(MixtureModel, Vec<f64>)> {
    config.validate()?;
    if model.components.iter().any(|c| c.num_attributes() != data.num_attributes()) {
        return Err(Error::RecordWidth {
            expected: data.num_attributes(),
            got: model.components[0].num_attributes(),
        });
    }
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    loop {
        let stats = accumulate(&model, data, config.smoothing);
        let ll = stats.log_likelihood;
        if let Some(&prev) = trace.last() {
            let prev: f64 = prev;
            if ll.is_finite() && prev.is_finite() && (ll - prev).abs() / (ll.abs() + 1.0) < config.rel_tolerance {
                converged = true;
            }
        }
        trace.push(ll);
        if converged || iterations >= config.max_iterations {
            model.log_likelihood = ll;
            break;
        }
        model = model_from_stats(&stats, data);
        iterations += 1;
    }
    model.converged = converged;
    model.em_iterations = iterations;
    Ok((model, trace))
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Schema;
    use approx::assert_abs_diff_eq;

    fn binary_dataset(values: &[u32]) -> Dataset {
        let schema = Schema::from_cardinalities(&[2]).unwrap();
        Dataset::new(schema, values.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    fn two_blocks() -> Dataset {
        // Block A: attributes fixed to 0; block B: fixed to 2. Third attribute varies.
        let schema = Schema::from_cardinalities(&[3, 3, 2]).unwrap();
        let mut rows = Vec::new();
        for r in 0..20 {
            rows.push(vec![0, 0, r % 2]);
            rows.push(vec![2, 2, (r / 2) % 2]);
        }
        Dataset::new(schema, rows).unwrap()
    }

    fn component(counts: Vec<Vec<f64>>, prior: f64) -> Component {
        Component::from_counts(counts, prior)
    }

    #[test]
    fn single_component_posteriors_are_one() {
        let data = binary_dataset(&[0, 0, 1]);
        let model = MixtureModel::new(vec![component(vec![vec![1.0, 1.0]], 1.0)]).unwrap();
        let (post, ll) = e_step(&model, &data, 0.0);
        assert!(post.iter().all(|r| r == &vec![1.0]));
        assert_abs_diff_eq!(ll, 3.0 * 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn point_masses_give_one_hot_posteriors() {
        let data = binary_dataset(&[0, 1, 1]);
        let model = MixtureModel::new(vec![
            component(vec![vec![5.0, 0.0]], 0.5),
            component(vec![vec![0.0, 5.0]], 0.5),
        ])
        .unwrap();
        let (post, _) = e_step(&model, &data, 0.0);
        assert_eq!(post, vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn log_likelihood_invariant_under_component_swap() {
        let data = binary_dataset(&[0, 1, 0, 1]);
        let a = component(vec![vec![3.0, 1.0]], 0.5);
        let b = component(vec![vec![1.0, 3.0]], 0.5);
        let (_, ll1) = e_step(&MixtureModel::new(vec![a.clone(), b.clone()]).unwrap(), &data, 0.0);
        let (_, ll2) = e_step(&MixtureModel::new(vec![b, a]).unwrap(), &data, 0.0);
        assert_eq!(ll1, ll2);
        // Each record: 0.5·0.75 + 0.5·0.25 = 0.5.
        assert_abs_diff_eq!(ll1, 4.0 * 0.5f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn m_step_hard_assignment() {
        let data = binary_dataset(&[0, 0, 1, 1]);
        let post = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let model = m_step(&post, &data).unwrap();
        assert_eq!(model.components[0].counts, vec![vec![2.0, 0.0]]);
        assert_eq!(model.components[1].counts, vec![vec![0.0, 2.0]]);
        assert_eq!(model.priors(), vec![0.5, 0.5]);
    }

    #[test]
    fn m_step_uniform_posteriors_copy_global_distribution() {
        let data = binary_dataset(&[0, 0, 0, 1]);
        let post = vec![vec![0.5, 0.5]; 4];
        let model = m_step(&post, &data).unwrap();
        for c in &model.components {
            assert_eq!(c.counts, vec![vec![1.5, 0.5]]);
            assert_eq!(c.prior, 0.5);
        }
    }

    #[test]
    fn m_step_rejects_mismatched_rows() {
        let data = binary_dataset(&[0, 1]);
        assert!(m_step(&[vec![1.0]], &data).is_err());
        assert!(m_step(&[vec![1.0], vec![0.5, 0.5]], &data).is_err());
    }

    #[test]
    fn fused_pass_matches_separate_steps() {
        let data = two_blocks();
        let model = MixtureModel::new(vec![
            component(vec![vec![3.0, 1.0, 1.0], vec![1.0, 2.0, 2.0], vec![2.0, 3.0]], 0.3),
            component(vec![vec![1.0, 1.0, 3.0], vec![2.0, 1.0, 2.0], vec![4.0, 1.0]], 0.7),
        ])
        .unwrap();
        let (post, ll) = e_step(&model, &data, 1e-9);
        let separate = m_step(&post, &data).unwrap();
        let stats = accumulate(&model, &data, 1e-9);
        let fused = model_from_stats(&stats, &data);
        assert_abs_diff_eq!(ll, stats.log_likelihood, epsilon = 1e-9);
        for (a, b) in separate.components.iter().zip(&fused.components) {
            assert_abs_diff_eq!(a.effective_size, b.effective_size, epsilon = 1e-9);
            for (x, y) in a.counts.iter().flatten().zip(b.counts.iter().flatten()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn single_component_converges_fast_to_global_distribution() {
        let data = two_blocks();
        let init = component(vec![vec![1.0, 1.0, 1.0], vec![5.0, 1.0, 1.0], vec![1.0, 1.0]], 1.0);
        let model = fit(MixtureModel::new(vec![init]).unwrap(), &data, &EmConfig::default()).unwrap();
        assert!(model.converged);
        assert!(model.em_iterations <= 2);
        assert_eq!(model.components[0].counts, data.global_counts());
    }

    #[test]
    fn two_blocks_separate_cleanly() {
        let data = two_blocks();
        let init = vec![
            component(vec![vec![2.0, 1.0, 1.0], vec![2.0, 1.0, 1.0], vec![1.0, 1.0]], 0.5),
            component(vec![vec![1.0, 1.0, 2.0], vec![1.0, 1.0, 2.0], vec![1.0, 1.0]], 0.5),
        ];
        let model = fit(MixtureModel::new(init).unwrap(), &data, &EmConfig::default()).unwrap();
        let (post, _) = e_step(&model, &data, 1e-9);
        for (a, row) in post.iter().enumerate() {
            let expected = if data.record(a)[0] == 0 { 0 } else { 1 };
            assert!(row[expected] > 1.0 - 1e-6, "record {a}: {row:?}");
        }
        let first = &model.components[0].counts[0];
        assert_abs_diff_eq!(first[0], 20.0, epsilon = 1e-9);
        assert!(first[1] < 1e-9 && first[2] < 1e-9);
        assert_abs_diff_eq!(model.components[1].counts[1][2], 20.0, epsilon = 1e-6);
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let data = two_blocks();
        let init = vec![
            component(vec![vec![1.0, 1.1, 1.0], vec![1.0, 1.0, 1.1], vec![1.5, 1.6]], 0.4),
            component(vec![vec![1.2, 1.0, 1.0], vec![1.0, 1.2, 1.0], vec![1.6, 1.6]], 0.6),
            component(vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0], vec![1.0, 1.0]], 0.0),
        ];
        let (_, trace) = fit_traced(MixtureModel::new(init).unwrap(), &data, &EmConfig::default()).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs(), "{trace:?}");
        }
    }

    #[test]
    fn starved_component_is_retained() {
        let data = binary_dataset(&[0, 0]);
        let model = MixtureModel::new(vec![
            component(vec![vec![1.0, 0.0]], 1.0),
            component(vec![vec![0.0, 1.0]], 0.0),
        ])
        .unwrap();
        let fitted = fit(model, &data, &EmConfig::default()).unwrap();
        assert_eq!(fitted.k(), 2);
        assert_eq!(starved_components(&fitted, data.total_weight()), vec![1]);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let bad = EmConfig { max_iterations: 0, ..EmConfig::default() };
        assert!(bad.validate().is_err());
        let bad = EmConfig { rel_tolerance: 0.0, ..EmConfig::default() };
        assert!(bad.validate().is_err());
        let bad = EmConfig { smoothing: -1.0, ..EmConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn results_do_not_depend_on_thread_count() {
        let data = crate::synth::generate(&crate::synth::SynthSpec {
            num_records: 5000,
            ..crate::synth::SynthSpec::default()
        })
        .unwrap()
        .0;
        let mut rng_counts = data.global_counts();
        rng_counts[0][0] += 50.0;
        let init = MixtureModel::new(vec![
            Component::from_counts(data.global_counts(), 0.5),
            Component::from_counts(rng_counts, 0.5),
        ])
        .unwrap();
        let cfg = EmConfig { max_iterations: 5, ..EmConfig::default() };
        let one = with_threads(1, || fit(init.clone(), &data, &cfg).unwrap());
        let four = with_threads(4, || fit(init.clone(), &data, &cfg).unwrap());
        assert_eq!(one, four);
    }
}
