//! Model-selection criteria and external cluster-quality scores.

use serde::{Deserialize, Serialize};

use crate::density::entropy_of_counts;
use crate::model::{ClusterAssignment, Dataset, MixtureModel, Schema};

/// Free parameters of a `k`-component categorical mixture: `k - 1` mixing
/// weights plus `k · Σ_m (c_m - 1)` multinomial probabilities.
pub fn degrees_of_freedom(schema: &Schema, k: usize) -> usize {
    let per_component: usize = schema.cardinalities().iter().map(|c| c - 1).sum();
    (k - 1) + k * per_component
}

pub fn aic(log_likelihood: f64, dof: usize) -> f64 {
    2.0 * dof as f64 - 2.0 * log_likelihood
}

pub fn bic(log_likelihood: f64, dof: usize, n: f64) -> f64 {
    n.ln() * dof as f64 - 2.0 * log_likelihood
}

/// Category utility of a hard clustering, normalized by the number of
/// clusters:
///
/// `CU = (1/k) Σ_i P(C_i) Σ_m Σ_v [P(v | C_i)² - P(v)²]`
///
/// Empty clusters contribute zero but still count toward `k`.
pub fn category_utility(assignment: &ClusterAssignment, data: &Dataset) -> f64 {
    let k = assignment.num_clusters;
    if k == 0 {
        return 0.0;
    }
    let cards = data.schema().cardinalities();
    let offsets = data.value_offsets();
    let stride = data.num_values();
    let mut cluster_counts = vec![0.0; k * stride];
    let mut cluster_weight = vec![0.0; k];
    let mut global = vec![0.0; stride];
    for (a, (rec, &label)) in data.records().zip(&assignment.labels).enumerate() {
        let w = data.weight(a);
        cluster_weight[label] += w;
        for (m, &c) in rec.iter().enumerate() {
            let j = offsets[m] + c as usize;
            cluster_counts[label * stride + j] += w;
            global[j] += w;
        }
    }
    let total = data.total_weight();
    let global_sq: f64 = global.iter().map(|g| (g / total).powi(2)).sum();
    let mut cu = 0.0;
    for i in 0..k {
        let wi = cluster_weight[i];
        if wi <= 0.0 {
            continue;
        }
        let mut within = 0.0;
        for m in 0..cards.len() {
            for j in offsets[m]..offsets[m + 1] {
                within += (cluster_counts[i * stride + j] / wi).powi(2);
            }
        }
        cu += (wi / total) * (within - global_sq);
    }
    cu / k as f64
}

/// Size-weighted mean per-attribute entropy, `Σ_i α_i (Σ_m S_m) / M`.
/// Experimental.
pub fn mean_entropy(model: &MixtureModel) -> f64 {
    model
        .components
        .iter()
        .filter(|c| c.effective_size > 0.0)
        .map(|c| {
            let s: f64 = c.counts.iter().map(|v| entropy_of_counts(v)).sum();
            c.prior * s / c.num_attributes() as f64
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriteriaReport {
    pub aic: f64,
    pub bic: f64,
    pub dof: usize,
    pub mean_density: f64,
    pub category_utility: Option<f64>,
    pub mean_entropy: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn dof_examples() {
        assert_eq!(degrees_of_freedom(&Schema::from_cardinalities(&[2]).unwrap(), 1), 1);
        assert_eq!(degrees_of_freedom(&Schema::from_cardinalities(&[2, 3]).unwrap(), 2), 7);
        assert_eq!(degrees_of_freedom(&Schema::from_cardinalities(&[1, 1, 1]).unwrap(), 1), 0);
    }

    #[test]
    fn information_criteria() {
        assert_eq!(aic(0.0, 5), 10.0);
        assert_abs_diff_eq!(bic(0.0, 2, 100.0), 9.21034, epsilon = 1e-5);
        assert_eq!(aic(-3.5, 0), 7.0);
    }

    fn binary(values: &[u32]) -> Dataset {
        let schema = Schema::from_cardinalities(&[2]).unwrap();
        Dataset::new(schema, values.iter().map(|&v| vec![v]).collect()).unwrap()
    }

    #[test]
    fn cu_single_cluster_is_zero() {
        let data = binary(&[0, 1, 1, 0, 1]);
        let a = ClusterAssignment::from_labels(vec![0; 5], 1);
        assert_abs_diff_eq!(category_utility(&a, &data), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn cu_two_pure_blocks() {
        let data = binary(&[0, 0, 1, 1]);
        let a = ClusterAssignment::from_labels(vec![0, 0, 1, 1], 2);
        assert_abs_diff_eq!(category_utility(&a, &data), 0.25, epsilon = 1e-15);
    }

    #[test]
    fn cu_empty_cluster_dilutes() {
        let data = binary(&[0, 0, 1, 1]);
        let a = ClusterAssignment::from_labels(vec![0, 0, 1, 1], 4);
        assert_abs_diff_eq!(category_utility(&a, &data), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn bic_minus_aic() {
        let (ll, dof, n) = (-1234.5, 17, 435.0);
        assert_abs_diff_eq!(bic(ll, dof, n) - aic(ll, dof), dof as f64 * (n.ln() - 2.0), epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn cu_invariant_under_relabeling_and_attribute_permutation(
            rows in prop::collection::vec((0u32..3, 0u32..2, 0u32..4, 0usize..3), 1..60),
            perm in Just([2usize, 0, 1]).prop_shuffle(),
        ) {
            let schema = Schema::from_cardinalities(&[3, 2, 4]).unwrap();
            let recs: Vec<Vec<u32>> = rows.iter().map(|r| vec![r.0, r.1, r.2]).collect();
            let labels: Vec<usize> = rows.iter().map(|r| r.3).collect();
            let data = Dataset::new(schema, recs.clone()).unwrap();
            let base = category_utility(&ClusterAssignment::from_labels(labels.clone(), 3), &data);

            let relabeled: Vec<usize> = labels.iter().map(|l| (l + 1) % 3).collect();
            let cu = category_utility(&ClusterAssignment::from_labels(relabeled, 3), &data);
            prop_assert!((cu - base).abs() < 1e-12);

            let cards = [3, 2, 4];
            let pschema = Schema::from_cardinalities(&perm.iter().map(|&p| cards[p]).collect::<Vec<_>>()).unwrap();
            let precs = recs.iter().map(|r| perm.iter().map(|&p| r[p]).collect()).collect();
            let pdata = Dataset::new(pschema, precs).unwrap();
            let cu = category_utility(&ClusterAssignment::from_labels(labels, 3), &pdata);
            prop_assert!((cu - base).abs() < 1e-12);
        }
    }
}
