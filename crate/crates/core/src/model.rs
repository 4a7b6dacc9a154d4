//! Shared data model: schemas, encoded datasets, mixture components and
//! mixture models.
//!
//! Components hold posterior-weighted *counts* rather than probabilities.
//! Probabilities are derived on read, optionally with an additive
//! pseudo-count, so the EM accumulation and the density computation read
//! the same structure.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::log_sum_exp;

/// One categorical attribute: a name and its ordered value labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

impl Attribute {
    pub fn new(name: impl Into<String>, values: Vec<String>) -> Self {
        Attribute {
            name: name.into(),
            values,
        }
    }

    pub fn cardinality(&self) -> usize {
        self.values.len()
    }

    pub fn code_of(&self, label: &str) -> Option<usize> {
        self.values.iter().position(|v| v == label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    attributes: Vec<Attribute>,
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema has no attributes".into()));
        }
        let mut names = HashSet::new();
        for attr in &attributes {
            if !names.insert(attr.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute {:?}", attr.name)));
            }
            if attr.values.is_empty() {
                return Err(Error::Schema(format!("attribute {:?} has no values", attr.name)));
            }
            let mut seen = HashSet::new();
            for v in &attr.values {
                if !seen.insert(v.as_str()) {
                    return Err(Error::Schema(format!(
                        "attribute {:?} repeats value {:?}",
                        attr.name, v
                    )));
                }
            }
        }
        Ok(Schema { attributes })
    }

    /// Builds a schema with anonymous attributes and values `"0".."c-1"`.
    pub fn from_cardinalities(cardinalities: &[usize]) -> Result<Self> {
        Schema::new(
            cardinalities
                .iter()
                .enumerate()
                .map(|(m, &c)| Attribute::new(format!("a{m}"), (0..c).map(|v| v.to_string()).collect()))
                .collect(),
        )
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, m: usize) -> &Attribute {
        &self.attributes[m]
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn cardinality(&self, m: usize) -> usize {
        self.attributes[m].cardinality()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.attributes.iter().map(Attribute::cardinality).collect()
    }

    /// Offset of each attribute's first value in a flattened value index,
    /// plus the total number of values as the final entry.
    pub fn value_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.attributes.len() + 1);
        let mut acc = 0;
        for attr in &self.attributes {
            offsets.push(acc);
            acc += attr.cardinality();
        }
        offsets.push(acc);
        offsets
    }

    pub fn check_record(&self, record: &[u32]) -> Result<()> {
        if record.len() != self.attributes.len() {
            return Err(Error::RecordWidth {
                expected: self.attributes.len(),
                got: record.len(),
            });
        }
        for (m, &code) in record.iter().enumerate() {
            let cardinality = self.cardinality(m);
            if code as usize >= cardinality {
                return Err(Error::CodeRange {
                    attribute: m,
                    code: code as usize,
                    cardinality,
                });
            }
        }
        Ok(())
    }

    /// Decodes a record back to its value labels.
    pub fn decode(&self, record: &[u32]) -> Vec<&str> {
        record
            .iter()
            .zip(&self.attributes)
            .map(|(&c, attr)| attr.values[c as usize].as_str())
            .collect()
    }
}

/// Encoded categorical records with optional per-record multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    codes: Vec<u32>,
    weights: Option<Vec<f64>>,
    offsets: Vec<usize>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<Vec<u32>>) -> Result<Self> {
        let m = schema.num_attributes();
        let mut codes = Vec::with_capacity(records.len() * m);
        for r in &records {
            schema.check_record(r)?;
            codes.extend_from_slice(r);
        }
        Dataset::from_codes(schema, codes, None)
    }

    /// Builds a dataset from row-major codes (`N * M` entries).
    pub fn from_codes(schema: Schema, codes: Vec<u32>, weights: Option<Vec<f64>>) -> Result<Self> {
        let m = schema.num_attributes();
        if codes.is_empty() {
            return Err(Error::Dataset("dataset has no records".into()));
        }
        if codes.len() % m != 0 {
            return Err(Error::Dataset(format!(
                "{} codes is not a multiple of {} attributes",
                codes.len(),
                m
            )));
        }
        for row in codes.chunks_exact(m) {
            schema.check_record(row)?;
        }
        let n = codes.len() / m;
        if let Some(w) = &weights {
            if w.len() != n {
                return Err(Error::Dataset(format!("{} weights for {} records", w.len(), n)));
            }
            if let Some(bad) = w.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::Dataset(format!("record weight {bad} is not positive")));
            }
        }
        let offsets = schema.value_offsets();
        Ok(Dataset {
            schema,
            codes,
            weights,
            offsets,
        })
    }

    pub fn with_weights(self, weights: Vec<f64>) -> Result<Self> {
        Dataset::from_codes(self.schema, self.codes, Some(weights))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn num_records(&self) -> usize {
        self.codes.len() / self.schema.num_attributes()
    }

    pub fn num_attributes(&self) -> usize {
        self.schema.num_attributes()
    }

    pub fn record(&self, a: usize) -> &[u32] {
        let m = self.num_attributes();
        &self.codes[a * m..(a + 1) * m]
    }

    pub fn records(&self) -> impl Iterator<Item = &[u32]> {
        self.codes.chunks_exact(self.num_attributes())
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn weight(&self, a: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[a])
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights
            .as_ref()
            .map_or(self.num_records() as f64, |w| w.iter().sum())
    }

    /// See [`Schema::value_offsets`].
    pub fn value_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn num_values(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Weighted value counts over the whole dataset, one vector per attribute.
    pub fn global_counts(&self) -> Vec<Vec<f64>> {
        let mut counts: Vec<Vec<f64>> = self
            .schema
            .attributes()
            .iter()
            .map(|a| vec![0.0; a.cardinality()])
            .collect();
        for (a, row) in self.records().enumerate() {
            let w = self.weight(a);
            for (m, &c) in row.iter().enumerate() {
                counts[m][c as usize] += w;
            }
        }
        counts
    }

    /// Number of distinct records.
    pub fn distinct_records(&self) -> usize {
        self.records().collect::<HashSet<_>>().len()
    }
}

/// One mixture component: a product of per-attribute categorical
/// distributions stored as weighted counts, plus a prior weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub counts: Vec<Vec<f64>>,
    pub effective_size: f64,
    pub prior: f64,
}

impl Component {
    /// Builds a component from counts; the effective size is taken from
    /// the first attribute's total.
    pub fn from_counts(counts: Vec<Vec<f64>>, prior: f64) -> Self {
        let effective_size = counts.first().map_or(0.0, |c| c.iter().sum());
        Component {
            counts,
            effective_size,
            prior,
        }
    }

    pub fn zeroed(cardinalities: &[usize]) -> Self {
        Component {
            counts: cardinalities.iter().map(|&c| vec![0.0; c]).collect(),
            effective_size: 0.0,
            prior: 0.0,
        }
    }

    pub fn num_attributes(&self) -> usize {
        self.counts.len()
    }

    /// `Pr(v | C)` for attribute `m`, with `smoothing` pseudo-counts added
    /// to every value.
    pub fn probability(&self, m: usize, v: usize, smoothing: f64) -> Result<f64> {
        let counts = &self.counts[m];
        if v >= counts.len() {
            return Err(Error::CodeRange {
                attribute: m,
                code: v,
                cardinality: counts.len(),
            });
        }
        let denom = self.effective_size + smoothing * counts.len() as f64;
        if denom <= 0.0 {
            return Err(Error::ZeroMass);
        }
        Ok((counts[v] + smoothing) / denom)
    }

    /// Unsmoothed distribution of attribute `m`.
    pub fn distribution(&self, m: usize) -> Vec<f64> {
        let total: f64 = self.counts[m].iter().sum();
        self.counts[m].iter().map(|c| c / total).collect()
    }

    /// `log Pr(x | C)` under attribute independence. Returns `-inf` when a
    /// factor is zero.
    pub fn record_log_likelihood(&self, record: &[u32], smoothing: f64) -> Result<f64> {
        if record.len() != self.counts.len() {
            return Err(Error::RecordWidth {
                expected: self.counts.len(),
                got: record.len(),
            });
        }
        let mut total = 0.0;
        for (m, &v) in record.iter().enumerate() {
            total += self.probability(m, v as usize, smoothing)?.ln();
        }
        Ok(total)
    }

    /// True when every attribute's counts sum to the effective size.
    pub fn is_consistent(&self, rel_tol: f64) -> bool {
        self.counts.iter().all(|c| {
            let s: f64 = c.iter().sum();
            (s - self.effective_size).abs() <= rel_tol * self.effective_size.abs().max(1.0)
        })
    }
}

/// Posterior membership probabilities for one record.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub probabilities: Vec<f64>,
    /// Set when every component assigned the record zero likelihood; the
    /// probabilities are then uniform.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    pub components: Vec<Component>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub em_iterations: usize,
}

impl MixtureModel {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::Config("a mixture needs at least one component".into()));
        }
        Ok(MixtureModel {
            components,
            log_likelihood: f64::NAN,
            converged: false,
            em_iterations: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn priors(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.prior).collect()
    }

    pub fn normalize_priors(&mut self) {
        let total: f64 = self.components.iter().map(|c| c.prior).sum();
        if total > 0.0 {
            for c in &mut self.components {
                c.prior /= total;
            }
        } else {
            let uniform = 1.0 / self.components.len() as f64;
            for c in &mut self.components {
                c.prior = uniform;
            }
        }
    }

    /// `Pr(C_i | x)` computed in log space.
    pub fn posterior(&self, record: &[u32], smoothing: f64) -> Result<Posterior> {
        let mut logs = Vec::with_capacity(self.k());
        for c in &self.components {
            logs.push(c.prior.ln() + c.record_log_likelihood(record, smoothing)?);
        }
        Ok(normalize_log_weights(&logs))
    }
}

/// Softmax of log weights. All `-inf` yields a uniform, flagged result.
pub fn normalize_log_weights(logs: &[f64]) -> Posterior {
    let lse = log_sum_exp(logs);
    if lse == f64::NEG_INFINITY || lse.is_nan() {
        let u = 1.0 / logs.len() as f64;
        return Posterior {
            probabilities: vec![u; logs.len()],
            degenerate: true,
        };
    }
    Posterior {
        probabilities: logs.iter().map(|l| (l - lse).exp()).collect(),
        degenerate: false,
    }
}

/// Hard assignment of every record to its most probable component.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    /// Posterior probability of the assigned component, per record.
    pub max_posterior: Vec<f64>,
    /// Full row-stochastic posterior matrix, when retained.
    pub posteriors: Option<Vec<Vec<f64>>>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn from_posteriors(posteriors: Vec<Vec<f64>>, keep_matrix: bool) -> Self {
        let num_clusters = posteriors.first().map_or(0, Vec::len);
        let (labels, max_posterior) = posteriors
            .iter()
            .map(|row| {
                let mut best = 0;
                for (i, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = i;
                    }
                }
                (best, row[best])
            })
            .unzip();
        ClusterAssignment {
            labels,
            max_posterior,
            posteriors: keep_matrix.then_some(posteriors),
            num_clusters,
        }
    }

    /// Builds an assignment from labels alone, with unit max posteriors.
    pub fn from_labels(labels: Vec<usize>, num_clusters: usize) -> Self {
        let n = labels.len();
        ClusterAssignment {
            labels,
            max_posterior: vec![1.0; n],
            posteriors: None,
            num_clusters,
        }
    }

    /// Number of records assigned to each cluster.
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}
