//! Rule-based synthetic categorical data with known cluster labels.
//!
//! Each rule fixes a random subset of `⌈M/2⌉` attributes to rule-specific
//! values. A record picks a rule uniformly, takes each ruled value with
//! probability `rule_conformance` (otherwise a uniform value), and draws
//! the remaining attributes uniformly.

use rand::seq::index::sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Attribute, Dataset, Schema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_records: usize,
    pub num_attributes: usize,
    pub cardinality: usize,
    pub num_rules: usize,
    pub rule_conformance: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_records: 10_000,
            num_attributes: 10,
            cardinality: 20,
            num_rules: 5,
            rule_conformance: 0.97,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_records < 1 || self.num_attributes < 1 {
            return Err(Error::Config("need at least one record and one attribute".into()));
        }
        if self.num_rules < 1 {
            return Err(Error::Config("need at least one rule".into()));
        }
        if self.cardinality < 2 {
            return Err(Error::Config("cardinality must be at least 2".into()));
        }
        if !(self.rule_conformance > 0.0 && self.rule_conformance <= 1.0) {
            return Err(Error::Config("rule conformance must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// A generating rule: `(attribute, value)` pairs it fixes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub fixed: Vec<(usize, u32)>,
}

pub fn rules(spec: &SynthSpec, rng: &mut impl Rng) -> Vec<Rule> {
    let ruled = spec.num_attributes.div_ceil(2);
    (0..spec.num_rules)
        .map(|_| {
            let mut attrs = sample(rng, spec.num_attributes, ruled).into_vec();
            attrs.sort_unstable();
            Rule {
                fixed: attrs
                    .into_iter()
                    .map(|m| (m, rng.gen_range(0..spec.cardinality) as u32))
                    .collect(),
            }
        })
        .collect()
}

/// Generates a dataset and the rule index of every record.
pub fn generate(spec: &SynthSpec) -> Result<(Dataset, Vec<usize>)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let rules = rules(spec, &mut rng);
    let m = spec.num_attributes;
    let card = spec.cardinality;
    let mut codes = Vec::with_capacity(spec.num_records * m);
    let mut labels = Vec::with_capacity(spec.num_records);
    let mut row = vec![0u32; m];
    for _ in 0..spec.num_records {
        let r = rng.gen_range(0..rules.len());
        for v in row.iter_mut() {
            *v = rng.gen_range(0..card) as u32;
        }
        for &(attr, value) in &rules[r].fixed {
            if spec.rule_conformance >= 1.0 || rng.gen_bool(spec.rule_conformance) {
                row[attr] = value;
            }
        }
        codes.extend_from_slice(&row);
        labels.push(r);
    }
    let schema = Schema::new(
        (0..m)
            .map(|j| Attribute::new(format!("attr{j}"), (0..card).map(|v| format!("v{v}")).collect()))
            .collect(),
    )?;
    Ok((Dataset::from_codes(schema, codes, None)?, labels))
}
