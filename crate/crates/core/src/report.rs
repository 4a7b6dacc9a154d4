//! Cluster-versus-label tables and summary rows.

use std::collections::HashMap;
use std::fmt::Write as _;

use pathfinding::prelude::{kuhn_munkres, Matrix};
use serde::Serialize;

/// Counts of records per (cluster, label) pair. Label columns are ordered
/// by first appearance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contingency {
    pub label_names: Vec<String>,
    /// `counts[cluster][label]`
    pub counts: Vec<Vec<usize>>,
}

impl Contingency {
    pub fn new<S: AsRef<str>>(clusters: &[usize], num_clusters: usize, labels: &[S]) -> Self {
        assert_eq!(clusters.len(), labels.len(), "one label per record");
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut label_names = Vec::new();
        let codes: Vec<usize> = labels
            .iter()
            .map(|l| {
                let l = l.as_ref();
                *index.entry(l).or_insert_with(|| {
                    label_names.push(l.to_string());
                    label_names.len() - 1
                })
            })
            .collect();
        let mut counts = vec![vec![0; label_names.len()]; num_clusters];
        for (&c, &l) in clusters.iter().zip(&codes) {
            counts[c][l] += 1;
        }
        Contingency { label_names, counts }
    }

    /// Table without label columns, only cluster sizes.
    pub fn sizes_only(clusters: &[usize], num_clusters: usize) -> Self {
        let mut counts = vec![vec![0]; num_clusters];
        for &c in clusters {
            counts[c][0] += 1;
        }
        Contingency {
            label_names: Vec::new(),
            counts,
        }
    }

    fn has_labels(&self) -> bool {
        !self.label_names.is_empty()
    }

    pub fn cluster_size(&self, cluster: usize) -> usize {
        self.counts[cluster].iter().sum()
    }

    /// True when every non-empty cluster holds a single label.
    pub fn is_pure(&self, cluster: usize) -> bool {
        self.counts[cluster].iter().filter(|&&c| c > 0).count() <= 1
    }

    /// Fraction of records whose label matches the best one-to-one
    /// pairing of clusters and labels.
    pub fn matched_agreement(&self) -> f64 {
        let total: usize = self.counts.iter().flatten().sum();
        if total == 0 || !self.has_labels() {
            return 0.0;
        }
        let rows = self.counts.len();
        let cols = self.label_names.len();
        let (r, c) = (rows.min(cols), rows.max(cols));
        let weights = Matrix::from_fn(r, c, |(i, j)| {
            let (cluster, label) = if rows <= cols { (i, j) } else { (j, i) };
            self.counts[cluster][label] as i64
        });
        let (matched, _) = kuhn_munkres(&weights);
        matched as f64 / total as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("cluster,size");
        for n in &self.label_names {
            write!(out, ",{}", csv_field(n)).unwrap();
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            write!(out, "{},{}", i, self.cluster_size(i)).unwrap();
            if self.has_labels() {
                for c in row {
                    write!(out, ",{c}").unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    /// Right-aligned plain-text table with a totals row.
    pub fn to_text(&self) -> String {
        let mut header = vec!["cluster".to_string(), "size".to_string()];
        header.extend(self.label_names.iter().cloned());
        let mut rows: Vec<Vec<String>> = Vec::with_capacity(self.counts.len() + 1);
        for (i, row) in self.counts.iter().enumerate() {
            let mut r = vec![i.to_string(), self.cluster_size(i).to_string()];
            if self.has_labels() {
                r.extend(row.iter().map(usize::to_string));
            }
            rows.push(r);
        }
        let mut totals = vec!["total".to_string(), self.counts.iter().flatten().sum::<usize>().to_string()];
        if self.has_labels() {
            for l in 0..self.label_names.len() {
                totals.push(self.counts.iter().map(|r| r[l]).sum::<usize>().to_string());
            }
        }
        rows.push(totals);
        let widths: Vec<usize> = (0..header.len())
            .map(|j| rows.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap())
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        let mut out = line(&header);
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// One line of the per-dataset results summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub k: usize,
    pub category_utility: f64,
    pub mean_density: f64,
    pub mean_entropy: f64,
}

impl SummaryRow {
    pub const CSV_HEADER: &'static str = "dataset,k,category_utility,mean_density,mean_entropy";

    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            csv_field(&self.dataset),
            self.k,
            self.category_utility,
            self.mean_density,
            self.mean_entropy
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "{:<12} k={:<4} CU={:.4}  rho={:.5}  S={:.4}",
            self.dataset, self.k, self.category_utility, self.mean_density, self.mean_entropy
        )
    }
}
