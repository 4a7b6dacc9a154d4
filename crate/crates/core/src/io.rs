//! Reading categorical CSV files and writing models, assignments and traces.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::anneal::{AnnealConfig, AnnealTrace};
use crate::error::{Error, Result};
use crate::model::{Attribute, ClusterAssignment, Component, Dataset, MixtureModel, Schema};

pub const MISSING_TOKEN: &str = "?";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingPolicy {
    /// `?` becomes a value of its own.
    #[default]
    AsCategory,
    /// Records with `?` in any clustering column are skipped.
    DropRecord,
}

/// A column given either by header name or by zero-based position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Name(String),
    Index(usize),
}

impl ColumnRef {
    /// Bare integers are positions, anything else a header name.
    pub fn parse(s: &str) -> Self {
        match s.parse() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        }
    }

    fn resolve(&self, header: Option<&[String]>, width: usize) -> Result<usize> {
        match self {
            ColumnRef::Index(i) if *i < width => Ok(*i),
            ColumnRef::Index(i) => Err(Error::UnknownColumn(i.to_string())),
            ColumnRef::Name(name) => header
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::UnknownColumn(name.clone())),
        }
    }
}

impl From<&str> for ColumnRef {
    fn from(s: &str) -> Self {
        ColumnRef::parse(s)
    }
}

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub delimiter: u8,
    pub header_row: bool,
    pub label_column: Option<ColumnRef>,
    pub ignore_columns: Vec<ColumnRef>,
    pub missing_policy: MissingPolicy,
    /// Equal-frequency bins for columns whose values all parse as numbers.
    pub numeric_bins: Option<usize>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            delimiter: b',',
            header_row: true,
            label_column: None,
            ignore_columns: Vec::new(),
            missing_policy: MissingPolicy::AsCategory,
            numeric_bins: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub labels: Option<Vec<String>>,
    pub label_name: Option<String>,
}

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        row,
        message: message.into(),
    }
}

/// Loads a categorical CSV file.
///
/// Values are coded in order of first appearance. Row numbers in errors are
/// one-based and count the header line.
pub fn load_csv(path: impl AsRef<Path>, config: &IngestConfig) -> Result<LoadedData> {
    let path = path.as_ref();
    if config.numeric_bins.is_some_and(|b| b < 2) {
        return Err(Error::Config("numeric_bins must be at least 2".into()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(config.delimiter)
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut width = None;
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(parse_err(path, line, format!("expected {w} fields, found {}", rec.len())));
            }
            _ => {}
        }
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if config.header_row && header.is_none() {
            header = Some(fields);
        } else {
            rows.push(fields);
        }
    }
    let width = width.ok_or_else(|| Error::EmptyFile(path.to_path_buf()))?;
    if rows.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    let label_col = config
        .label_column
        .as_ref()
        .map(|c| c.resolve(header.as_deref(), width))
        .transpose()?;
    let mut skip = vec![false; width];
    for c in &config.ignore_columns {
        skip[c.resolve(header.as_deref(), width)?] = true;
    }
    if let Some(l) = label_col {
        skip[l] = true;
    }
    let columns: Vec<usize> = (0..width).filter(|&c| !skip[c]).collect();
    if columns.is_empty() {
        return Err(Error::Schema("no clustering columns left".into()));
    }

    if config.missing_policy == MissingPolicy::DropRecord {
        rows.retain(|r| columns.iter().all(|&c| r[c] != MISSING_TOKEN));
        if rows.is_empty() {
            return Err(Error::Dataset("every record has a missing value".into()));
        }
    }

    let names: Vec<String> = columns
        .iter()
        .map(|&c| match &header {
            Some(h) => h[c].clone(),
            None => format!("col{c}"),
        })
        .collect();

    let mut attributes = Vec::with_capacity(columns.len());
    let mut codes = vec![0u32; rows.len() * columns.len()];
    let stride = columns.len();
    for (m, &c) in columns.iter().enumerate() {
        let raw: Vec<&str> = rows.iter().map(|r| r[c].as_str()).collect();
        let (values, col_codes) = match config.numeric_bins {
            Some(bins) if is_numeric(&raw) => bin_column(&raw, bins),
            _ => encode_column(&raw),
        };
        for (a, code) in col_codes.into_iter().enumerate() {
            codes[a * stride + m] = code;
        }
        attributes.push(Attribute::new(names[m].clone(), values));
    }
    let schema = Schema::new(attributes)?;
    let dataset = Dataset::from_codes(schema, codes, None)?;
    let labels = label_col.map(|l| rows.iter().map(|r| r[l].clone()).collect());
    let label_name = label_col.map(|l| match &header {
        Some(h) => h[l].clone(),
        None => format!("col{l}"),
    });
    Ok(LoadedData {
        dataset,
        labels,
        label_name,
    })
}

fn encode_column(raw: &[&str]) -> (Vec<String>, Vec<u32>) {
    let mut index: HashMap<&str, u32> = HashMap::new();
    let mut values = Vec::new();
    let codes = raw
        .iter()
        .map(|&v| {
            *index.entry(v).or_insert_with(|| {
                values.push(v.to_string());
                (values.len() - 1) as u32
            })
        })
        .collect();
    (values, codes)
}

fn is_numeric(raw: &[&str]) -> bool {
    let mut any = false;
    for v in raw {
        if *v == MISSING_TOKEN {
            continue;
        }
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => any = true,
            _ => return false,
        }
    }
    any
}

/// Equal-frequency discretization. Cut points are order statistics at
/// `i·n/bins`; identical values always share a bin, so heavily tied
/// columns may end up with fewer bins. Missing values keep their own
/// category, listed after the bins.
fn bin_column(raw: &[&str], bins: usize) -> (Vec<String>, Vec<u32>) {
    let mut sorted: Vec<f64> = raw
        .iter()
        .filter(|v| **v != MISSING_TOKEN)
        .map(|v| v.parse().unwrap())
        .collect();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut cuts: Vec<f64> = (1..bins).map(|i| sorted[i * n / bins]).collect();
    cuts.dedup();
    cuts.retain(|&c| c > sorted[0]);
    let bin_of = |x: f64| cuts.partition_point(|&c| c <= x);
    let mut labels = Vec::with_capacity(cuts.len() + 1);
    for b in 0..=cuts.len() {
        let lo = if b == 0 { "-inf".to_string() } else { cuts[b - 1].to_string() };
        let hi = if b == cuts.len() { "inf".to_string() } else { cuts[b].to_string() };
        labels.push(format!("[{lo},{hi})"));
    }
    let has_missing = raw.iter().any(|v| *v == MISSING_TOKEN);
    let missing_code = labels.len() as u32;
    if has_missing {
        labels.push(MISSING_TOKEN.to_string());
    }
    let codes = raw
        .iter()
        .map(|v| {
            if *v == MISSING_TOKEN {
                missing_code
            } else {
                bin_of(v.parse().unwrap()) as u32
            }
        })
        .collect();
    (labels, codes)
}

/// Writes a dataset as CSV with a header row, optionally preceded by a
/// label column.
pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset, labels: Option<(&str, &[String])>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let schema = data.schema();
    let mut header: Vec<&str> = Vec::new();
    if let Some((name, _)) = labels {
        header.push(name);
    }
    header.extend(schema.attributes().iter().map(|a| a.name.as_str()));
    w.write_record(&header)?;
    for (a, rec) in data.records().enumerate() {
        let mut row: Vec<&str> = Vec::with_capacity(header.len());
        if let Some((_, l)) = labels {
            row.push(&l[a]);
        }
        row.extend(schema.decode(rec));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One label per line.
pub fn write_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in labels {
        writeln!(w, "{l}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
}

/// `record,cluster,max_posterior`
pub fn write_assignment(path: impl AsRef<Path>, assignment: &ClusterAssignment) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["record", "cluster", "max_posterior"])?;
    for (a, (l, p)) in assignment.labels.iter().zip(&assignment.max_posterior).enumerate() {
        w.write_record([a.to_string(), l.to_string(), p.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

pub fn read_assignment(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut labels = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let cluster = rec
            .get(1)
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| parse_err(path, i + 2, "missing or invalid cluster id"))?;
        labels.push(cluster);
    }
    Ok(labels)
}

/// `k,log_likelihood,aic,bic,mean_density,em_iterations`, one row per level.
pub fn write_trace(path: impl AsRef<Path>, trace: &AnnealTrace) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["k", "log_likelihood", "aic", "bic", "mean_density", "em_iterations"])?;
    for l in &trace.levels {
        w.write_record([
            l.k.to_string(),
            l.log_likelihood.to_string(),
            l.aic.to_string(),
            l.bic.to_string(),
            l.mean_density.to_string(),
            l.em_iterations.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Serialized model: everything needed to re-evaluate posteriors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub version: u32,
    pub schema: Schema,
    pub smoothing: f64,
    pub components: Vec<Component>,
    /// Absent when the model was never evaluated.
    #[serde(default)]
    pub log_likelihood: Option<f64>,
    #[serde(default)]
    pub trace: Option<AnnealTrace>,
    #[serde(default)]
    pub config: Option<AnnealConfig>,
}

impl ModelDocument {
    pub fn new(model: &MixtureModel, schema: &Schema, smoothing: f64) -> Self {
        ModelDocument {
            version: MODEL_VERSION,
            schema: schema.clone(),
            smoothing,
            components: model.components.clone(),
            log_likelihood: model.log_likelihood.is_finite().then_some(model.log_likelihood),
            trace: None,
            config: None,
        }
    }

    pub fn model(&self) -> Result<MixtureModel> {
        let mut m = MixtureModel::new(self.components.clone())?;
        m.log_likelihood = self.log_likelihood.unwrap_or(f64::NAN);
        m.converged = true;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: MODEL_VERSION,
            });
        }
        let cards = self.schema.cardinalities();
        for (i, c) in self.components.iter().enumerate() {
            let shape_ok = c.counts.len() == cards.len() && c.counts.iter().zip(&cards).all(|(v, &n)| v.len() == n);
            if !shape_ok {
                return Err(Error::Document(format!("component {i} does not match the schema")));
            }
        }
        if self.components.is_empty() {
            return Err(Error::Document("no components".into()));
        }
        Ok(())
    }
}

pub fn save_model(path: impl AsRef<Path>, doc: &ModelDocument) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(doc).map_err(|e| Error::Document(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelDocument> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Document(e.to_string()))?;
    if let Some(v) = value.get("version").and_then(|v| v.as_u64()) {
        if v != MODEL_VERSION as u64 {
            return Err(Error::Version {
                found: v as u32,
                expected: MODEL_VERSION,
            });
        }
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| Error::Document(e.to_string()))?;
    doc.validate()?;
    Ok(doc)
}

/// Output paths used by a fit run.
#[derive(Debug, Clone)]
pub struct FitOutputs {
    pub model: PathBuf,
    pub assignment: PathBuf,
    pub trace: PathBuf,
}

impl FitOutputs {
    pub fn in_dir(dir: impl AsRef<Path>) -> Self {
        let dir = dir.as_ref();
        FitOutputs {
            model: dir.join("model.json"),
            assignment: dir.join("assignment.csv"),
            trace: dir.join("trace.csv"),
        }
    }
}
