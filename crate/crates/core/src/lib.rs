//! Categorical mixture clustering with density-based annealing.

pub mod anneal;
pub mod density;
pub mod em;
pub mod error;
pub mod io;
pub mod math;
pub mod model;
pub mod report;
pub mod scaling;
pub mod selection;
pub mod synth;

pub use anneal::{anneal, schedule, AnnealConfig, AnnealOutcome, AnnealTrace, CenterSampling, Criterion, Level};
pub use density::{component_density, DensityMetric, DensityReport};
pub use em::EmConfig;
pub use error::{Error, Result};
pub use io::{load_csv, IngestConfig, LoadedData, MissingPolicy};
pub use report::Contingency;
pub use model::{Attribute, ClusterAssignment, Component, Dataset, MixtureModel, Schema};
