use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("code {code} out of range for attribute {attribute} (cardinality {cardinality})")]
    CodeRange {
        attribute: usize,
        code: usize,
        cardinality: usize,
    },

    #[error("record has {got} attributes, schema has {expected}")]
    RecordWidth { expected: usize, got: usize },

    #[error("component is empty (effective size 0)")]
    EmptyComponent,

    #[error("component has no probability mass (effective size plus smoothing is 0)")]
    ZeroMass,

    #[error("probability vector is not normalized (sum = {sum})")]
    NotNormalized { sum: f64 },

    #[error("probability vector has a negative or non-finite entry: {value}")]
    InvalidProbability { value: f64 },

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{0}: file contains no records")]
    EmptyFile(PathBuf),

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("model document version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed model document: {0}")]
    Document(String),

    #[error("I/O error on {}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
