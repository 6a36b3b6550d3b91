use thiserror::Error;

/// Errors produced by graph construction, scoring, search, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("collinear data: regressor columns {parents:?} for node {node} are rank-deficient")]
    CollinearData { node: usize, parents: Vec<usize> },

    #[error("insufficient sample: {n} rows cannot support {k} regressors")]
    InsufficientSample { n: usize, k: usize },

    #[error("score table has no entry for node {node} with parents {parents:?}")]
    IncompleteTable { node: usize, parents: Vec<usize> },

    #[error("incompatible scores: {0}")]
    IncompatibleScores(String),

    #[error("resource cap exceeded: {0}")]
    ResourceCap(String),

    /// The minimal log-score gap is taken over DAGs that miss at least one
    /// true edge; when the true graph is empty that set is empty.
    #[error("log-score gap undefined: every DAG is a supergraph of the empty graph")]
    GapUndefined,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 2 input, 3 numeric/degeneracy, 4 resource.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_) | Error::Parse { .. } | Error::Io(_) | Error::Json(_) => 2,
            Error::DegenerateCovariance(_)
            | Error::CollinearData { .. }
            | Error::InsufficientSample { .. }
            | Error::IncompleteTable { .. }
            | Error::IncompatibleScores(_)
            | Error::GapUndefined => 3,
            Error::ResourceCap(_) => 4,
        }
    }
}
