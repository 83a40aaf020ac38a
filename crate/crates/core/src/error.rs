use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid binning: {0}")]
    Binning(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("truth bin {bin} received only {count} Monte Carlo events (need at least {required}); increase n_mc")]
    EmptyTruthBin { bin: usize, count: u64, required: u64 },

    #[error("non-positive smearing width {width} at x_true = {x_true}")]
    NonPositiveWidth { width: f64, x_true: f64 },

    #[error("nuisance prior redraw limit of {limit} exceeded for toy {toy}")]
    RedrawLimit { toy: usize, limit: usize },

    #[error("objective is not finite at {0}")]
    NonFinite(String),

    #[error("matrix is singular (condition number {condition:e})")]
    Singular { condition: f64 },

    #[error("negative Hessian is not positive definite (eigenvalue {eigenvalue:e})")]
    NotNegativeDefinite { eigenvalue: f64 },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error("{failed} of {total} pseudo-experiments failed to converge (limit 5%)")]
    ToyLoss { failed: usize, total: usize },

    #[error("unknown key: {0}")]
    UnknownKey(String),

    #[error("missing required key: {0}")]
    MissingKey(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// The underlying error, looking through stage context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Process exit status the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::UnknownKey(_)
            | Error::MissingKey(_)
            | Error::Config(_)
            | Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_) => 1,
            Error::ToyLoss { .. } => 3,
            _ => 2,
        }
    }
}
