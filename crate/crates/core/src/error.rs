use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Everything that can go wrong while loading data, fitting nuisances or
/// estimating. Variants are split into data problems and numeric failures so
/// front ends can map them to distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("row {row}: {msg}")]
    InvalidRow { row: usize, msg: String },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not positive definite (pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("design is rank deficient; collinear columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },

    #[error("{model}: complete or quasi-complete separation (coefficient norm {norm:.3e})")]
    Separation { model: String, norm: f64 },

    #[error("{model}: no convergence after {iterations} iterations (gradient trace {trace:?})")]
    NoConvergence {
        model: String,
        iterations: usize,
        trace: Vec<f64>,
    },

    #[error("{nuisance}: {msg}")]
    Nuisance { nuisance: String, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl Error {
    /// True when the input data (rather than the numerics) is at fault.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::MissingColumn(_)
                | Error::InvalidRow { .. }
                | Error::InvalidData(_)
                | Error::Csv(_)
                | Error::Io(_)
                | Error::Json(_)
                | Error::InvalidParameter(_)
        )
    }

    /// Attach the name of the nuisance model that failed.
    pub fn in_nuisance(self, nuisance: &str) -> Error {
        match self {
            Error::Nuisance { .. } => self,
            Error::InvalidData(msg) => Error::InvalidData(format!("{nuisance}: {msg}")),
            Error::InvalidParameter(msg) => Error::InvalidParameter(format!("{nuisance}: {msg}")),
            e if e.is_data_error() => e,
            e => Error::Nuisance {
                nuisance: nuisance.to_string(),
                msg: e.to_string(),
            },
        }
    }
}
