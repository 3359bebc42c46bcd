use thiserror::Error;

/// Errors produced by estimators, models and explainers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no observed events")]
    NoEvents,

    #[error("invalid curve: {0}")]
    InvalidCurve(String),

    #[error("Newton iteration did not converge after {iterations} iterations (gradient sup-norm {gradient_norm:e})")]
    NonConvergence {
        iterations: usize,
        gradient_norm: f64,
        coefficients: Vec<f64>,
    },

    #[error("monotone likelihood: coefficient {column} diverges")]
    MonotoneLikelihood { column: usize },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("unknown level code {value} for categorical feature `{feature}`")]
    UnknownLevel { feature: String, value: f64 },

    #[error("prediction failed for instance {instance}: {source}")]
    Prediction {
        instance: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Short machine-readable tag, used for error documents written by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::NoEvents => "no_events",
            Error::InvalidCurve(_) => "invalid_curve",
            Error::NonConvergence { .. } => "non_convergence",
            Error::MonotoneLikelihood { .. } => "monotone_likelihood",
            Error::RankDeficient => "rank_deficient",
            Error::UnknownLevel { .. } => "unknown_level",
            Error::Prediction { .. } => "prediction",
            Error::Singular(_) => "singular",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
