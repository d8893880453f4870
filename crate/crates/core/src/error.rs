use crate::quarter::Quarter;

/// Errors produced by the forecasting, scoring and backtest machinery.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("operation not supported for {0}")]
    Unsupported(&'static str),
    #[error("series are not aligned: {0}")]
    Alignment(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("no vintage released for {0}")]
    MissingVintage(Quarter),
    #[error("no vintage available at or before {0}")]
    NoDataYet(Quarter),
    #[error("panel for origin {origin}, horizon {horizon} has {members} member(s), need at least 2")]
    InsufficientPanel {
        origin: Quarter,
        horizon: u8,
        members: usize,
    },
    #[error("need {needed} quarterly rates at {issue}, only {available} available")]
    InsufficientHistory {
        issue: Quarter,
        needed: usize,
        available: usize,
    },
    #[error("rate for {target} not covered by vintage {vintage}")]
    PendingObservation { target: Quarter, vintage: Quarter },
    #[error("training set has {rows} rows, need at least {needed}")]
    InsufficientTraining { rows: usize, needed: usize },
    #[error("fit failed: {0}")]
    FitFailure(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("sub-period {0} has no scored origins")]
    EmptyPeriod(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Copy of a shared error. Wrapped I/O, CSV and JSON errors come back as
    /// I/O errors carrying the original message.
    pub(crate) fn duplicate(&self) -> Error {
        match self {
            Error::Domain(s) => Error::Domain(s.clone()),
            Error::InvalidParameter(s) => Error::InvalidParameter(s.clone()),
            Error::Unsupported(s) => Error::Unsupported(s),
            Error::Alignment(s) => Error::Alignment(s.clone()),
            Error::InsufficientData(s) => Error::InsufficientData(s.clone()),
            Error::MissingVintage(q) => Error::MissingVintage(*q),
            Error::NoDataYet(q) => Error::NoDataYet(*q),
            Error::InsufficientPanel { origin, horizon, members } => {
                Error::InsufficientPanel { origin: *origin, horizon: *horizon, members: *members }
            }
            Error::InsufficientHistory { issue, needed, available } => {
                Error::InsufficientHistory { issue: *issue, needed: *needed, available: *available }
            }
            Error::PendingObservation { target, vintage } => {
                Error::PendingObservation { target: *target, vintage: *vintage }
            }
            Error::InsufficientTraining { rows, needed } => Error::InsufficientTraining { rows: *rows, needed: *needed },
            Error::FitFailure(s) => Error::FitFailure(s.clone()),
            Error::Config(s) => Error::Config(s.clone()),
            Error::EmptyPeriod(s) => Error::EmptyPeriod(s.clone()),
            Error::Parse(s) => Error::Parse(s.clone()),
            Error::Io(e) => Error::Io(std::io::Error::new(e.kind(), e.to_string())),
            Error::Csv(e) => Error::Io(std::io::Error::other(e.to_string())),
            Error::Json(e) => Error::Io(std::io::Error::other(e.to_string())),
        }
    }
}
