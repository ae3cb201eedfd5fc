use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box domain: {0}")]
    InvalidDomain(String),

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("point {point:?} lies outside the domain")]
    OutOfDomain { point: Vec<f64> },

    #[error("dimension {0} is not supported by this operation")]
    UnsupportedDimension(usize),

    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),

    #[error("infeasible constraint specification: {0}")]
    InfeasibleSpec(String),

    #[error("splines live on different complexes")]
    ComplexMismatch,

    #[error("invalid sample: {0}")]
    InvalidSample(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("infeasible at refinement level {level}: {certificate}")]
    InfeasibleLevel { level: usize, certificate: String },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
