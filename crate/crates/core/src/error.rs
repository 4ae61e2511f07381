use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("path-loss model requires distance >= 1 m, got {0} m")]
    DistanceOutOfDomain(f64),
    #[error("operation requires a single-user configuration, got K = {0}")]
    NotSingleUser(usize),
    #[error("infeasible state: {0}")]
    Infeasible(String),
    #[error("monte carlo evaluation needs at least one sample")]
    NoSamples,
    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

pub type Result<T> = std::result::Result<T, Error>;
