use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("calibration failed: {msg} (residual {residual:e})")]
    Calibration { msg: String, residual: f64 },
    #[error("offspring overflow: {count} children exceeds cap {cap}")]
    OffspringOverflow { count: u64, cap: u64 },
    #[error("population cap {cap} exceeded at generation {generation}")]
    PopulationCap { cap: usize, generation: usize },
    #[error("no accepted samples out of {attempts} attempts")]
    NoAcceptance { attempts: u64 },
    #[error("empty pool: all resampling weights are zero")]
    EmptyPool,
    #[error("no surviving replicas")]
    NoSurvivors,
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
