use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("real Jordan decomposition failed: {reason} (conditioning {condition:.3e})")]
    Decomposition { reason: String, condition: f64 },

    #[error("regulator equations have no solution (residual {residual:.3e})")]
    RegulatorInfeasible { residual: f64 },

    #[error("invalid topology: {0}")]
    Topology(String),

    #[error("leader quantizer argument {value} lies outside [-1, 1]")]
    QuantizerRange { value: f64 },

    #[error("leader codec overflow at step {step}, coordinate {coord}: |argument| = {value}")]
    LeaderOverflow { step: usize, coord: usize, value: f64 },

    #[error("DoS signal: {0}")]
    Dos(String),

    #[error("design analysis: {0}")]
    Analysis(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
