use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {reason} (partial value {partial})")]
    NumericalFailure { reason: String, partial: f64 },

    #[error("step size underflow at t = {t:.6e} s (problem too stiff or discontinuous)")]
    Stiffness { t: f64 },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("no static equilibrium: {0}")]
    NoEquilibrium(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no release: {0}")]
    NoRelease(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;
