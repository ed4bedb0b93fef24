use thiserror::Error;

/// Errors raised by the solvers and experiment drivers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cubic not in three-real-roots regime")]
    CubicRegime,

    #[error("real-spectrum assumption violated: eigenvalues not real")]
    ComplexEigenvalues,

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("{assumption} violated: |{quantity}| = {value:e} below floor {floor:e} at tau = {tau}")]
    Assumption {
        assumption: &'static str,
        quantity: &'static str,
        value: f64,
        floor: f64,
        tau: f64,
    },

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
