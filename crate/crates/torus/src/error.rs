use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("perturbation is not real: imaginary part {imag:e} at H = {value:e}")]
    NotReal { imag: f64, value: f64 },
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("linear operator is numerically singular at iteration {r} (pivot ratio {ratio:e}); re-check resonance conditions")]
    Singular { r: usize, ratio: f64 },
    #[error("divergence at iteration {r}: residual grew from {from:e} to {to:e}")]
    Diverged { r: usize, from: f64, to: f64 },
    #[error("non-finite iterate at iteration {r}")]
    NonFinite { r: usize },
}

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum MsaError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{what} is numerically singular (pivot ratio {ratio:e})")]
    Singular { what: String, ratio: f64 },
}
