use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-stationary parameter: |phi| = {0} must be < 1")]
    NonStationary(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// gamma^2 <= sigma_eps^2, the Gaussian deconvolution kernel is undefined.
    #[error("deconvolution domain error: gamma^2 = {gamma2} <= sigma_eps^2 = {sigma_eps2}")]
    DeconvolutionDomain { gamma2: f64, sigma_eps2: f64 },

    #[error("quadrature failure: {0}")]
    Quadrature(String),

    #[error("ill-conditioned Hessian: condition number {0:.3e}")]
    IllConditioned(f64),

    #[error("covariance not positive semidefinite: smallest eigenvalue {0:.3e}")]
    NotPsd(f64),

    #[error("insufficient data: need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
