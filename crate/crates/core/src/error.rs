use thiserror::Error;

use crate::spectral::PerronPair;

/// Errors raised anywhere in the structured-population pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("argument outside the model domain: {0}")]
    Domain(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("growth rate {lambda} must exceed -{death_floor} (age integrals diverge)")]
    LambdaBelowDeathFloor { lambda: f64, death_floor: f64 },

    #[error("age truncation at {a_max} leaves a tail bound {bound:e} above tolerance {tol:e}")]
    TailBound { a_max: f64, bound: f64, tol: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("power iteration did not converge after {} iterations (residual {:e})", .0.iterations, .0.residual)]
    NotConverged(Box<PerronPair>),

    #[error("subcritical model: spectral radius at zero growth rate is {rho0} <= 1")]
    Subcritical { rho0: f64 },

    #[error("no upper bracket for the growth rate below {0}")]
    BracketCap(f64),

    #[error("operation requires the regular regime: {0}")]
    Regime(String),

    #[error("particle count exceeded cap {cap} at t = {t}")]
    Explosion { cap: usize, t: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
