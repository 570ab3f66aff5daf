use thiserror::Error;

use crate::equilibria::Branch;

pub type Result<T> = std::result::Result<T, Error>;

/// Failures raised by the lattice engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("degenerate coupling weights: alpha + beta + lambda must be positive")]
    DegenerateCoupling,

    #[error("mu = {0} does not exceed 4: the homogeneous equation has no bistable regime")]
    NoBistability(f64),

    #[error("value {0} lies outside the open interval (0, 1)")]
    Domain(f64),

    #[error("equilibrium branch x_{0} does not exist for these parameters")]
    MissingBranch(Branch),

    #[error("activity {x} is not an equilibrium (|x - S(x)| = {residual:e})")]
    NotEquilibrium { x: f64, residual: f64 },

    #[error("invalid topology: {0}")]
    InvalidTopology(String),

    #[error("invalid input signal: {0}")]
    InvalidInput(String),

    #[error("invalid solver settings: {0}")]
    InvalidSettings(String),

    #[error("integration diverged at t = {t}")]
    Divergence { t: f64 },

    #[error("front tracking failed at t = {t}: {reason}")]
    Tracking { t: f64, reason: String },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("no stationary profile: {0}")]
    NoProfile(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
