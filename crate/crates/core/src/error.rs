//! Error type shared by every module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid event stream: {0}")]
    InvalidEvents(String),

    #[error("invalid covariates: {0}")]
    InvalidCovariates(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("exposure overflow on dyad ({sender}, {receiver}): z'gamma = {value}")]
    ExposureOverflow {
        sender: usize,
        receiver: usize,
        value: f64,
    },

    #[error("solver diverged at t = {t}: |{coordinate}| = {value} exceeds 50")]
    Divergence {
        t: f64,
        coordinate: String,
        value: f64,
    },

    #[error("singular {what} (condition estimate {condition:e})")]
    Singular { what: &'static str, condition: f64 },

    #[error("reference node has no incoming mass at t = {t}; the pinned system has no solution")]
    ReferenceInactive { t: f64 },

    #[error("degenerate variance structure at t = {t}: v_(2n)(2n) = {value}")]
    DegenerateVariance { t: f64, value: f64 },

    #[error("insufficient grid: need at least {needed} points, got {got}")]
    InsufficientGrid { needed: usize, got: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid fold count K = {k} for n = {n}")]
    InvalidFolds { k: usize, n: usize },

    #[error("rate explosion on dyad ({sender}, {receiver}): dominating rate {rate:e} exceeds 1e6")]
    RateExplosion {
        sender: usize,
        receiver: usize,
        rate: f64,
    },

    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: usize,
        column: usize,
        reason: String,
    },

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
