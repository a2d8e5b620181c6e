//! Data selection by gradient alignment.
//!
//! A small reference model defines a weight-space direction; each training
//! sample is scored by how well its gradient step moves the trainee along that
//! direction (the *mimic score*). Scores reweight batches online and, logged
//! across epochs, feed an offline filter that votes samples in or out. A
//! `theory` module checks the convergence identities behind the method
//! numerically, and a `harness` module packages the end-to-end experiments.
//!
//! Everything is seeded: the same seed produces bit-identical datasets,
//! trajectories, score logs, and reports, with or without the `parallel`
//! feature (reductions always run in ascending sample order).

pub mod config;
pub mod datasets;
pub mod filterkit;
pub mod harness;
pub mod mimic;
pub mod models;
pub mod num;
pub mod par;
pub mod rng;
pub mod theory;
pub mod trainer;

use thiserror::Error;

/// Crate-wide error type.
///
/// `is_config_error` distinguishes bad inputs/configuration (CLI exit code 1)
/// from runtime failures such as I/O (exit code 2).
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    /// Correlation is undefined (too few points or zero variance).
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    /// The reference direction has zero norm, so alignment is undefined.
    #[error("degenerate target: {0}")]
    DegenerateTarget(String),
    /// A configuration file or flag set is invalid.
    #[error("config error: {0}")]
    Config(String),
    /// A data file failed to parse; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors the CLI reports as configuration mistakes (exit 1)
    /// rather than runtime failures (exit 2).
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_) | Error::Config(_) | Error::Parse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;

/// Formats a float with 17 significant digits, enough for `f64` round-trip.
/// Used by every CSV and JSON writer so artifacts are lossless and
/// byte-stable across runs.
pub(crate) fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
