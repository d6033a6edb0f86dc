use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Problems with a configuration file or with parameters assembled in code.
///
/// Each variant is a distinct class so callers (and the CLI exit code) can
/// tell a typo from a physically invalid setup.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown key `{key}` at line {line}")]
    UnknownKey { line: usize, key: String },
    #[error("bad value at line {line}: {message}")]
    Type { line: usize, message: String },
    #[error("invalid `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error(
        "integrator unstable: internal step {dt:.3e} s exceeds the bound {limit:.3e} s \
         (highest mode {f_max:.3e} Hz); raise `substeps`"
    )]
    Stability { dt: f64, limit: f64, f_max: f64 },
    #[error("geometry: {0}")]
    Geometry(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("integration diverged at macro step {step}")]
    Diverged { step: usize },
    #[error("time {t:.6e} s is outside the schedule span [0, {end:.6e}) s")]
    OutOfSchedule { t: f64, end: f64 },
    #[error("{0}")]
    Domain(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format { path: path.into(), reason: reason.into() }
    }

    /// True for errors caused by bad input parameters rather than a failure
    /// while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
