//! Error type for the experiment harness.
//!
//! Everything that can go wrong at the harness layer — unreadable files,
//! malformed configs, corrupted checkpoints, bad CSV rows — is folded into
//! one enum so command implementations stay declarative.

use rdmd_core::oracle::OracleError;
use rdmd_core::TensorError;

use std::fmt;
use std::path::PathBuf;

/// Harness-level failure, always carrying enough context to act on.
#[derive(Debug)]
pub enum HarnessError {
    /// Filesystem access failed.
    Io { path: PathBuf, source: std::io::Error },
    /// Config file did not parse or failed validation.
    Config { path: PathBuf, message: String },
    /// Checkpoint file is malformed, corrupted, or incompatible.
    Checkpoint { path: PathBuf, message: String },
    /// A CSV input row is malformed; `line` is 1-based in the file.
    Csv { path: PathBuf, line: usize, message: String },
    /// A command was invoked with inconsistent arguments.
    Invalid { message: String },
    /// Numerics bubbled up from the core library.
    Core(TensorError),
    /// Closed-form oracle failure from the core library.
    Oracle(OracleError),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Io { path, source } => {
                write!(f, "io error on {}: {source}", path.display())
            }
            HarnessError::Config { path, message } => {
                write!(f, "config error in {}: {message}", path.display())
            }
            HarnessError::Checkpoint { path, message } => {
                write!(f, "checkpoint error in {}: {message}", path.display())
            }
            HarnessError::Csv { path, line, message } => {
                write!(f, "csv error in {} line {line}: {message}", path.display())
            }
            HarnessError::Invalid { message } => write!(f, "invalid invocation: {message}"),
            HarnessError::Core(e) => write!(f, "core error: {e}"),
            HarnessError::Oracle(e) => write!(f, "oracle error: {e}"),
        }
    }
}

impl std::error::Error for HarnessError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            HarnessError::Io { source, .. } => Some(source),
            HarnessError::Core(e) => Some(e),
            HarnessError::Oracle(e) => Some(e),
            _ => None,
        }
    }
}

impl From<TensorError> for HarnessError {
    fn from(e: TensorError) -> HarnessError {
        HarnessError::Core(e)
    }
}

impl From<OracleError> for HarnessError {
    fn from(e: OracleError) -> HarnessError {
        HarnessError::Oracle(e)
    }
}

/// Attaches the path to a raw io::Error.
pub fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}
