use std::path::PathBuf;

use thiserror::Error;

use crate::projector::Stage;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid angular selection: {0}")]
    InvalidSelection(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("sinogram stage mismatch: expected {expected:?}, found {found:?}")]
    Stage { expected: Stage, found: Stage },

    #[error("invalid detector calibration: {0}")]
    CalibrationInvalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),

    #[error("solver diverged at iteration {iteration} (objective {objective:.3e} > 10x initial {initial:.3e}); try a smaller step_scale")]
    Diverged {
        iteration: usize,
        objective: f64,
        initial: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("slice {id} has no data for {mode}")]
    MissingMode { id: u32, mode: String },

    #[error("slice {0} not in manifest")]
    UnknownSlice(u32),

    #[error("unknown task '{0}'")]
    UnknownTask(String),

    #[error("unknown reconstructor '{0}'")]
    UnknownMethod(String),

    #[error("duplicate reconstructor name '{0}'")]
    DuplicateMethod(String),

    #[error("parameter file version '{found}' cannot be read by this build (expected '{expected}')")]
    Migration { found: String, expected: String },

    #[error("parameter file: {0}")]
    Params(String),

    #[error("external reconstructor protocol violation: {0}")]
    Protocol(String),

    #[error("external reconstructor timed out after {0:.1} s")]
    Timeout(f64),

    #[error("shape mismatch: expected {expected_rows}x{expected_cols}, got {actual_rows}x{actual_cols}")]
    ShapeMismatch {
        expected_rows: usize,
        expected_cols: usize,
        actual_rows: usize,
        actual_cols: usize,
    },

    #[error("split {0} is empty")]
    EmptySplit(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("image encoding: {0}")]
    Encode(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
