use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid resolution {0} (minimum is {1})")]
    InvalidResolution(usize, usize),

    #[error("invalid count: {0}")]
    InvalidCount(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numerical guard: {0}")]
    Numerical(String),

    #[error("degenerate interval [{near}, {far}]")]
    DegenerateInterval { near: f64, far: f64 },

    #[error("empty mesh")]
    EmptyMesh,

    #[error("optimization diverged at iteration {iteration}: loss {loss} > 10x initial {initial}")]
    Diverged {
        iteration: usize,
        loss: f64,
        initial: f64,
    },

    #[error("step t={step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{stage}: {source}")]
    InStage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("bad file format in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep {
            step,
            source: Box::new(self),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::InStage {
            stage,
            source: Box::new(self),
        }
    }
}
