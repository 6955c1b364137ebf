use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("simulation diverged at substep {step}")]
    SimulationDiverged { step: usize },
    #[error("rollout diverged at step {step}")]
    RolloutDiverged { step: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("parse error in {what} at byte {offset}: {msg}")]
    Parse {
        what: String,
        offset: usize,
        msg: String,
    },
    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("training diverged at step {step} (last good checkpoint: {})",
        last_good.as_ref().map(|p| p.display().to_string()).unwrap_or_else(|| "none".into()))]
    TrainingDiverged {
        step: u64,
        last_good: Option<PathBuf>,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(what: impl Into<String>, offset: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            what: what.into(),
            offset,
            msg: msg.into(),
        }
    }
}
