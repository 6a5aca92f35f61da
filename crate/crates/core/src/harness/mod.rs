//! Configuration, persistence, commands and the end-to-end pipeline.

pub mod canonical;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod verify;

use std::path::Path;

use thiserror::Error;

use crate::metrics::MetricError;
use crate::scm::ScmError;
use crate::seqrec::SeqError;
use crate::sim::SimError;

pub use checkpoint::{Checkpoint, Role};
pub use commands::{
    cmd_eval, cmd_gen_data, cmd_ter, cmd_train, cmd_verify, run_pipeline, EvalMode, ItemSet, PipelineOutput,
    RunManifest, TrainMode,
};
pub use config::{load_config, parse_config, EvalConfig, ExperimentConfig, ModelConfig, SimConfig, FORMAT_VERSION};
pub use dataset::{read_dataset, write_dataset, Dataset, SequenceRecord};
pub use verify::{Check, Suite, SuiteReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse { origin: String, line: usize, column: usize, message: String },
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },
    #[error("csrec training needs an observational checkpoint (--ftilde)")]
    MissingFtilde,
    #[error("checkpoint role {found}, expected {expected}")]
    RoleMismatch { expected: String, found: String },
    #[error("malformed file: {0}")]
    Format(String),
    #[error("non-finite number cannot be serialized")]
    NonFinite,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Model(#[from] SeqError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Scm(#[from] ScmError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &Path, source: std::io::Error) -> HarnessError {
    HarnessError::Io { path: path.display().to_string(), source }
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| io_err(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}
