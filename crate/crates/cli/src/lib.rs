//! Orchestration for the `seqfinal` binary: experiment configuration,
//! sequence building, the run store and the five subcommands.

pub mod commands;
pub mod config;
pub mod data;
pub mod store;

pub use commands::{cmd_analyze, cmd_build_seq, cmd_quantify, cmd_report, cmd_run, RunSummary};
pub use config::{ExperimentConfig, RunSection, SequenceSection};

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("artifact integrity: {0}")]
    Integrity(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Corpus(#[from] seqfinal::corpus::CorpusError),
    #[error(transparent)]
    Shift(#[from] seqfinal::shiftgen::ShiftError),
    #[error(transparent)]
    Metric(#[from] seqfinal::shiftmetrics::MetricError),
    #[error(transparent)]
    Method(#[from] seqfinal::methods::MethodError),
    #[error(transparent)]
    Tensor(#[from] seqfinal::tensornet::TensorError),
    #[error(transparent)]
    Analysis(#[from] seqfinal::analysis::AnalysisError),
    #[error("toml: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
