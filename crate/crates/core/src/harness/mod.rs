//! Experiment orchestration: configuration, single trials, the seed grid,
//! CSV artifacts, checkpoints and the aggregate report.

mod artifacts;
mod checkpoint;
mod config;
mod grid;
mod report;
mod train;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use artifacts::{
    read_csv, write_csv, CurveCsv, EvalCsv, FileSink, MemorySink, MetricsCsv, RegretCsv, SummaryCsv,
    TrialSink, CURVE_HEADER, EVAL_FILE, EVAL_HEADER, METRICS_HEADER, REGRET_HEADER, SUMMARY_HEADER, LEARNING_CURVE_FILE, METRICS_FILE, REGRET_FILE, SUMMARY_FILE,
};
pub use checkpoint::{Checkpoint, CHECKPOINT_FILE, CHECKPOINT_MAGIC};
pub use config::{
    default_output_dir, AgentsConfig, ExperimentConfig, ExperimentSettings, ObservationConfig,
    DEFAULT_OUT, OUT_ENV,
};
pub use grid::{aggregate, run_grid, trial_dir_name, GridResult, RESOLVED_CONFIG_FILE};
pub use report::{delta_percent, format_table, report, Fig1Row, Fig2Row, Report, FIG1_FILE, FIG2_FILE, TABLE_FILE};
pub use train::{run_trial, train, Baseline, CurveThinner, TrialFailure, TrialOutcome, TrialSpec};

use crate::dp::DpError;
use crate::nn::NnError;
use crate::sim::SimError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{}: column `{column}`: {detail}", path.display())]
    Schema {
        path: PathBuf,
        column: String,
        detail: String,
    },
    #[error("checkpoint {}: {detail}", path.display())]
    Checkpoint { path: PathBuf, detail: String },
    #[error("report: {0}")]
    Report(String),
    #[error(transparent)]
    Dp(#[from] DpError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        Self::Csv {
            path: path.to_path_buf(),
            source,
        }
    }
}
