//! Experiment orchestration: base classifier, method comparison, sweeps,
//! worst-slab audits, CSV outputs, SVG charts and the command line.

mod classifier;
mod cli;
mod config;
mod experiment;
mod output;
mod plot;

pub use classifier::{cross_entropy_loss_grad, train_base_classifier, BaseClassifier, ClassifierConfig};
pub use cli::{run_cli, Cli, Command};
pub use config::{
    AuditConfig, AuditFeatures, DatasetConfig, DatasetKind, ExperimentConfig, Method, NURSERY_PATH_ENV,
};
pub use experiment::{
    aggregate, build_dataset, draw_probes, evaluate, fareg_covered_bits, fareg_halves, fareg_sets, mean_std,
    method_sets, prepare, run_audit, run_experiment, run_sweep, seeds, split_dataset, train_fareg, Aggregate,
    AuditAggregate, AuditRecord, ExperimentOutcome, Prepared, ProbeRecord, RunRecord, Splits, SweepOutcome,
    SweepParam, SweepRow,
};
pub use output::{
    aggregate_csv, audit_aggregate_csv, audit_csv, probes_csv, read_table, runs_csv, sweep_csv, write_csv, Table,
};
pub use plot::{cdf_points, emit_plots, Chart, Series};

use thiserror::Error;

use crate::conformal::ConformalError;
use crate::datagen::DataError;
use crate::grouplearn::GroupError;
use crate::metrics::MetricError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(String),
}

impl HarnessError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Usage(_) => 2,
            HarnessError::Data(_) | HarnessError::Format(_) | HarnessError::Io(_) => 3,
            HarnessError::Training(_) => 4,
        }
    }
}

impl From<DataError> for HarnessError {
    fn from(e: DataError) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<GroupError> for HarnessError {
    fn from(e: GroupError) -> Self {
        match e {
            GroupError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Training(other.to_string()),
        }
    }
}

impl From<ConformalError> for HarnessError {
    fn from(e: ConformalError) -> Self {
        HarnessError::Training(e.to_string())
    }
}

impl From<MetricError> for HarnessError {
    fn from(e: MetricError) -> Self {
        HarnessError::Training(e.to_string())
    }
}
