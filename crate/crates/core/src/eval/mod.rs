//! Few-shot evaluation: shot sampling, metrics, bootstrap intervals and
//! group/macro aggregation.

mod bootstrap;
mod fewshot;
mod metrics;
mod report;

pub use bootstrap::{bootstrap_ci, bootstrap_ci_multi, percentile, BootstrapConfig, Interval};
pub use fewshot::{
    cell_seed, derive_seed, evaluate_seed, evaluate_task, sample_shots, summarize_cell, CellError, Dataset, FewShotConfig,
    InsufficientShots, SeedOutcome, Shots, TaskData,
};
pub use metrics::{auprc, auroc, brier, Metric, MetricError};
pub use report::{
    aggregate, k_label, CellResult, CiSet, FlatRow, GroupSummary, MacroSummary, MetricReport, Metrics, PlotRow, SeedMetrics,
    GROUP_ROW, MACRO_ROW,
};
