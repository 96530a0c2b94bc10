use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::bootstrap::Interval;
use super::metrics::{auprc, auroc, brier, Metric, MetricError};
use crate::heads::HeadSpec;
use crate::model::TaskGroup;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auroc: f64,
    pub auprc: f64,
    pub brier: f64,
}

impl Metrics {
    pub fn compute(scores: &[f64], labels: &[bool]) -> Result<Self, MetricError> {
        Ok(Metrics { auroc: auroc(scores, labels)?, auprc: auprc(scores, labels)?, brier: brier(scores, labels)? })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Auroc => self.auroc,
            Metric::Auprc => self.auprc,
            Metric::Brier => self.brier,
        }
    }

    /// Unweighted mean; all zeros for an empty input.
    pub fn mean<'a>(items: impl IntoIterator<Item = &'a Metrics>) -> Metrics {
        let (mut sum, mut n) = (Metrics { auroc: 0.0, auprc: 0.0, brier: 0.0 }, 0usize);
        for m in items {
            sum.auroc += m.auroc;
            sum.auprc += m.auprc;
            sum.brier += m.brier;
            n += 1;
        }
        let d = n.max(1) as f64;
        Metrics { auroc: sum.auroc / d, auprc: sum.auprc / d, brier: sum.brier / d }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSet {
    pub auroc: Interval,
    pub auprc: Interval,
    pub brier: Interval,
}

impl CiSet {
    pub fn get(&self, metric: Metric) -> &Interval {
        match metric {
            Metric::Auroc => &self.auroc,
            Metric::Auprc => &self.auprc,
            Metric::Brier => &self.brier,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: u64,
    pub spec: HeadSpec,
    pub metrics: Metrics,
}

/// Results for one (task, k). `k` is `None` for full-data training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub task_id: String,
    pub group: TaskGroup,
    pub k: Option<usize>,
    pub seeds: Vec<SeedMetrics>,
    pub mean: Option<Metrics>,
    pub ci: Option<CiSet>,
    pub skip_reason: Option<String>,
}

impl CellResult {
    pub fn skipped(task_id: &str, group: TaskGroup, k: Option<usize>, reason: String) -> Self {
        CellResult { task_id: task_id.into(), group, k, seeds: Vec::new(), mean: None, ci: None, skip_reason: Some(reason) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: TaskGroup,
    pub k: Option<usize>,
    pub n_tasks: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroSummary {
    pub k: Option<usize>,
    pub n_groups: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub features: String,
    pub head: String,
    pub cells: Vec<CellResult>,
    pub groups: Vec<GroupSummary>,
    pub macro_average: Vec<MacroSummary>,
}

impl MetricReport {
    pub fn new(features: impl Into<String>, head: impl Into<String>, mut cells: Vec<CellResult>) -> Self {
        cells.sort_by(|a, b| a.task_id.cmp(&b.task_id).then(k_order(a.k).cmp(&k_order(b.k))));
        let (groups, macro_average) = aggregate(&cells);
        MetricReport { features: features.into(), head: head.into(), cells, groups, macro_average }
    }

    pub fn cell(&self, task_id: &str, k: Option<usize>) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.task_id == task_id && c.k == k)
    }

    /// Long-format rows: per seed, per cell (with intervals), per group and
    /// the macro average.
    pub fn flat_rows(&self) -> Vec<FlatRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            for s in &cell.seeds {
                for m in Metric::ALL {
                    rows.push(FlatRow::new(&cell.task_id, cell.group.as_str(), cell.k, Some(s.seed), m, s.metrics.get(m), None));
                }
            }
            if let (Some(mean), Some(ci)) = (&cell.mean, &cell.ci) {
                for m in Metric::ALL {
                    rows.push(FlatRow::new(&cell.task_id, cell.group.as_str(), cell.k, None, m, mean.get(m), Some(ci.get(m))));
                }
            }
        }
        for g in &self.groups {
            for m in Metric::ALL {
                rows.push(FlatRow::new(GROUP_ROW, g.group.as_str(), g.k, None, m, g.metrics.get(m), None));
            }
        }
        for a in &self.macro_average {
            for m in Metric::ALL {
                rows.push(FlatRow::new(MACRO_ROW, MACRO_ROW, a.k, None, m, a.metrics.get(m), None));
            }
        }
        rows
    }

    /// AUROC against k for every task, group and the macro average.
    pub fn plot_rows(&self) -> Vec<PlotRow> {
        let mut rows = Vec::new();
        for cell in &self.cells {
            if let (Some(mean), Some(ci)) = (&cell.mean, &cell.ci) {
                rows.push(PlotRow {
                    series: cell.task_id.clone(),
                    k: cell.k,
                    auroc: mean.auroc,
                    lo: Some(ci.auroc.lo),
                    hi: Some(ci.auroc.hi),
                });
            }
        }
        for g in &self.groups {
            rows.push(PlotRow { series: alloc::format!("group:{}", g.group), k: g.k, auroc: g.metrics.auroc, lo: None, hi: None });
        }
        for a in &self.macro_average {
            rows.push(PlotRow { series: MACRO_ROW.to_string(), k: a.k, auroc: a.metrics.auroc, lo: None, hi: None });
        }
        rows
    }
}

pub const GROUP_ROW: &str = "group";
pub const MACRO_ROW: &str = "macro";

fn k_order(k: Option<usize>) -> usize {
    k.unwrap_or(usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatRow {
    pub task: String,
    pub group: String,
    pub k: String,
    pub seed: String,
    pub metric: String,
    pub value: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

impl FlatRow {
    fn new(task: &str, group: &str, k: Option<usize>, seed: Option<u64>, metric: Metric, value: f64, ci: Option<&Interval>) -> Self {
        FlatRow {
            task: task.into(),
            group: group.into(),
            k: k_label(k),
            seed: seed.map_or_else(|| "mean".into(), |s| s.to_string()),
            metric: metric.as_str().into(),
            value,
            lo: ci.map(|c| c.lo),
            hi: ci.map(|c| c.hi),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub series: String,
    pub k: Option<usize>,
    pub auroc: f64,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
}

/// "all" for full-data training, otherwise the shot count.
pub fn k_label(k: Option<usize>) -> String {
    k.map_or_else(|| "all".into(), |k| k.to_string())
}

/// Task means (already averaged over seeds) to unweighted group means, then
/// to an unweighted mean over groups, separately for every k. Skipped cells
/// do not count.
pub fn aggregate(cells: &[CellResult]) -> (Vec<GroupSummary>, Vec<MacroSummary>) {
    let mut by_group: BTreeMap<(usize, TaskGroup), (Option<usize>, Vec<Metrics>)> = BTreeMap::new();
    for cell in cells {
        if let Some(mean) = cell.mean {
            by_group.entry((k_order(cell.k), cell.group)).or_insert_with(|| (cell.k, Vec::new())).1.push(mean);
        }
    }
    let groups: Vec<GroupSummary> = by_group
        .into_iter()
        .map(|((_, group), (k, ms))| GroupSummary { group, k, n_tasks: ms.len(), metrics: Metrics::mean(&ms) })
        .collect();
    let mut by_k: BTreeMap<usize, (Option<usize>, Vec<Metrics>)> = BTreeMap::new();
    for g in &groups {
        by_k.entry(k_order(g.k)).or_insert_with(|| (g.k, Vec::new())).1.push(g.metrics);
    }
    let macro_average =
        by_k.into_values().map(|(k, ms)| MacroSummary { k, n_groups: ms.len(), metrics: Metrics::mean(&ms) }).collect();
    (groups, macro_average)
}
