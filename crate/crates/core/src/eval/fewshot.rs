use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci_multi, BootstrapConfig};
use super::metrics::{Metric, MetricError};
use super::report::{CellResult, CiSet, Metrics, SeedMetrics};
use crate::heads::{tune, HeadError, HeadKind, HeadSpec, HyperparamGrid, Matrix};
use crate::model::TaskGroup;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FewShotConfig {
    pub k_grid: Vec<usize>,
    pub n_seeds: usize,
    /// Train on the full train and valid splits instead of sampled shots.
    pub full_data_mode: bool,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        FewShotConfig { k_grid: alloc::vec![1, 2, 4, 8, 12, 16, 24, 32, 48, 64, 128], n_seeds: 5, full_data_mode: false }
    }
}

impl FewShotConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_seeds == 0 {
            return Err("n_seeds must be at least 1".into());
        }
        if !self.full_data_mode && (self.k_grid.is_empty() || self.k_grid.contains(&0)) {
            return Err("k_grid must be nonempty with every k >= 1".into());
        }
        Ok(())
    }

    /// Shot counts to run; `None` stands for the full training data.
    pub fn shots(&self) -> Vec<Option<usize>> {
        if self.full_data_mode {
            alloc::vec![None]
        } else {
            self.k_grid.iter().copied().map(Some).collect()
        }
    }

    /// Full-data training involves no sampling, so one seed suffices.
    pub fn seeds_for(&self, k: Option<usize>) -> usize {
        if k.is_none() {
            1
        } else {
            self.n_seeds
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{split} split has {available} {class} examples, {needed} needed")]
pub struct InsufficientShots {
    pub split: &'static str,
    pub class: &'static str,
    pub available: usize,
    pub needed: usize,
}

/// Row indices drawn from the train and valid splits, ascending within each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shots {
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
}

/// `k` positives and `k` negatives drawn uniformly without replacement from
/// each split.
pub fn sample_shots(train: &[bool], valid: &[bool], k: usize, seed: u64) -> Result<Shots, InsufficientShots> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |labels: &[bool], split: &'static str| -> Result<Vec<usize>, InsufficientShots> {
        let mut picked = Vec::with_capacity(2 * k);
        for (class, want) in [("positive", true), ("negative", false)] {
            let pool: Vec<usize> = labels.iter().enumerate().filter(|(_, &l)| l == want).map(|(i, _)| i).collect();
            if pool.len() < k {
                return Err(InsufficientShots { split, class, available: pool.len(), needed: k });
            }
            picked.extend(sample(&mut rng, pool.len(), k).into_iter().map(|j| pool[j]));
        }
        picked.sort_unstable();
        Ok(picked)
    };
    let train = draw(train, "train")?;
    let valid = draw(valid, "valid")?;
    Ok(Shots { train, valid })
}

/// Mixes a base seed with cell coordinates into an independent stream seed.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base;
    for &p in parts {
        x = splitmix(x ^ splitmix(p));
    }
    x
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Vec<bool>,
}

impl Dataset {
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset { x: self.x.subset(rows), y: rows.iter().map(|&i| self.y[i]).collect() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task_id: String,
    pub group: TaskGroup,
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CellError {
    #[error(transparent)]
    Shots(#[from] InsufficientShots),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One trained head's output on the test split.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub spec: HeadSpec,
    pub test_scores: Vec<f64>,
    pub metrics: Metrics,
}

/// Sample shots (unless `k` is `None`), tune the head on them and score
/// the full test split.
pub fn evaluate_seed(
    task: &TaskData,
    head: HeadKind,
    grid: &HyperparamGrid,
    k: Option<usize>,
    seed: u64,
) -> Result<SeedOutcome, CellError> {
    let (train, valid) = match k {
        Some(k) => {
            let shots = sample_shots(&task.train.y, &task.valid.y, k, seed)?;
            (task.train.subset(&shots.train), task.valid.subset(&shots.valid))
        }
        None => (task.train.clone(), task.valid.clone()),
    };
    let tuned = tune(head, (&train.x, &train.y), (&valid.x, &valid.y), grid)?;
    let test_scores = tuned.model.predict_all(&task.test.x)?;
    let metrics = Metrics::compute(&test_scores, &task.test.y)?;
    Ok(SeedOutcome { seed, spec: tuned.spec, test_scores, metrics })
}

/// Combine the seeds of one (task, k) cell: mean metrics and bootstrap
/// intervals of the seed-averaged metric over shared test resamples.
pub fn summarize_cell(
    task: &TaskData,
    k: Option<usize>,
    outcomes: Vec<Result<SeedOutcome, CellError>>,
    bootstrap: &BootstrapConfig,
    bootstrap_seed: u64,
) -> CellResult {
    let mut ok = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        match outcome {
            Ok(o) => ok.push(o),
            Err(e) => return CellResult::skipped(&task.task_id, task.group, k, e.to_string()),
        }
    }
    let score_sets: Vec<&[f64]> = ok.iter().map(|o| o.test_scores.as_slice()).collect();
    let ci = |m: Metric| bootstrap_ci_multi(&score_sets, &task.test.y, m, bootstrap, bootstrap_seed);
    let ci = match (ci(Metric::Auroc), ci(Metric::Auprc), ci(Metric::Brier)) {
        (Ok(auroc), Ok(auprc), Ok(brier)) => CiSet { auroc, auprc, brier },
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => {
            return CellResult::skipped(&task.task_id, task.group, k, e.to_string());
        }
    };
    let seeds: Vec<SeedMetrics> = ok.iter().map(|o| SeedMetrics { seed: o.seed, spec: o.spec, metrics: o.metrics }).collect();
    let mean = Metrics::mean(seeds.iter().map(|s| &s.metrics));
    CellResult { task_id: task.task_id.clone(), group: task.group, k, seeds, mean: Some(mean), ci: Some(ci), skip_reason: None }
}

/// Every (k, seed) of one task, sequentially.
pub fn evaluate_task(
    task: &TaskData,
    head: HeadKind,
    grid: &HyperparamGrid,
    fewshot: &FewShotConfig,
    bootstrap: &BootstrapConfig,
    base_seed: u64,
) -> Vec<CellResult> {
    fewshot
        .shots()
        .into_iter()
        .map(|k| {
            let outcomes = (0..fewshot.seeds_for(k))
                .map(|s| evaluate_seed(task, head, grid, k, cell_seed(base_seed, &task.task_id, k, s)))
                .collect();
            summarize_cell(task, k, outcomes, bootstrap, cell_seed(base_seed, &task.task_id, k, usize::MAX))
        })
        .collect()
}

/// Seed for shot sampling of seed index `s` in a (task, k) cell.
pub fn cell_seed(base: u64, task_id: &str, k: Option<usize>, s: usize) -> u64 {
    let task_hash = task_id.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    derive_seed(base, &[task_hash, k.map_or(u64::MAX, |k| k as u64), s as u64])
}
