use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{Metric, MetricError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    /// Redraws allowed per replicate when a resample lacks a class.
    pub max_redraws: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { replicates: 1000, level: 0.95, max_redraws: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    /// Metric on the full sample.
    pub estimate: f64,
    pub lo: f64,
    pub hi: f64,
    /// Replicates that entered the percentile computation.
    pub replicates: usize,
    /// Replicates abandoned after exhausting their redraws.
    pub dropped: usize,
}

/// Percentile at `q` in [0, 1] of sorted `values`, interpolating linearly
/// between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = libm::ceil(pos) as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn mean_over<S: AsRef<[f64]>>(
    sets: &[S],
    mut metric: impl FnMut(&[f64]) -> Result<f64, MetricError>,
) -> Result<f64, MetricError> {
    let mut total = 0.0;
    for s in sets {
        total += metric(s.as_ref())?;
    }
    Ok(total / sets.len() as f64)
}

/// Percentile bootstrap interval for one score vector.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    metric: Metric,
    config: &BootstrapConfig,
    seed: u64,
) -> Result<Interval, MetricError> {
    bootstrap_ci_multi(&[scores], labels, metric, config, seed)
}

/// Percentile bootstrap of the across-seed mean metric. Every replicate
/// resamples test instances once and scores all seeds on that resample.
pub fn bootstrap_ci_multi<S: AsRef<[f64]>>(
    score_sets: &[S],
    labels: &[bool],
    metric: Metric,
    config: &BootstrapConfig,
    seed: u64,
) -> Result<Interval, MetricError> {
    if score_sets.is_empty() || labels.is_empty() {
        return Err(MetricError::Empty);
    }
    let estimate = mean_over(score_sets, |s| metric.compute(s, labels))?;

    let n = labels.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(config.replicates);
    let mut dropped = 0;
    let mut idx = Vec::with_capacity(n);
    let mut sub_labels = Vec::with_capacity(n);
    let mut sub_scores = Vec::with_capacity(n);
    for _ in 0..config.replicates {
        let mut accepted = false;
        for _ in 0..=config.max_redraws {
            idx.clear();
            idx.extend((0..n).map(|_| rng.gen_range(0..n as u64) as usize));
            sub_labels.clear();
            sub_labels.extend(idx.iter().map(|&i| labels[i]));
            let positives = sub_labels.iter().filter(|&&l| l).count();
            if !metric.needs_both_classes() || (positives > 0 && positives < n) {
                accepted = true;
                break;
            }
        }
        if !accepted {
            dropped += 1;
            continue;
        }
        let v = mean_over(score_sets, |s| {
            sub_scores.clear();
            sub_scores.extend(idx.iter().map(|&i| s[i]));
            metric.compute(&sub_scores, &sub_labels)
        });
        values.push(v?);
    }
    if values.is_empty() {
        return Ok(Interval { estimate, lo: estimate, hi: estimate, replicates: 0, dropped });
    }
    values.sort_by(f64::total_cmp);
    let alpha = (1.0 - config.level) / 2.0;
    Ok(Interval {
        estimate,
        lo: percentile(&values, alpha),
        hi: percentile(&values, 1.0 - alpha),
        replicates: values.len(),
        dropped,
    })
}
