use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("metric undefined: sample has {positives} positives and {negatives} negatives")]
    SingleClass { positives: usize, negatives: usize },
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    Length { scores: usize, labels: usize },
    #[error("scores must be finite")]
    NonFinite,
    #[error("empty sample")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Auroc,
    Auprc,
    Brier,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Auroc, Metric::Auprc, Metric::Brier];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auroc => "auroc",
            Metric::Auprc => "auprc",
            Metric::Brier => "brier",
        }
    }

    pub fn compute(self, scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
        match self {
            Metric::Auroc => auroc(scores, labels),
            Metric::Auprc => auprc(scores, labels),
            Metric::Brier => brier(scores, labels),
        }
    }

    /// Whether the metric needs both classes to be defined.
    pub fn needs_both_classes(self) -> bool {
        !matches!(self, Metric::Brier)
    }
}

fn check(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length { scores: scores.len(), labels: labels.len() });
    }
    if scores.is_empty() {
        return Err(MetricError::Empty);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite);
    }
    let positives = labels.iter().filter(|&&l| l).count();
    Ok((positives, labels.len() - positives))
}

/// Runs of equal scores in ascending order: (positives, negatives) per run.
fn tie_groups(scores: &[f64], labels: &[bool]) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    let mut groups: Vec<(usize, usize)> = Vec::new();
    let mut prev: Option<f64> = None;
    for i in order {
        if prev != Some(scores[i]) {
            groups.push((0, 0));
            prev = Some(scores[i]);
        }
        let g = groups.last_mut().expect("group pushed above");
        if labels[i] {
            g.0 += 1;
        } else {
            g.1 += 1;
        }
    }
    groups
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (positives, negatives) = check(scores, labels)?;
    if positives == 0 || negatives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    let mut negatives_below = 0.0;
    let mut wins = 0.0;
    for (p, n) in tie_groups(scores, labels) {
        wins += p as f64 * (negatives_below + 0.5 * n as f64);
        negatives_below += n as f64;
    }
    Ok(wins / (positives as f64 * negatives as f64))
}

/// Average precision, treating each run of equal scores as one threshold.
pub fn auprc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    let (positives, negatives) = check(scores, labels)?;
    if positives == 0 {
        return Err(MetricError::SingleClass { positives, negatives });
    }
    let (mut tp, mut fp, mut ap) = (0.0, 0.0, 0.0);
    for (p, n) in tie_groups(scores, labels).into_iter().rev() {
        tp += p as f64;
        fp += n as f64;
        if p > 0 {
            ap += tp / (tp + fp) * p as f64;
        }
    }
    Ok(ap / positives as f64)
}

pub fn brier(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    check(scores, labels)?;
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &l)| {
            let d = s - if l { 1.0 } else { 0.0 };
            d * d
        })
        .sum();
    Ok(total / scores.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.4; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.9], &[true, false]).unwrap(), 0.0);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(MetricError::SingleClass { .. })));
        assert_eq!(auroc(&[f64::NAN, 0.2], &[true, false]), Err(MetricError::NonFinite));
    }

    #[test]
    fn auprc_examples() {
        assert_eq!(auprc(&[0.9, 0.8, 0.3, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        let labels = [true, false, false, false, true];
        assert!((auprc(&[0.5; 5], &labels).unwrap() - 0.4).abs() < 1e-15);
        // ranks: + - + -> precision 1 at first, 2/3 at third
        assert!((auprc(&[0.9, 0.5, 0.1], &[true, false, true]).unwrap() - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn brier_examples() {
        assert_eq!(brier(&[1.0, 0.0], &[true, false]).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 4], &[true, false, false, true]).unwrap(), 0.25);
        // (0.8-1)^2 + (0.3-0)^2 + (0.6-0)^2 = 0.04 + 0.09 + 0.36
        assert!((brier(&[0.8, 0.3, 0.6], &[true, false, false]).unwrap() - 0.49 / 3.0).abs() < 1e-15);
    }
}
