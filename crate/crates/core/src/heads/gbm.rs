use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_training, log_loss, sigmoid, HeadError, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_trees: usize,
    pub min_samples_leaf: usize,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams { learning_rate: 0.1, max_depth: 3, n_trees: 100, min_samples_leaf: 1 }
    }
}

impl GbmParams {
    fn validate(&self) -> Result<(), HeadError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(HeadError::Hyperparameter(alloc::format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.min_samples_leaf == 0 {
            return Err(HeadError::Hyperparameter("min_samples_leaf must be at least 1".into()));
        }
        Ok(())
    }
}

/// Samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

/// Regression tree stored as a flat node list with the root first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split { feature, threshold, left, right } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub params: GbmParams,
    pub n_features: usize,
    /// Log-odds of the training prevalence.
    pub base_score: f64,
    pub trees: Vec<Tree>,
    /// Training log loss after 0, 1, .. trees.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

impl GbmModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64, HeadError> {
        if x.len() != self.n_features {
            return Err(HeadError::Dimension { expected: self.n_features, got: x.len() });
        }
        Ok(self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, HeadError> {
        self.decision(x).map(sigmoid)
    }

    /// The model made of the first `n` trees, identical to training with
    /// `n_trees = n`.
    pub fn truncated(&self, n: usize) -> GbmModel {
        let n = n.min(self.trees.len());
        GbmModel {
            params: GbmParams { n_trees: n, ..self.params },
            n_features: self.n_features,
            base_score: self.base_score,
            trees: self.trees[..n].to_vec(),
            loss_trace: self.loss_trace.iter().take(n + 1).copied().collect(),
        }
    }
}

/// Per-feature sample order with values, ascending by (value, row).
struct Presorted {
    rows: Vec<Vec<u32>>,
    values: Vec<Vec<f64>>,
}

impl Presorted {
    fn new(x: &Matrix) -> Self {
        let (n, d) = (x.n_rows(), x.n_cols());
        let mut rows = Vec::with_capacity(d);
        let mut values = Vec::with_capacity(d);
        for j in 0..d {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| x.get(a as usize, j).total_cmp(&x.get(b as usize, j)).then(a.cmp(&b)));
            let vals: Vec<f64> = order.iter().map(|&i| x.get(i as usize, j)).collect();
            if vals.first() == vals.last() {
                // constant feature: never splittable
                rows.push(Vec::new());
                values.push(Vec::new());
            } else {
                rows.push(order);
                values.push(vals);
            }
        }
        Presorted { rows, values }
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Midpoint of two consecutive distinct values, or the lower value when the
/// midpoint rounds onto the upper one.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo / 2.0 + hi / 2.0;
    if m >= lo && m < hi {
        m
    } else {
        lo
    }
}

/// Stagewise boosting of least-squares regression trees on the logistic
/// residuals, with one Newton step per leaf.
pub fn gbm_train(x: &Matrix, y: &[bool], params: &GbmParams) -> Result<GbmModel, HeadError> {
    check_training(x, y)?;
    params.validate()?;
    let n = x.n_rows();
    let positives = y.iter().filter(|&&l| l).count() as f64;
    let prevalence = positives / n as f64;
    let base_score = libm::log(prevalence / (1.0 - prevalence));
    let sorted = Presorted::new(x);
    let target: Vec<f64> = y.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();

    let mut raw = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut loss_trace = Vec::with_capacity(params.n_trees + 1);
    let probs = |raw: &[f64]| raw.iter().map(|&z| sigmoid(z)).collect::<Vec<f64>>();
    loss_trace.push(log_loss(&probs(&raw), y));

    for _ in 0..params.n_trees {
        let p = probs(&raw);
        let residual: Vec<f64> = target.iter().zip(&p).map(|(t, p)| t - p).collect();
        let hessian: Vec<f64> = p.iter().map(|p| p * (1.0 - p)).collect();
        let (tree, leaf_of) = grow_tree(x, &sorted, &residual, &hessian, params);
        for (r, leaf) in raw.iter_mut().zip(&leaf_of) {
            if let Node::Leaf { value } = tree.nodes[*leaf] {
                *r += value;
            }
        }
        trees.push(tree);
        loss_trace.push(log_loss(&probs(&raw), y));
    }

    Ok(GbmModel { params: *params, n_features: x.n_cols(), base_score, trees, loss_trace })
}

/// Level-wise exact greedy growth. Returns the tree and each sample's leaf.
fn grow_tree(x: &Matrix, sorted: &Presorted, residual: &[f64], hessian: &[f64], params: &GbmParams) -> (Tree, Vec<usize>) {
    let n = x.n_rows();
    let msl = params.min_samples_leaf;
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let mut node_of = vec![0usize; n];
    // (node, count, residual sum) for the nodes at the current depth
    let mut frontier: Vec<(usize, usize, f64)> = vec![(0, n, residual.iter().sum())];

    for _ in 0..params.max_depth {
        // nodes not split at this depth stay leaves
        let open: Vec<(usize, usize, f64)> = frontier.iter().copied().filter(|&(_, c, _)| c >= 2 * msl).collect();
        if open.is_empty() {
            break;
        }
        let mut slot_of = vec![usize::MAX; nodes.len()];
        for (s, &(node, _, _)) in open.iter().enumerate() {
            slot_of[node] = s;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; open.len()];
        let mut left_count = vec![0usize; open.len()];
        let mut left_sum = vec![0.0f64; open.len()];
        let mut last: Vec<Option<f64>> = vec![None; open.len()];

        for (j, (order, values)) in sorted.rows.iter().zip(&sorted.values).enumerate() {
            if order.is_empty() {
                continue;
            }
            left_count.iter_mut().for_each(|c| *c = 0);
            left_sum.iter_mut().for_each(|s| *s = 0.0);
            last.iter_mut().for_each(|l| *l = None);
            for (&i, &v) in order.iter().zip(values) {
                let i = i as usize;
                let s = slot_of[node_of[i]];
                if s == usize::MAX {
                    continue;
                }
                if let Some(prev) = last[s] {
                    let (_, total_n, total_sum) = open[s];
                    let (nl, nr) = (left_count[s], total_n - left_count[s]);
                    if v > prev && nl >= msl && nr >= msl {
                        let sl = left_sum[s];
                        let sr = total_sum - sl;
                        let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - total_sum * total_sum / total_n as f64;
                        if gain > 1e-12 && best[s].is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Candidate { gain, feature: j, threshold: midpoint(prev, v) });
                        }
                    }
                }
                left_count[s] += 1;
                left_sum[s] += residual[i];
                last[s] = Some(v);
            }
        }

        let mut next = Vec::new();
        let mut children = vec![(usize::MAX, usize::MAX); open.len()];
        for (s, &(node, _, _)) in open.iter().enumerate() {
            if let Some(c) = best[s] {
                let (l, r) = (nodes.len(), nodes.len() + 1);
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                nodes[node] = Node::Split { feature: c.feature, threshold: c.threshold, left: l, right: r };
                children[s] = (l, r);
            }
        }
        let mut child_stats: Vec<(usize, f64)> = vec![(0, 0.0); nodes.len()];
        for i in 0..n {
            let s = slot_of.get(node_of[i]).copied().unwrap_or(usize::MAX);
            if s == usize::MAX || children[s].0 == usize::MAX {
                continue;
            }
            let Node::Split { feature, threshold, left, right } = nodes[node_of[i]] else { unreachable!() };
            let child = if x.get(i, feature) <= threshold { left } else { right };
            node_of[i] = child;
            child_stats[child].0 += 1;
            child_stats[child].1 += residual[i];
        }
        for &(l, r) in children.iter().filter(|c| c.0 != usize::MAX) {
            next.push((l, child_stats[l].0, child_stats[l].1));
            next.push((r, child_stats[r].0, child_stats[r].1));
        }
        frontier = next;
    }

    let mut num = vec![0.0f64; nodes.len()];
    let mut den = vec![0.0f64; nodes.len()];
    for i in 0..n {
        num[node_of[i]] += residual[i];
        den[node_of[i]] += hessian[i];
    }
    for (k, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { value } = node {
            *value = if den[k] < 1e-150 { 0.0 } else { params.learning_rate * num[k] / den[k] };
        }
    }
    (Tree { nodes }, node_of)
}
