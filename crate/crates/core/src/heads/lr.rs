use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_training, sigmoid, softplus, HeadError, Matrix};

/// Per-column centering and scaling learned from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Population standard deviation; constant columns get scale 1.
    pub fn fit(x: &Matrix) -> Self {
        let (n, d) = (x.n_rows(), x.n_cols());
        let mut mean = vec![0.0; d];
        for row in x.rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        let nf = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![0.0; d];
        for row in x.rows() {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let sd = libm::sqrt(s / nf);
                if sd <= 1e-12 * m.abs().max(1.0) {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::new(x.n_cols());
        let mut buf = vec![0.0; x.n_cols()];
        for row in x.rows() {
            self.transform_row(row, &mut buf);
            out.push_row(&buf).expect("standardized row has matching width");
        }
        out
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (((o, v), m), s) in out.iter_mut().zip(row).zip(&self.mean).zip(&self.scale) {
            *o = (v - m) / s;
        }
    }
}

/// Mean logistic loss plus `lambda / 2 * |w|^2` over parameters laid out
/// as `[w_0, .., w_{d-1}, bias]`. The bias is not penalized.
#[derive(Debug, Clone, Copy)]
pub struct LogisticObjective<'a> {
    pub x: &'a Matrix,
    pub y: &'a [bool],
    pub lambda: f64,
}

impl LogisticObjective<'_> {
    pub fn value(&self, params: &[f64]) -> f64 {
        let d = self.x.n_cols();
        let (w, b) = (&params[..d], params[d]);
        let n = self.x.n_rows() as f64;
        let data: f64 = self.x.rows().zip(self.y).map(|(row, &y)| {
            let z = dot(w, row) + b;
            softplus(z) - if y { z } else { 0.0 }
        }).sum();
        data / n + 0.5 * self.lambda * dot(w, w)
    }

    pub fn value_grad(&self, params: &[f64]) -> (f64, Vec<f64>) {
        let d = self.x.n_cols();
        let (w, b) = (&params[..d], params[d]);
        let n = self.x.n_rows() as f64;
        let mut grad = vec![0.0; d + 1];
        let mut loss = 0.0;
        for (row, &y) in self.x.rows().zip(self.y) {
            let z = dot(w, row) + b;
            let t = if y { 1.0 } else { 0.0 };
            loss += softplus(z) - t * z;
            let r = sigmoid(z) - t;
            for (g, v) in grad[..d].iter_mut().zip(row) {
                *g += r * v;
            }
            grad[d] += r;
        }
        for (g, wi) in grad[..d].iter_mut().zip(w) {
            *g = *g / n + self.lambda * wi;
        }
        grad[d] /= n;
        (loss / n + 0.5 * self.lambda * dot(w, w), grad)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Number of curvature pairs kept by the quasi-Newton direction.
    pub memory: usize,
}

impl Default for LrOptions {
    fn default() -> Self {
        LrOptions { max_iter: 10_000, grad_tol: 1e-6, memory: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub standardizer: Standardizer,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step, starting at the zero point.
    #[serde(skip)]
    pub loss_trace: Vec<f64>,
}

impl LrModel {
    pub fn decision(&self, x: &[f64]) -> Result<f64, HeadError> {
        if x.len() != self.weights.len() {
            return Err(HeadError::Dimension { expected: self.weights.len(), got: x.len() });
        }
        let z: f64 = x
            .iter()
            .zip(&self.weights)
            .zip(self.standardizer.mean.iter().zip(&self.standardizer.scale))
            .map(|((v, w), (m, s))| w * (v - m) / s)
            .sum();
        Ok(z + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, HeadError> {
        self.decision(x).map(sigmoid)
    }
}

pub fn lr_train(x: &Matrix, y: &[bool], lambda: f64) -> Result<LrModel, HeadError> {
    lr_train_with(x, y, lambda, &LrOptions::default())
}

/// Minimizes [`LogisticObjective`] on standardized features from zero with
/// limited-memory quasi-Newton steps under an Armijo backtracking line
/// search, so the objective never increases between iterations.
pub fn lr_train_with(x: &Matrix, y: &[bool], lambda: f64, opts: &LrOptions) -> Result<LrModel, HeadError> {
    check_training(x, y)?;
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(HeadError::Hyperparameter(alloc::format!("l2 strength must be positive, got {lambda}")));
    }
    let standardizer = Standardizer::fit(x);
    let xs = standardizer.transform(x);
    let obj = LogisticObjective { x: &xs, y, lambda };
    let d = x.n_cols();

    let mut params = vec![0.0; d + 1];
    let (mut f, mut g) = obj.value_grad(&params);
    let mut trace = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iter {
        if libm::sqrt(dot(&g, &g)) <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = two_loop(&g, &pairs);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let mut step = if pairs.is_empty() { 1.0 / libm::sqrt(dot(&g, &g)).max(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
            let (ft, gt) = obj.value_grad(&trial);
            if ft.is_finite() && ft <= f + 1e-4 * step * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, ft, gt)) = accepted else {
            if pairs.is_empty() {
                // no descent possible at floating point resolution
                break;
            }
            pairs.clear();
            continue;
        };
        let s: Vec<f64> = trial.iter().zip(&params).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = gt.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * libm::sqrt(dot(&s, &s) * dot(&yv, &yv)) {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        params = trial;
        f = ft;
        g = gt;
        trace.push(f);
    }

    let bias = params[d];
    params.truncate(d);
    Ok(LrModel { weights: params, bias, l2: lambda, standardizer, iterations, converged, loss_trace: trace })
}

fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
