use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{check_training, gbm_train, lr_train, GbmModel, GbmParams, HeadError, LrModel, Matrix};
use crate::eval::auroc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Lr,
    Gbm,
}

impl HeadKind {
    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Lr => "lr",
            HeadKind::Gbm => "gbm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadSpec {
    Lr { lambda: f64 },
    Gbm(GbmParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperparamGrid {
    pub lr_lambda: Vec<f64>,
    pub gbm: Vec<GbmParams>,
}

impl Default for HyperparamGrid {
    /// Seven log-spaced l2 strengths from 1e-4 to 1e2, and every
    /// combination of learning rate {0.05, 0.1}, depth {3, 6}, trees {100, 300}.
    fn default() -> Self {
        let lr_lambda = (0..7).map(|i| libm::pow(10.0, -4.0 + i as f64)).collect();
        let mut gbm = Vec::new();
        for learning_rate in [0.05, 0.1] {
            for max_depth in [3, 6] {
                for n_trees in [100, 300] {
                    gbm.push(GbmParams { learning_rate, max_depth, n_trees, min_samples_leaf: 1 });
                }
            }
        }
        HyperparamGrid { lr_lambda, gbm }
    }
}

impl HyperparamGrid {
    pub fn specs(&self, kind: HeadKind) -> Vec<HeadSpec> {
        match kind {
            HeadKind::Lr => self.lr_lambda.iter().map(|&lambda| HeadSpec::Lr { lambda }).collect(),
            HeadKind::Gbm => self.gbm.iter().copied().map(HeadSpec::Gbm).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Model {
    Lr(LrModel),
    Gbm(GbmModel),
}

impl Model {
    pub fn predict(&self, x: &[f64]) -> Result<f64, HeadError> {
        match self {
            Model::Lr(m) => m.predict(x),
            Model::Gbm(m) => m.predict(x),
        }
    }

    pub fn predict_all(&self, x: &Matrix) -> Result<Vec<f64>, HeadError> {
        x.rows().map(|r| self.predict(r)).collect()
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format_version: u32,
    pub model: Model,
}

impl SavedModel {
    pub fn new(model: Model) -> Self {
        SavedModel { format_version: MODEL_FORMAT_VERSION, model }
    }

    pub fn into_model(self) -> Result<Model, HeadError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(HeadError::Version(self.format_version));
        }
        Ok(self.model)
    }
}

pub fn fit(spec: &HeadSpec, x: &Matrix, y: &[bool]) -> Result<Model, HeadError> {
    match spec {
        HeadSpec::Lr { lambda } => lr_train(x, y, *lambda).map(Model::Lr),
        HeadSpec::Gbm(p) => gbm_train(x, y, p).map(Model::Gbm),
    }
}

/// Index of the highest score; the earliest wins ties.
pub fn select_best(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuned {
    pub model: Model,
    pub spec: HeadSpec,
    pub valid_auroc: f64,
    /// Validation AUROC of every grid point, in grid order.
    pub scores: Vec<f64>,
}

/// Fit every grid point on `train` and keep the one with the best
/// validation AUROC. Boosted models that differ only in tree count share a
/// single fit, since a shorter model is a prefix of a longer one.
pub fn tune(
    kind: HeadKind,
    train: (&Matrix, &[bool]),
    valid: (&Matrix, &[bool]),
    grid: &HyperparamGrid,
) -> Result<Tuned, HeadError> {
    check_training(valid.0, valid.1)?;
    check_training(train.0, train.1)?;
    let specs = grid.specs(kind);
    if specs.is_empty() {
        return Err(HeadError::EmptyGrid);
    }
    let mut longest_fits: Vec<GbmModel> = Vec::new();
    let mut models: Vec<Model> = Vec::with_capacity(specs.len());
    for spec in &specs {
        let model = match spec {
            HeadSpec::Gbm(p) => {
                let cached = longest_fits.iter().position(|g| same_trees(&g.params, p));
                let full = match cached {
                    Some(i) => &longest_fits[i],
                    None => {
                        let longest = specs
                            .iter()
                            .filter_map(|s| match s {
                                HeadSpec::Gbm(q) if same_trees(p, q) => Some(q.n_trees),
                                _ => None,
                            })
                            .max()
                            .unwrap_or(p.n_trees);
                        longest_fits.push(gbm_train(train.0, train.1, &GbmParams { n_trees: longest, ..*p })?);
                        longest_fits.last().expect("just pushed")
                    }
                };
                Model::Gbm(full.truncated(p.n_trees))
            }
            lr => fit(lr, train.0, train.1)?,
        };
        models.push(model);
    }

    let mut scores = Vec::with_capacity(models.len());
    for m in &models {
        let preds = m.predict_all(valid.0)?;
        scores.push(auroc(&preds, valid.1).map_err(|_| HeadError::NonFinite)?);
    }
    let best = select_best(&scores).ok_or(HeadError::EmptyGrid)?;
    Ok(Tuned { model: models.swap_remove(best), spec: specs[best], valid_auroc: scores[best], scores })
}

fn same_trees(a: &GbmParams, b: &GbmParams) -> bool {
    a.learning_rate == b.learning_rate && a.max_depth == b.max_depth && a.min_samples_leaf == b.min_samples_leaf
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, flip: usize) -> (Matrix, Vec<bool>) {
        let mut x = Matrix::new(1);
        let mut y = Vec::new();
        for i in 0..n {
            x.push_row(&[i as f64]).unwrap();
            y.push((i >= n / 2) ^ (i % flip == 0));
        }
        (x, y)
    }

    #[test]
    fn default_grids() {
        let g = HyperparamGrid::default();
        assert_eq!(g.lr_lambda.len(), 7);
        assert!((g.lr_lambda[0] - 1e-4).abs() < 1e-18 && (g.lr_lambda[6] - 100.0).abs() < 1e-12);
        assert_eq!(g.gbm.len(), 8);
    }

    #[test]
    fn one_point_grid_equals_direct_fit() {
        let (x, y) = line(40, 7);
        let (vx, vy) = line(20, 5);
        let grid = HyperparamGrid { lr_lambda: alloc::vec![0.5], gbm: alloc::vec![] };
        let t = tune(HeadKind::Lr, (&x, &y), (&vx, &vy), &grid).unwrap();
        assert_eq!(t.model, Model::Lr(lr_train(&x, &y, 0.5).unwrap()));
    }

    #[test]
    fn shared_gbm_fits_match_direct_fits() {
        let (x, y) = line(40, 7);
        let (vx, vy) = line(20, 3);
        let p = GbmParams { learning_rate: 0.1, max_depth: 2, n_trees: 5, min_samples_leaf: 1 };
        let grid = HyperparamGrid { lr_lambda: alloc::vec![], gbm: alloc::vec![GbmParams { n_trees: 20, ..p }, p] };
        let t = tune(HeadKind::Gbm, (&x, &y), (&vx, &vy), &grid).unwrap();
        let direct: Vec<f64> = grid
            .gbm
            .iter()
            .map(|q| auroc(&Model::Gbm(gbm_train(&x, &y, q).unwrap()).predict_all(&vx).unwrap(), &vy).unwrap())
            .collect();
        assert_eq!(t.scores, direct);
    }

    #[test]
    fn ties_go_to_the_first_grid_point() {
        assert_eq!(select_best(&[0.5, 0.7, 0.7]), Some(1));
        assert_eq!(select_best(&[]), None);
    }

    #[test]
    fn single_class_validation_is_an_error() {
        let (x, y) = line(10, 100);
        let vx = Matrix::from_rows(&[[1.0], [2.0]]).unwrap();
        assert!(matches!(
            tune(HeadKind::Lr, (&x, &y), (&vx, &[true, true]), &HyperparamGrid::default()),
            Err(HeadError::SingleClass { .. })
        ));
    }

    #[test]
    fn saved_models_carry_a_version() {
        let (x, y) = line(10, 100);
        let m = fit(&HeadSpec::Lr { lambda: 1.0 }, &x, &y).unwrap();
        assert!(SavedModel::new(m.clone()).into_model().is_ok());
        assert_eq!(SavedModel { format_version: 9, model: m }.into_model(), Err(HeadError::Version(9)));
    }
}
