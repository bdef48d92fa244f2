//! Gradient boosting with squared-error loss: a constant base prediction
//! plus shrunken regression trees fit stagewise to residuals.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

use super::tree::{grow_tree, TreeModel};
use super::TreeParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    /// Constant initial prediction, the training-target mean.
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeModel>,
    /// Training MSE over the full sample after each stage. With
    /// subsample 1.0 this sequence never increases.
    pub train_mse: Vec<f64>,
}

impl GbmModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut out = vec![self.base; x.rows()];
        for tree in &self.trees {
            for (o, p) in out.iter_mut().zip(tree.predict(x)) {
                *o += self.learning_rate * p;
            }
        }
        out
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        // Same accumulation order as `predict` so the two agree bit for bit.
        let mut out = self.base;
        for tree in &self.trees {
            out += self.learning_rate * tree.predict_row(row);
        }
        out
    }
}

pub fn fit_gbm(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<GbmModel> {
    params.validate()?;
    if x.rows() != y.len() {
        return Err(Error::internal(format!(
            "design matrix has {} rows but target has {}",
            x.rows(),
            y.len()
        )));
    }
    let n = x.rows();
    if n == 0 {
        return Err(Error::data("cannot boost on an empty table"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("boosting target contains non-finite values"));
    }

    let base = y.iter().sum::<f64>() / n as f64;
    let mut current = vec![base; n];
    let mut residual = vec![0.0; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let mut train_mse = Vec::with_capacity(params.n_estimators);
    let mut rng = crate::rng::stream(params.seed, 0x6762_6d31);
    let take = ((params.subsample * n as f64).floor() as usize).clamp(1, n);
    let mut all_rows: Vec<usize> = (0..n).collect();

    for _ in 0..params.n_estimators {
        for i in 0..n {
            residual[i] = y[i] - current[i];
        }
        let rows: Vec<usize> = if take == n {
            all_rows.clone()
        } else {
            all_rows.partial_shuffle(&mut rng, take);
            let mut picked = all_rows[..take].to_vec();
            picked.sort_unstable();
            picked
        };
        let use_rng = params.feature_fraction < 1.0;
        let tree = grow_tree(
            x,
            &residual,
            &rows,
            params.max_depth,
            params.min_samples_leaf,
            params.feature_fraction,
            if use_rng { Some(&mut rng) } else { None },
        );
        for (c, p) in current.iter_mut().zip(tree.predict(x)) {
            *c += params.learning_rate * p;
        }
        trees.push(tree);
        let mse = current
            .iter()
            .zip(y)
            .map(|(c, t)| (c - t).powi(2))
            .sum::<f64>()
            / n as f64;
        train_mse.push(mse);
    }

    Ok(GbmModel { base, learning_rate: params.learning_rate, trees, train_mse })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testdata::friedman;

    fn r2(y: &[f64], pred: &[f64]) -> f64 {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        let ss_res: f64 = y.iter().zip(pred).map(|(t, p)| (t - p).powi(2)).sum();
        let ss_tot: f64 = y.iter().map(|t| (t - mean).powi(2)).sum();
        1.0 - ss_res / ss_tot
    }

    #[test]
    fn first_prediction_starts_from_the_target_mean() {
        let (x, y) = friedman(80, 0.0, 3);
        let model = fit_gbm(&x, &y, &TreeParams { n_estimators: 50, ..Default::default() }).unwrap();
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        assert!((model.base - mean).abs() < 1e-12);
    }

    #[test]
    fn training_mse_is_monotone_without_subsampling() {
        let (x, y) = friedman(300, 1.0, 4);
        let params = TreeParams {
            n_estimators: 200,
            subsample: 1.0,
            learning_rate: 0.1,
            ..Default::default()
        };
        let model = fit_gbm(&x, &y, &params).unwrap();
        assert_eq!(model.train_mse.len(), 200);
        for w in model.train_mse.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-12),
                "training MSE rose from {} to {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn friedman_surface_is_learned_well() {
        let (x, y) = friedman(600, 0.5, 5);
        let params = TreeParams {
            n_estimators: 300,
            max_depth: 3,
            learning_rate: 0.1,
            subsample: 1.0,
            ..Default::default()
        };
        let model = fit_gbm(&x, &y, &params).unwrap();
        let score = r2(&y, &model.predict(&x));
        assert!(score > 0.8, "training r2 {score}");
    }

    #[test]
    fn subsampled_fit_is_deterministic() {
        let (x, y) = friedman(150, 1.0, 6);
        let params = TreeParams { n_estimators: 60, subsample: 0.7, ..Default::default() };
        let a = fit_gbm(&x, &y, &params).unwrap();
        let b = fit_gbm(&x, &y, &params).unwrap();
        assert_eq!(a, b);
        let c = fit_gbm(&x, &y, &TreeParams { seed: 43, ..params }).unwrap();
        assert_ne!(a.predict(&x), c.predict(&x));
    }

    #[test]
    fn predict_row_matches_batch_prediction() {
        let (x, y) = friedman(90, 0.3, 7);
        let model = fit_gbm(&x, &y, &TreeParams { n_estimators: 50, ..Default::default() }).unwrap();
        let batch = model.predict(&x);
        for i in 0..x.rows() {
            assert_eq!(batch[i], model.predict_row(x.row(i)));
        }
    }
}
