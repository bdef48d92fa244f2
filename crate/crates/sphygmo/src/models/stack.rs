//! Two-base stacked model: boosted trees and a random forest combined by
//! a ridge meta-learner fit on out-of-fold predictions.
//!
//! The meta-learner never sees in-fold predictions: an internal grouped
//! k-fold (k = 5 when enough groups exist) produces the training matrix,
//! then both bases are refit on all rows for deployment.

use serde::{Deserialize, Serialize};

use crate::evaluate::{plan_group_kfold, FoldPlan};
use crate::linalg::{ridge, Matrix};
use crate::{Error, Result};

use super::forest::{fit_random_forest, ForestModel};
use super::gbm::{fit_gbm, GbmModel};
use super::TreeParams;

/// Ridge penalty for the two-column meta regression.
pub(super) const META_RIDGE_PENALTY: f64 = 1.0;
const META_RIDGE_JITTER: f64 = 1e-9;
pub(super) const INTERNAL_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackedModel {
    pub gbm: GbmModel,
    pub forest: ForestModel,
    pub meta_intercept: f64,
    /// Weights for (gbm, forest) base predictions.
    pub meta_coefs: [f64; 2],
    /// Internal folds actually used for the out-of-fold matrix.
    pub folds_used: usize,
}

impl StackedModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let g = self.gbm.predict(x);
        let f = self.forest.predict(x);
        g.iter()
            .zip(&f)
            .map(|(gi, fi)| self.meta_intercept + self.meta_coefs[0] * gi + self.meta_coefs[1] * fi)
            .collect()
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.meta_intercept
            + self.meta_coefs[0] * self.gbm.predict_row(row)
            + self.meta_coefs[1] * self.forest.predict_row(row)
    }
}

/// Out-of-fold base predictions for every row, from models trained with
/// that row's whole group held out.
pub(super) fn oof_base_predictions(
    x: &Matrix,
    y: &[f64],
    groups: &[String],
    gbm_params: &TreeParams,
    forest_params: &TreeParams,
) -> Result<(Vec<f64>, Vec<f64>, FoldPlan)> {
    let n = x.rows();
    if n < 10 {
        return Err(Error::data(format!(
            "stacking needs at least 10 rows for internal cross-fitting, got {n}"
        )));
    }
    if n < 50 {
        log::warn!("stacking on only {n} rows; out-of-fold estimates will be noisy");
    }
    let plan = plan_group_kfold(groups, INTERNAL_FOLDS, crate::rng::mix(gbm_params.seed, 0x0f01))?;
    let row_folds = plan.row_folds(groups)?;

    let mut oof_gbm = vec![f64::NAN; n];
    let mut oof_forest = vec![f64::NAN; n];
    for fold in 0..plan.k {
        let train: Vec<usize> = (0..n).filter(|&i| row_folds[i] != fold).collect();
        let test: Vec<usize> = (0..n).filter(|&i| row_folds[i] == fold).collect();
        debug_assert!(test.iter().all(|&i| row_folds[i] == fold));
        let x_train = x.select_rows(&train);
        let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
        let x_test = x.select_rows(&test);
        let gbm = fit_gbm(&x_train, &y_train, &gbm_params.reseeded(0x5f01 + fold as u64))?;
        let forest =
            fit_random_forest(&x_train, &y_train, &forest_params.reseeded(0x5f02 + fold as u64))?;
        for (slot, pred) in test.iter().zip(gbm.predict(&x_test)) {
            oof_gbm[*slot] = pred;
        }
        for (slot, pred) in test.iter().zip(forest.predict(&x_test)) {
            oof_forest[*slot] = pred;
        }
    }
    debug_assert!(oof_gbm.iter().chain(&oof_forest).all(|v| v.is_finite()));
    Ok((oof_gbm, oof_forest, plan))
}

/// Ridge meta-fit on the two out-of-fold columns.
pub(super) fn fit_meta(oof_gbm: &[f64], oof_forest: &[f64], y: &[f64]) -> Result<(f64, [f64; 2])> {
    let n = y.len();
    let mut flat = Vec::with_capacity(n * 2);
    for i in 0..n {
        flat.push(oof_gbm[i]);
        flat.push(oof_forest[i]);
    }
    let design = Matrix::from_flat(flat, n, 2);
    let (coefs, intercept) = ridge(&design, y, META_RIDGE_PENALTY, META_RIDGE_JITTER)?;
    Ok((intercept, [coefs[0], coefs[1]]))
}

pub fn fit_stacked(
    x: &Matrix,
    y: &[f64],
    groups: &[String],
    gbm_params: &TreeParams,
    forest_params: &TreeParams,
) -> Result<StackedModel> {
    gbm_params.validate()?;
    forest_params.validate()?;
    if x.rows() != y.len() || y.len() != groups.len() {
        return Err(Error::internal(format!(
            "stacking inputs disagree: {} rows, {} targets, {} groups",
            x.rows(),
            y.len(),
            groups.len()
        )));
    }

    let (oof_gbm, oof_forest, plan) =
        oof_base_predictions(x, y, groups, gbm_params, forest_params)?;
    let (meta_intercept, meta_coefs) = fit_meta(&oof_gbm, &oof_forest, y)?;

    // Deployment bases are refit on every row with the caller's seeds, so
    // they match standalone fits of the same parameters.
    let gbm = fit_gbm(x, y, gbm_params)?;
    let forest = fit_random_forest(x, y, forest_params)?;

    Ok(StackedModel { gbm, forest, meta_intercept, meta_coefs, folds_used: plan.k })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::testdata::friedman;

    fn row_groups(n: usize, per_group: usize) -> Vec<String> {
        (0..n).map(|i| format!("g{:04}", i / per_group)).collect()
    }

    fn gbm_params() -> TreeParams {
        TreeParams { n_estimators: 80, learning_rate: 0.1, subsample: 1.0, ..Default::default() }
    }

    fn forest_params() -> TreeParams {
        TreeParams {
            n_estimators: 60,
            max_depth: 8,
            min_samples_leaf: 2,
            feature_fraction: 0.6,
            ..Default::default()
        }
    }

    #[test]
    fn constant_target_yields_the_base_prediction() {
        let (x, _) = friedman(80, 0.0, 31);
        let y = vec![7.25; 80];
        let groups = row_groups(80, 2);
        let model = fit_stacked(&x, &y, &groups, &gbm_params(), &forest_params()).unwrap();
        let preds = model.predict(&x);
        let base = model.gbm.predict(&x);
        for (p, b) in preds.iter().zip(&base) {
            assert!((p - b).abs() < 1e-9, "composite {p} vs base {b}");
            assert!((p - 7.25).abs() < 1e-9);
        }
    }

    #[test]
    fn meta_weight_favours_the_informative_base() {
        // One pseudo-base tracks the target, the other is noise; the ridge
        // meta-learner must load on the informative column.
        let mut rng = crate::rng::stream(32, 0x57ac);
        use rand::Rng;
        let n = 300;
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(80.0..180.0)).collect();
        let informative: Vec<f64> =
            y.iter().map(|t| t + rng.random_range(-2.0..2.0)).collect();
        let noise: Vec<f64> = (0..n).map(|_| rng.random_range(80.0..180.0)).collect();
        let (_, coefs) = fit_meta(&informative, &noise, &y).unwrap();
        assert!(
            coefs[0].abs() > 10.0 * coefs[1].abs(),
            "informative weight {} vs noise weight {}",
            coefs[0],
            coefs[1]
        );
    }

    #[test]
    fn out_of_fold_rows_never_meet_their_own_group_model() {
        // Poison check: make y a per-group constant that a model trained on
        // the group would reproduce exactly; out-of-fold predictions cannot.
        let (x, _) = friedman(100, 0.0, 33);
        let groups = row_groups(100, 5);
        let y: Vec<f64> = groups
            .iter()
            .map(|g| 50.0 + g[1..].parse::<f64>().unwrap() * 7.0)
            .collect();
        let (oof_gbm, _, plan) =
            oof_base_predictions(&x, &y, &groups, &gbm_params(), &forest_params()).unwrap();
        assert_eq!(plan.k, 5);
        let exact_hits = oof_gbm
            .iter()
            .zip(&y)
            .filter(|(p, t)| (*p - *t).abs() < 1e-9)
            .count();
        assert!(
            exact_hits < 10,
            "{exact_hits}/100 out-of-fold predictions match a group-constant \
             target exactly; fold hygiene is suspect"
        );
    }

    #[test]
    fn few_groups_shrink_the_internal_folds() {
        let (x, y) = friedman(60, 0.5, 34);
        let groups = row_groups(60, 20); // 3 groups
        let model = fit_stacked(&x, &y, &groups, &gbm_params(), &forest_params()).unwrap();
        assert_eq!(model.folds_used, 3);
    }

    #[test]
    fn composite_tracks_the_best_base_on_held_out_data() {
        let (x, y) = friedman(500, 1.0, 35);
        let (x_test, y_test) = friedman(300, 1.0, 36);
        let groups = row_groups(500, 2);
        let model = fit_stacked(&x, &y, &groups, &gbm_params(), &forest_params()).unwrap();
        let rmse = |preds: &[f64]| -> f64 {
            (preds.iter().zip(&y_test).map(|(p, t)| (p - t).powi(2)).sum::<f64>()
                / y_test.len() as f64)
                .sqrt()
        };
        let composite = rmse(&model.predict(&x_test));
        let gbm = rmse(&model.gbm.predict(&x_test));
        let forest = rmse(&model.forest.predict(&x_test));
        let best = gbm.min(forest);
        assert!(
            composite <= best * 1.05,
            "composite {composite} vs best base {best} (gbm {gbm}, forest {forest})"
        );
    }

    #[test]
    fn stacking_is_deterministic_and_bases_match_standalone_fits() {
        let (x, y) = friedman(120, 0.8, 37);
        let groups = row_groups(120, 3);
        let a = fit_stacked(&x, &y, &groups, &gbm_params(), &forest_params()).unwrap();
        let b = fit_stacked(&x, &y, &groups, &gbm_params(), &forest_params()).unwrap();
        assert_eq!(a, b);
        let solo_gbm = fit_gbm(&x, &y, &gbm_params()).unwrap();
        assert_eq!(a.gbm, solo_gbm);
        let solo_forest = fit_random_forest(&x, &y, &forest_params()).unwrap();
        assert_eq!(a.forest, solo_forest);
    }

    #[test]
    fn single_group_is_rejected() {
        let (x, y) = friedman(40, 0.5, 38);
        let groups = vec!["only".to_string(); 40];
        assert!(fit_stacked(&x, &y, &groups, &gbm_params(), &forest_params()).is_err());
    }
}
