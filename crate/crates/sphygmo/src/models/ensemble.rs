//! The deployable predictor: per-target blended ensembles with linear
//! quantile heads for 80% prediction intervals and width-based risk
//! tiers, behind shared robust preprocessing.
//!
//! Both targets share the feature schema and scaler but train fully
//! independent learners; neither ever reads the other's column.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::CohortTable;
use crate::linalg::Matrix;
use crate::{Error, Result};

use super::blend::blend_alpha;
use super::forest::fit_random_forest;
use super::gbm::{fit_gbm, GbmModel};
use super::quantile::{fit_quantile, QuantileModel};
use super::stack::{fit_meta, oof_base_predictions, StackedModel};
use super::TreeParams;

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Columns with variance below this are dropped before scaling.
const VARIANCE_FLOOR: f64 = 1e-10;
/// IQR floor so constant-ish columns cannot explode the scale.
const SCALE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskTier {
    Low,
    Medium,
    High,
}

impl RiskTier {
    pub fn as_str(&self) -> &'static str {
        match self {
            RiskTier::Low => "low",
            RiskTier::Medium => "medium",
            RiskTier::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub gbm: TreeParams,
    pub forest: TreeParams,
    /// (lower, upper) interval quantile levels.
    pub quantile_taus: (f64, f64),
    pub quantile_l1_penalty: f64,
    /// Master seed; per-target, per-role seeds derive from it, replacing
    /// whatever seeds the tree parameter blocks carry.
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            gbm: TreeParams::default(),
            forest: TreeParams {
                max_depth: 8,
                min_samples_leaf: 2,
                n_estimators: 120,
                subsample: 1.0,
                feature_fraction: 0.6,
                ..Default::default()
            },
            quantile_taus: (0.1, 0.9),
            quantile_l1_penalty: 0.1,
            seed: 42,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.gbm.validate()?;
        self.forest.validate()?;
        let (lo, hi) = self.quantile_taus;
        if !(lo > 0.0 && lo < 1.0 && hi > 0.0 && hi < 1.0 && lo < hi) {
            return Err(Error::config(format!(
                "quantile taus must satisfy 0 < lower < upper < 1, got ({lo}, {hi})"
            )));
        }
        if !(self.quantile_l1_penalty >= 0.0 && self.quantile_l1_penalty.is_finite()) {
            return Err(Error::config("quantile l1 penalty must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Variance filter plus robust scaling, fit on training data and frozen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    /// Indices into the incoming feature columns that survived filtering.
    pub kept: Vec<usize>,
    pub kept_names: Vec<String>,
    pub dropped_low_variance: Vec<String>,
    /// Per kept column: median center and IQR scale (floored).
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Preprocess {
    pub fn fit(x: &Matrix, names: &[String]) -> Result<Preprocess> {
        let mut kept = Vec::new();
        let mut kept_names = Vec::new();
        let mut dropped = Vec::new();
        let mut centers = Vec::new();
        let mut scales = Vec::new();
        for j in 0..x.cols() {
            let col = x.column(j);
            if crate::stats::variance_population(&col) < VARIANCE_FLOOR {
                dropped.push(names[j].clone());
                continue;
            }
            kept.push(j);
            kept_names.push(names[j].clone());
            centers.push(crate::stats::median(&col));
            scales.push(crate::stats::iqr(&col).max(SCALE_FLOOR));
        }
        if kept.is_empty() {
            return Err(Error::data(
                "every feature column is (near-)constant; nothing to train on",
            ));
        }
        Ok(Preprocess { kept, kept_names, dropped_low_variance: dropped, centers, scales })
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let n = x.rows();
        let d = self.kept.len();
        let mut out = Matrix::zeros(n, d);
        for i in 0..n {
            let row = x.row(i);
            for (jj, &j) in self.kept.iter().enumerate() {
                out.set(i, jj, (row[j] - self.centers[jj]) / self.scales[jj]);
            }
        }
        out
    }
}

/// All learned state for one blood-pressure target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEnsemble {
    pub primary: GbmModel,
    pub stacked: StackedModel,
    /// Blend weight on the primary model.
    pub alpha: f64,
    pub blend_degenerate: bool,
    pub blend_grid: Vec<(f64, f64)>,
    pub lower: QuantileModel,
    pub upper: QuantileModel,
    /// Risk-tier width cutoffs frozen from the training interval widths.
    pub width_p33: f64,
    pub width_p66: f64,
    /// Out-of-fold RMSE diagnostics from the internal cross-fit.
    pub oof_rmse_primary: f64,
    pub oof_rmse_stacked: f64,
    pub oof_rmse_blended: f64,
}

impl TargetEnsemble {
    fn point(&self, z: &Matrix) -> Vec<f64> {
        let p = self.primary.predict(z);
        let s = self.stacked.predict(z);
        p.iter()
            .zip(&s)
            .map(|(pi, si)| self.alpha * pi + (1.0 - self.alpha) * si)
            .collect()
    }

    fn tier(&self, width: f64) -> RiskTier {
        if width <= self.width_p33 {
            RiskTier::Low
        } else if width <= self.width_p66 {
            RiskTier::Medium
        } else {
            RiskTier::High
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedEnsemble {
    pub format_version: u32,
    /// Exact, ordered feature schema the model scores against.
    pub feature_names: Vec<String>,
    /// SHA-256 of the newline-joined feature names.
    pub schema_hash: String,
    pub preprocess: Preprocess,
    pub config: EnsembleConfig,
    pub n_training_rows: usize,
    pub sbp: TargetEnsemble,
    pub dbp: TargetEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub interval_width: f64,
    pub risk_tier: RiskTier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub sbp: Vec<Prediction>,
    pub dbp: Vec<Prediction>,
    /// Rows whose raw quantile heads crossed and were swapped back.
    pub swaps_repaired: usize,
}

pub fn schema_hash(names: &[String]) -> String {
    let mut hasher = Sha256::new();
    for (i, n) in names.iter().enumerate() {
        if i > 0 {
            hasher.update(b"\n");
        }
        hasher.update(n.as_bytes());
    }
    format!("{:x}", hasher.finalize())
}

fn rmse(pred: &[f64], truth: &[f64]) -> f64 {
    (pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / truth.len() as f64)
        .sqrt()
}

fn fit_target(
    z: &Matrix,
    y: &[f64],
    groups: &[String],
    cfg: &EnsembleConfig,
    target_salt: u64,
) -> Result<TargetEnsemble> {
    let gbm_params = TreeParams {
        seed: crate::rng::mix(cfg.seed, target_salt),
        ..cfg.gbm.clone()
    };
    let forest_params = TreeParams {
        seed: crate::rng::mix(cfg.seed, target_salt ^ 0xf0f0),
        ..cfg.forest.clone()
    };

    let (oof_gbm, oof_forest, plan) =
        oof_base_predictions(z, y, groups, &gbm_params, &forest_params)?;
    let (meta_intercept, meta_coefs) = fit_meta(&oof_gbm, &oof_forest, y)?;
    let oof_stacked: Vec<f64> = oof_gbm
        .iter()
        .zip(&oof_forest)
        .map(|(g, f)| meta_intercept + meta_coefs[0] * g + meta_coefs[1] * f)
        .collect();

    let blend = blend_alpha(y, &oof_gbm, &oof_stacked)?;
    let oof_blended: Vec<f64> = oof_gbm
        .iter()
        .zip(&oof_stacked)
        .map(|(p, s)| blend.alpha * p + (1.0 - blend.alpha) * s)
        .collect();

    // Deployment refits on every row.
    let primary = fit_gbm(z, y, &gbm_params)?;
    let forest = fit_random_forest(z, y, &forest_params)?;
    let stacked = StackedModel {
        gbm: primary.clone(),
        forest,
        meta_intercept,
        meta_coefs,
        folds_used: plan.k,
    };

    let (tau_lo, tau_hi) = cfg.quantile_taus;
    let lower = fit_quantile(z, y, tau_lo, cfg.quantile_l1_penalty)?;
    let upper = fit_quantile(z, y, tau_hi, cfg.quantile_l1_penalty)?;

    // Freeze tier cutoffs from the training widths (after crossing repair).
    let lo_pred = lower.predict(z);
    let up_pred = upper.predict(z);
    let widths: Vec<f64> =
        lo_pred.iter().zip(&up_pred).map(|(l, u)| (u - l).abs()).collect();
    let width_p33 = crate::stats::quantile_linear(&widths, 1.0 / 3.0);
    let width_p66 = crate::stats::quantile_linear(&widths, 2.0 / 3.0);

    Ok(TargetEnsemble {
        primary,
        stacked,
        alpha: blend.alpha,
        blend_degenerate: blend.degenerate,
        blend_grid: blend.grid,
        lower,
        upper,
        width_p33,
        width_p66,
        oof_rmse_primary: rmse(&oof_gbm, y),
        oof_rmse_stacked: rmse(&oof_stacked, y),
        oof_rmse_blended: rmse(&oof_blended, y),
    })
}

pub fn fit_ensemble(table: &CohortTable, cfg: &EnsembleConfig) -> Result<FittedEnsemble> {
    cfg.validate()?;
    let x = table.feature_matrix()?;
    let names: Vec<String> = table.schema().iter().map(|c| c.name.clone()).collect();
    if let Some(msg) = table.sample_size_warning() {
        log::warn!("{msg}");
    }

    let preprocess = Preprocess::fit(&x, &names)?;
    let z = preprocess.transform(&x);
    let groups = table.group_ids();

    let sbp = fit_target(&z, &table.target_column(0), groups, cfg, 0x5bb0)?;
    let dbp = fit_target(&z, &table.target_column(1), groups, cfg, 0xdbb0)?;

    Ok(FittedEnsemble {
        format_version: MODEL_FORMAT_VERSION,
        schema_hash: schema_hash(&names),
        feature_names: names,
        preprocess,
        config: cfg.clone(),
        n_training_rows: table.n_rows(),
        sbp,
        dbp,
    })
}

impl FittedEnsemble {
    /// Fails unless the cohort's feature schema matches the training
    /// schema exactly (same names, same order).
    fn check_schema(&self, table: &CohortTable) -> Result<()> {
        let names: Vec<String> = table.schema().iter().map(|c| c.name.clone()).collect();
        if names != self.feature_names {
            let incoming = schema_hash(&names);
            return Err(Error::data(format!(
                "cohort schema hash {} does not match the model's {} \
                 ({} vs {} columns); align the cohort to the training schema first",
                &incoming[..12.min(incoming.len())],
                &self.schema_hash[..12.min(self.schema_hash.len())],
                names.len(),
                self.feature_names.len()
            )));
        }
        Ok(())
    }

    pub fn predict(&self, table: &CohortTable) -> Result<PredictionSet> {
        self.check_schema(table)?;
        let x = table.feature_matrix()?;
        let z = self.preprocess.transform(&x);
        let mut swaps = 0usize;
        let mut per_target = |side: &TargetEnsemble| -> Vec<Prediction> {
            let point = side.point(&z);
            let lo = side.lower.predict(&z);
            let up = side.upper.predict(&z);
            point
                .iter()
                .zip(lo.iter().zip(&up))
                .map(|(&p, (&l, &u))| {
                    let (l, u) = if l > u {
                        swaps += 1;
                        (u, l)
                    } else {
                        (l, u)
                    };
                    let width = u - l;
                    Prediction {
                        point: p,
                        lower: l,
                        upper: u,
                        interval_width: width,
                        risk_tier: side.tier(width),
                    }
                })
                .collect()
        };
        let sbp = per_target(&self.sbp);
        let dbp = per_target(&self.dbp);
        Ok(PredictionSet { sbp, dbp, swaps_repaired: swaps })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::internal(format!("model serialisation failed: {e}")))?;
        std::fs::write(path, body).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<FittedEnsemble> {
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model: FittedEnsemble = serde_json::from_str(&body)
            .map_err(|e| Error::data(format!("unreadable model file {}: {e}", path.display())))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::data(format!(
                "model file {} has format version {}, this build reads {}",
                path.display(),
                model.format_version,
                MODEL_FORMAT_VERSION
            )));
        }
        let expected = schema_hash(&model.feature_names);
        if expected != model.schema_hash {
            return Err(Error::data(format!(
                "model file {} is corrupt: stored schema hash does not match its columns",
                path.display()
            )));
        }
        Ok(model)
    }
}

/// Point predictions with 80% intervals and risk tiers for both targets.
pub fn predict_with_intervals(
    model: &FittedEnsemble,
    table: &CohortTable,
) -> Result<PredictionSet> {
    model.predict(table)
}

/// Stratum-keyed ensembles for subgroups large enough to support one.
pub(super) fn counts_by_stratum(table: &CohortTable) -> Result<BTreeMap<String, usize>> {
    let mut counts = BTreeMap::new();
    for t in table.targets() {
        let s = crate::cohort::stratum_of(t[0])?;
        *counts.entry(s.as_str().to_string()).or_insert(0usize) += 1;
    }
    Ok(counts)
}
