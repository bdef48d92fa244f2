//! Stage 3 and 4 learners: trees, boosting, bagging, stacking, the
//! primary/stacked blend, and linear quantile heads for the prediction
//! intervals, plus hyperparameter search over the tree space.
//!
//! Everything trains from an explicit seed and reproduces bit-identical
//! models at any thread count: parallel parts derive one RNG per task
//! from the master seed, and reductions happen in fixed order.

mod blend;
mod forest;
mod gbm;
mod quantile;
mod tree;

pub use blend::{blend_alpha, blend_grid, BlendChoice, DEGENERATE_BLEND_ALPHA};
pub use forest::{fit_random_forest, ForestModel};
pub use gbm::{fit_gbm, GbmModel};
pub use quantile::{fit_quantile, pinball_loss, QuantileModel};
pub use tree::{fit_tree, TreeModel};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub n_estimators: usize,
    /// Boosting shrinkage; ignored by the forest.
    pub learning_rate: f64,
    /// Row fraction per boosting stage (without replacement).
    pub subsample: f64,
    /// Feature fraction considered per split (forest-style).
    pub feature_fraction: f64,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 3,
            min_samples_leaf: 5,
            n_estimators: 150,
            learning_rate: 0.05,
            subsample: 0.8,
            feature_fraction: 1.0,
            seed: 42,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if !(3..=10).contains(&self.max_depth) {
            return Err(Error::config(format!(
                "max_depth must lie in [3, 10], got {}",
                self.max_depth
            )));
        }
        if self.min_samples_leaf == 0 {
            return Err(Error::config("min_samples_leaf must be at least 1"));
        }
        if !(50..=500).contains(&self.n_estimators) {
            return Err(Error::config(format!(
                "n_estimators must lie in [50, 500], got {}",
                self.n_estimators
            )));
        }
        if !(0.001..=0.2).contains(&self.learning_rate) {
            return Err(Error::config(format!(
                "learning_rate must lie in [0.001, 0.2], got {}",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::config(format!(
                "subsample must lie in (0, 1], got {}",
                self.subsample
            )));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(Error::config(format!(
                "feature_fraction must lie in (0, 1], got {}",
                self.feature_fraction
            )));
        }
        Ok(())
    }

    /// Same parameters with a derived seed, for per-fold or per-stratum
    /// refits that must not share RNG streams with the parent fit.
    pub fn reseeded(&self, salt: u64) -> TreeParams {
        TreeParams { seed: crate::rng::mix(self.seed, salt), ..self.clone() }
    }
}
