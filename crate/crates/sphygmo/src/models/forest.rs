//! Random forest: bootstrap-resampled variance-reduction trees with
//! per-split feature subsampling, averaged at prediction time.
//!
//! Trees are fit in parallel; each draws its RNG from the master seed and
//! its own index, so the model is identical at any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

use super::tree::{grow_tree, TreeModel};
use super::TreeParams;

const FOREST_SALT: u64 = 0x666f_7265;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
}

impl ForestModel {
    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        let mut out = vec![0.0; x.rows()];
        for tree in &self.trees {
            for (o, p) in out.iter_mut().zip(tree.predict(x)) {
                *o += p;
            }
        }
        let k = self.trees.len() as f64;
        for o in &mut out {
            *o /= k;
        }
        out
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut out = 0.0;
        for tree in &self.trees {
            out += tree.predict_row(row);
        }
        out / self.trees.len() as f64
    }
}

/// Fitting core; `bootstrap: false` is a test hook that trains every tree
/// on the full row set so a one-tree forest reproduces a plain tree fit.
pub(super) fn fit_forest_inner(
    x: &Matrix,
    y: &[f64],
    params: &TreeParams,
    bootstrap: bool,
) -> Result<ForestModel> {
    if x.rows() != y.len() {
        return Err(Error::internal(format!(
            "design matrix has {} rows but target has {}",
            x.rows(),
            y.len()
        )));
    }
    let n = x.rows();
    if n == 0 {
        return Err(Error::data("cannot fit a forest on an empty table"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("forest target contains non-finite values"));
    }

    let trees: Vec<TreeModel> = (0..params.n_estimators)
        .into_par_iter()
        .map(|t| {
            let mut rng =
                crate::rng::stream(crate::rng::mix(params.seed, FOREST_SALT), t as u64);
            let rows: Vec<usize> = if bootstrap {
                use rand::Rng;
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let use_rng = params.feature_fraction < 1.0;
            grow_tree(
                x,
                y,
                &rows,
                params.max_depth,
                params.min_samples_leaf,
                params.feature_fraction,
                if use_rng { Some(&mut rng) } else { None },
            )
        })
        .collect();

    Ok(ForestModel { trees })
}

pub fn fit_random_forest(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<ForestModel> {
    params.validate()?;
    fit_forest_inner(x, y, params, true)
}
