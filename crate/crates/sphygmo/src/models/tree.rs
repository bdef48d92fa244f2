//! Regression tree grown by exhaustive variance-reduction splits.
//!
//! Every split scans all candidate thresholds (midpoints between adjacent
//! distinct values) for every candidate feature, so a fit is deterministic
//! given the row set and the candidate feature order. Randomness only
//! enters through per-split feature subsampling, which the forest drives
//! with its own seeded stream.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::{Error, Result};

use super::TreeParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf { value: f64 },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    /// Root at index 0; children always come after their parent.
    nodes: Vec<Node>,
}

impl TreeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        (0..x.rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], idx: usize) -> usize {
            match &nodes[idx] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: &'a Matrix,
    y: &'a [f64],
    max_depth: usize,
    min_samples_leaf: usize,
    feature_fraction: f64,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    /// Sum of within-child squared deviations; lower is better.
    cost: f64,
}

impl<'a> Builder<'a> {
    /// Returns the index of the node created for `rows`.
    fn build(&mut self, rows: &[usize], depth: usize, rng: &mut Option<&mut ChaCha8Rng>) -> usize {
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64;
        let spread = rows.iter().map(|&i| (self.y[i] - mean).powi(2)).sum::<f64>();
        if depth >= self.max_depth || rows.len() < 2 * self.min_samples_leaf || spread <= 0.0 {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        }

        let candidates = self.candidate_features(rng);
        let best = self.best_split(rows, &candidates);
        let Some(best) = best else {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        };
        // A split never increases cost, but guard against a degenerate scan
        // where no threshold beats keeping the node whole.
        if best.cost >= spread {
            self.nodes.push(Node::Leaf { value: mean });
            return self.nodes.len() - 1;
        }

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&i| self.x.get(i, best.feature) <= best.threshold);
        let here = self.nodes.len();
        self.nodes.push(Node::Leaf { value: mean }); // placeholder, patched below
        let left = self.build(&left_rows, depth + 1, rng);
        let right = self.build(&right_rows, depth + 1, rng);
        self.nodes[here] =
            Node::Split { feature: best.feature, threshold: best.threshold, left, right };
        here
    }

    fn candidate_features(&self, rng: &mut Option<&mut ChaCha8Rng>) -> Vec<usize> {
        let d = self.x.cols();
        if self.feature_fraction >= 1.0 {
            return (0..d).collect();
        }
        let take = ((self.feature_fraction * d as f64).ceil() as usize).clamp(1, d);
        let mut all: Vec<usize> = (0..d).collect();
        match rng {
            Some(rng) => {
                all.partial_shuffle(rng, take);
                let mut picked: Vec<usize> = all[..take].to_vec();
                picked.sort_unstable();
                picked
            }
            // No stream supplied: deterministic prefix keeps the fit usable.
            None => all.into_iter().take(take).collect(),
        }
    }

    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<BestSplit> {
        let mut best: Option<BestSplit> = None;
        let m = rows.len();
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
        for &feature in features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.x.get(i, feature), self.y[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let total_sum: f64 = pairs.iter().map(|p| p.1).sum();
            let total_sq: f64 = pairs.iter().map(|p| p.1 * p.1).sum();
            let mut left_sum = 0.0;
            let mut left_sq = 0.0;
            for split in 1..m {
                let (xv, yv) = pairs[split - 1];
                left_sum += yv;
                left_sq += yv * yv;
                if pairs[split].0 <= xv {
                    continue; // not a boundary between distinct values
                }
                let left_n = split as f64;
                let right_n = (m - split) as f64;
                if split < self.min_samples_leaf || m - split < self.min_samples_leaf {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sq = total_sq - left_sq;
                let cost = (left_sq - left_sum * left_sum / left_n)
                    + (right_sq - right_sum * right_sum / right_n);
                let better = match &best {
                    None => true,
                    Some(b) => cost < b.cost,
                };
                if better {
                    best = Some(BestSplit {
                        feature,
                        threshold: (xv + pairs[split].0) / 2.0,
                        cost,
                    });
                }
            }
        }
        best
    }
}

/// Internal entry point shared with the boosting and forest fitters:
/// grows one tree on the given rows, optionally subsampling features per
/// split from `rng`.
pub(super) fn grow_tree(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    max_depth: usize,
    min_samples_leaf: usize,
    feature_fraction: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> TreeModel {
    debug_assert!(!rows.is_empty());
    let mut builder = Builder {
        x,
        y,
        max_depth,
        min_samples_leaf,
        feature_fraction,
        nodes: Vec::new(),
    };
    builder.build(rows, 0, &mut rng);
    TreeModel { nodes: builder.nodes }
}

pub fn fit_tree(x: &Matrix, y: &[f64], params: &TreeParams) -> Result<TreeModel> {
    params.validate()?;
    if x.rows() != y.len() {
        return Err(Error::internal(format!(
            "design matrix has {} rows but target has {}",
            x.rows(),
            y.len()
        )));
    }
    if x.rows() == 0 {
        return Err(Error::data("cannot fit a tree on an empty table"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::data("tree target contains non-finite values"));
    }
    let rows: Vec<usize> = (0..x.rows()).collect();
    let mut rng = crate::rng::stream(params.seed, 0x7472_6565);
    let use_rng = params.feature_fraction < 1.0;
    Ok(grow_tree(
        x,
        y,
        &rows,
        params.max_depth,
        params.min_samples_leaf,
        params.feature_fraction,
        if use_rng { Some(&mut rng) } else { None },
    ))
}
