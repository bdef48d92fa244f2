//! Group-aware cross-validation fold planning.
//!
//! Folds partition groups, never rows: every row of a group lands in the
//! same fold, so a patient with repeat stays can never appear on both
//! sides of a split. Assignment is greedy by descending group size onto
//! the currently smallest fold, which keeps row counts balanced even when
//! group sizes are skewed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// group id -> fold index in [0, k)
    pub assignments: BTreeMap<String, usize>,
    /// True when the requested fold count exceeded the number of groups
    /// and had to shrink.
    pub reduced: bool,
}

impl FoldPlan {
    pub fn fold_of(&self, group: &str) -> Option<usize> {
        self.assignments.get(group).copied()
    }

    /// Fold index per row, given each row's group id.
    pub fn row_folds(&self, groups: &[String]) -> Result<Vec<usize>> {
        groups
            .iter()
            .map(|g| {
                self.fold_of(g).ok_or_else(|| {
                    Error::internal(format!("group '{g}' missing from the fold plan"))
                })
            })
            .collect()
    }

    pub fn test_rows(&self, groups: &[String], fold: usize) -> Result<Vec<usize>> {
        let folds = self.row_folds(groups)?;
        Ok((0..groups.len()).filter(|&i| folds[i] == fold).collect())
    }

    pub fn train_rows(&self, groups: &[String], fold: usize) -> Result<Vec<usize>> {
        let folds = self.row_folds(groups)?;
        Ok((0..groups.len()).filter(|&i| folds[i] != fold).collect())
    }
}

pub fn plan_group_kfold(groups: &[String], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::config(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    if groups.is_empty() {
        return Err(Error::data("cannot plan folds with no rows"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for g in groups {
        *counts.entry(g.as_str()).or_insert(0) += 1;
    }
    let n_groups = counts.len();
    if n_groups < 2 {
        return Err(Error::data(format!(
            "cross-validation needs at least 2 distinct groups, found {n_groups}"
        )));
    }
    let mut k_eff = k;
    let mut reduced = false;
    if n_groups < k {
        k_eff = n_groups.max(2);
        reduced = true;
        log::warn!(
            "only {n_groups} groups for {k} requested folds; reducing to {k_eff} folds"
        );
    }

    // Shuffle first so equally-sized groups tie-break randomly but
    // reproducibly, then place big groups while there is room to balance.
    let mut entries: Vec<(&str, usize)> = counts.into_iter().collect();
    let mut rng = crate::rng::stream(seed, 0xf01d);
    entries.shuffle(&mut rng);
    entries.sort_by(|a, b| b.1.cmp(&a.1)); // stable: keeps shuffled order within ties

    let mut fold_rows = vec![0usize; k_eff];
    let mut assignments = BTreeMap::new();
    for (group, rows) in entries {
        let target = fold_rows
            .iter()
            .enumerate()
            .min_by_key(|&(_, &c)| c)
            .map(|(i, _)| i)
            .unwrap();
        fold_rows[target] += rows;
        assignments.insert(group.to_string(), target);
    }

    debug_assert!(fold_rows.iter().all(|&c| c > 0));
    Ok(FoldPlan { k: k_eff, assignments, reduced })
}
