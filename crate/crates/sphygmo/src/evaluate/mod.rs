//! Clinical evaluation: grouped cross-validation, agreement and
//! regulatory metrics, interval calibration, subgroup equity, and
//! cross-institution shift analysis.

mod folds;

pub use folds::{plan_group_kfold, FoldPlan};
