//! Stage 2: multi-strategy missing-data imputation.
//!
//! Each column gets one strategy: a configured clinical default always
//! wins, a column that is mostly missing falls back to its observed
//! median, and everything else goes through chained-equation regression
//! (MICE). A KNN imputer runs independently over the same table as a
//! cross-check, and [`validate_imputation`] compares the two paths per
//! column: a two-sample KS test for distribution drift plus the mean
//! MICE-vs-KNN disagreement as a fraction of the column IQR. Columns
//! where the imputers disagree by 10% of the IQR or more are flagged
//! for review rather than rejected; the call site decides what to do.
//!
//! Everything in this module is deterministic: MICE sweeps columns in
//! schema order with median initialization, and KNN breaks distance
//! ties by row index.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cohort::{ColumnSpec, CohortTable};
use crate::linalg::{lstsq, Matrix};
use crate::stats;
use crate::{Error, Result};

/// Diagonal jitter for chained regressions whose design is singular
/// (collinear predictors, more predictors than observed rows).
const MICE_JITTER: f64 = 1e-6;

/// Floor for scale denominators so constant columns cannot produce
/// divisions by zero.
const SCALE_FLOOR: f64 = 1e-9;

/// Columns whose MICE and KNN imputations disagree by at least this
/// fraction of the column IQR are flagged in the audit.
pub const DISAGREEMENT_FLAG_THRESHOLD: f64 = 0.10;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputePolicy {
    pub mice_max_iter: usize,
    pub mice_tol: f64,
    pub knn_k: usize,
    /// Columns missing more than this fraction of cells use the median
    /// instead of chained regression.
    pub missing_rate_cutoff: f64,
    /// Column name to fixed fill value; overrides every other strategy.
    pub clinical_defaults: BTreeMap<String, f64>,
}

impl Default for ImputePolicy {
    fn default() -> Self {
        ImputePolicy {
            mice_max_iter: 50,
            mice_tol: 1e-4,
            knn_k: 5,
            missing_rate_cutoff: 0.7,
            clinical_defaults: BTreeMap::new(),
        }
    }
}

impl ImputePolicy {
    pub fn validate(&self) -> Result<()> {
        if self.mice_max_iter == 0 {
            return Err(Error::config("mice_max_iter must be at least 1"));
        }
        if !self.mice_tol.is_finite() || self.mice_tol <= 0.0 {
            return Err(Error::config(format!(
                "mice_tol must be positive and finite, got {}",
                self.mice_tol
            )));
        }
        if self.knn_k == 0 {
            return Err(Error::config("knn_k must be at least 1"));
        }
        if !(self.missing_rate_cutoff > 0.0 && self.missing_rate_cutoff < 1.0) {
            return Err(Error::config(format!(
                "missing_rate_cutoff must lie strictly inside (0, 1), got {}",
                self.missing_rate_cutoff
            )));
        }
        for (name, v) in &self.clinical_defaults {
            if !v.is_finite() {
                return Err(Error::config(format!(
                    "clinical default for '{name}' must be finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeStrategy {
    Mice,
    Median,
    ClinicalDefault,
}

/// Piecewise strategy rule: clinical default when configured, median when
/// the column is missing more than the cutoff fraction, MICE otherwise.
pub fn select_strategy(
    policy: &ImputePolicy,
    column: &ColumnSpec,
    missing_rate: f64,
) -> ImputeStrategy {
    debug_assert!((0.0..=1.0).contains(&missing_rate), "missing rate {missing_rate}");
    if policy.clinical_defaults.contains_key(&column.name) {
        ImputeStrategy::ClinicalDefault
    } else if missing_rate > policy.missing_rate_cutoff {
        ImputeStrategy::Median
    } else {
        ImputeStrategy::Mice
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ColumnAudit {
    pub column: String,
    pub strategy: ImputeStrategy,
    pub missing_rate: f64,
    /// Two-sample KS between the originally observed values and the full
    /// post-imputation column.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    /// Mean |MICE - KNN| over originally-missing cells as a fraction of
    /// the column IQR; zero when nothing was missing.
    pub disagreement: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ImputationAudit {
    pub columns: Vec<ColumnAudit>,
    pub mice_iterations: usize,
    pub cells_imputed: usize,
    pub flagged_columns: Vec<String>,
}

/// Chained-equation regression imputation.
///
/// Missing cells start at the column median; each sweep regresses every
/// incomplete column on all other columns over the rows where it was
/// observed and overwrites its missing cells with the fitted values,
/// clipped to the observed range of that column. Sweeps stop when the
/// largest imputed-value change, as a fraction of the column's observed
/// standard deviation, drops below `mice_tol`, or after `mice_max_iter`
/// sweeps. Returns the imputed table and the number of sweeps run (zero
/// when nothing was missing). Observed cells are never modified.
pub fn mice_impute(table: &CohortTable, policy: &ImputePolicy) -> Result<(CohortTable, usize)> {
    policy.validate()?;
    let n = table.n_rows();
    let d = table.n_features();

    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| table.column(j)).collect();
    let missing_rows: Vec<Vec<usize>> = (0..d)
        .map(|j| (0..n).filter(|&i| cols[j][i].is_nan()).collect())
        .collect();
    let incomplete: Vec<usize> = (0..d).filter(|&j| !missing_rows[j].is_empty()).collect();
    if incomplete.is_empty() {
        return Ok((table.clone(), 0));
    }

    // Median initialization, plus the observed range and scale per
    // incomplete column. Fitted values are clipped to the observed range:
    // a chained regression extrapolating past it would hand physically
    // impossible values (negative lactate, say) to downstream transforms.
    let mut clip = vec![(0.0_f64, 0.0_f64); d];
    let mut scale = vec![1.0_f64; d];
    for &j in &incomplete {
        let observed = table.column_observed(j);
        if observed.is_empty() {
            return Err(Error::data(format!(
                "column '{}' has no observed values to train imputation on",
                table.schema()[j].name
            )));
        }
        let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        clip[j] = (lo, hi);
        scale[j] = stats::std_dev(&observed).max(SCALE_FLOOR);
        let med = stats::median(&observed);
        for &i in &missing_rows[j] {
            cols[j][i] = med;
        }
    }

    let mut iterations = 0;
    for _ in 0..policy.mice_max_iter {
        iterations += 1;
        let mut max_delta = 0.0_f64;
        for &j in &incomplete {
            let predictors: Vec<usize> = (0..d).filter(|&p| p != j).collect();
            let train_rows: Vec<usize> =
                (0..n).filter(|i| !missing_rows[j].contains(i)).collect();
            let mut x = Matrix::zeros(train_rows.len(), predictors.len());
            let mut y = Vec::with_capacity(train_rows.len());
            for (r, &i) in train_rows.iter().enumerate() {
                for (c, &p) in predictors.iter().enumerate() {
                    x.set(r, c, cols[p][i]);
                }
                y.push(cols[j][i]);
            }
            let (coefs, intercept) = lstsq(&x, &y, MICE_JITTER)?;
            for &i in &missing_rows[j] {
                let mut pred = intercept;
                for (c, &p) in predictors.iter().enumerate() {
                    pred += coefs[c] * cols[p][i];
                }
                let pred = pred.clamp(clip[j].0, clip[j].1);
                max_delta = max_delta.max((pred - cols[j][i]).abs() / scale[j]);
                cols[j][i] = pred;
            }
        }
        if max_delta < policy.mice_tol {
            break;
        }
    }

    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        for col in cols.iter() {
            values.push(col[i]);
        }
    }
    Ok((table.with_values(values)?, iterations))
}

/// KNN imputation: each missing cell becomes the mean of that column over
/// the `k` nearest rows observing it. Distance is the root mean square
/// difference over mutually-observed standardized features, so rows with
/// different overlap compare on the same footing. Fewer than `k` eligible
/// neighbors means all of them are used; a cell with no eligible neighbor
/// at all falls back to the column median.
pub fn knn_impute(table: &CohortTable, k: usize) -> Result<CohortTable> {
    if k == 0 {
        return Err(Error::config("knn_k must be at least 1"));
    }
    let n = table.n_rows();
    let d = table.n_features();
    let cols: Vec<Vec<f64>> = (0..d).map(|j| table.column(j)).collect();

    // Standardize over observed cells; constant columns map to z = 0 and
    // drop out of every distance.
    let mut z = vec![vec![f64::NAN; n]; d];
    let mut col_median = vec![f64::NAN; d];
    for j in 0..d {
        let observed = table.column_observed(j);
        if observed.is_empty() {
            return Err(Error::data(format!(
                "column '{}' has no observed values to impute from",
                table.schema()[j].name
            )));
        }
        col_median[j] = stats::median(&observed);
        let m = stats::mean(&observed);
        let s = stats::std_dev(&observed);
        for i in 0..n {
            let v = cols[j][i];
            if !v.is_nan() {
                z[j][i] = if s > 0.0 { (v - m) / s } else { 0.0 };
            }
        }
    }

    let targets: Vec<(usize, usize)> = (0..n)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .filter(|&(i, j)| table.is_missing(i, j))
        .collect();

    // Cells are independent reads of the original table, so a parallel
    // map keeps results identical at any thread count.
    use rayon::prelude::*;
    let fills: Vec<f64> = targets
        .par_iter()
        .map(|&(i, j)| knn_fill(i, j, k, &z, &cols, col_median[j]))
        .collect();

    let mut values = table.feature_row(0).to_vec();
    values.clear();
    for i in 0..n {
        values.extend_from_slice(table.feature_row(i));
    }
    for (&(i, j), &v) in targets.iter().zip(&fills) {
        values[i * d + j] = v;
    }
    table.with_values(values)
}

fn knn_fill(i: usize, j: usize, k: usize, z: &[Vec<f64>], cols: &[Vec<f64>], fallback: f64) -> f64 {
    let n = cols[0].len();
    let d = cols.len();
    let mut near: Vec<(f64, usize)> = Vec::new();
    for r in 0..n {
        if r == i || cols[j][r].is_nan() {
            continue;
        }
        let mut sum = 0.0;
        let mut shared = 0usize;
        for f in z.iter().take(d) {
            let (a, b) = (f[i], f[r]);
            if !a.is_nan() && !b.is_nan() {
                sum += (a - b) * (a - b);
                shared += 1;
            }
        }
        if shared == 0 {
            continue;
        }
        near.push(((sum / shared as f64).sqrt(), r));
    }
    if near.is_empty() {
        return fallback;
    }
    near.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let take = near.len().min(k);
    near[..take].iter().map(|&(_, r)| cols[j][r]).sum::<f64>() / take as f64
}

/// Builds the per-column audit from the original table and the two
/// imputation paths. `strategies` must list the chosen strategy per
/// column in schema order; `mice_iterations` is carried through from
/// [`mice_impute`] for the report.
pub fn validate_imputation(
    before: &CohortTable,
    after_mice: &CohortTable,
    after_knn: &CohortTable,
    strategies: &[ImputeStrategy],
    mice_iterations: usize,
) -> Result<ImputationAudit> {
    let n = before.n_rows();
    let d = before.n_features();
    for t in [after_mice, after_knn] {
        if t.n_rows() != n
            || t.n_features() != d
            || t.schema().iter().zip(before.schema()).any(|(a, b)| a.name != b.name)
        {
            return Err(Error::internal("imputation audit requires identically shaped tables"));
        }
    }
    if strategies.len() != d {
        return Err(Error::internal("one strategy per column required"));
    }

    let mut columns = Vec::with_capacity(d);
    let mut flagged_columns = Vec::new();
    let mut cells_imputed = 0;
    for j in 0..d {
        let observed = before.column_observed(j);
        let missing: Vec<usize> = (0..n).filter(|&i| before.is_missing(i, j)).collect();
        cells_imputed += missing.len();

        let (ks_statistic, ks_p_value) = if observed.is_empty() {
            // Nothing observed means nothing to drift from.
            (0.0, 1.0)
        } else {
            stats::ks_two_sample(&observed, &after_mice.column(j))
        };

        let disagreement = if missing.is_empty() {
            0.0
        } else {
            let mean_abs = missing
                .iter()
                .map(|&i| (after_mice.value(i, j) - after_knn.value(i, j)).abs())
                .sum::<f64>()
                / missing.len() as f64;
            let scale = if observed.is_empty() {
                1.0
            } else {
                stats::iqr(&observed).max(SCALE_FLOOR)
            };
            mean_abs / scale
        };

        let flagged = disagreement >= DISAGREEMENT_FLAG_THRESHOLD;
        let name = before.schema()[j].name.clone();
        if flagged {
            flagged_columns.push(name.clone());
        }
        columns.push(ColumnAudit {
            column: name,
            strategy: strategies[j],
            missing_rate: before.missing_fraction(j),
            ks_statistic,
            ks_p_value,
            disagreement,
            flagged,
        });
    }

    Ok(ImputationAudit { columns, mice_iterations, cells_imputed, flagged_columns })
}

/// Full Stage 2 path: select a strategy per column, fill clinical
/// defaults and medians, run MICE over the remaining incomplete columns,
/// run the KNN cross-check over the same prefilled table, and audit.
/// Returns the MICE-path table, which is guaranteed complete.
pub fn impute_table(
    table: &CohortTable,
    policy: &ImputePolicy,
) -> Result<(CohortTable, ImputationAudit)> {
    policy.validate()?;
    let n = table.n_rows();
    let d = table.n_features();

    let strategies: Vec<ImputeStrategy> = table
        .schema()
        .iter()
        .enumerate()
        .map(|(j, spec)| select_strategy(policy, spec, table.missing_fraction(j)))
        .collect();

    // Defaults and medians go in first so the chained regressions can
    // condition on complete versions of those columns.
    let mut cols: Vec<Vec<f64>> = (0..d).map(|j| table.column(j)).collect();
    for j in 0..d {
        let fill = match strategies[j] {
            ImputeStrategy::ClinicalDefault => {
                policy.clinical_defaults[&table.schema()[j].name]
            }
            ImputeStrategy::Median => {
                let observed = table.column_observed(j);
                if observed.is_empty() {
                    return Err(Error::data(format!(
                        "column '{}' has no observed values and no clinical default",
                        table.schema()[j].name
                    )));
                }
                stats::median(&observed)
            }
            ImputeStrategy::Mice => continue,
        };
        for v in cols[j].iter_mut().filter(|v| v.is_nan()) {
            *v = fill;
        }
    }
    let mut prefilled_values = Vec::with_capacity(n * d);
    for i in 0..n {
        for col in cols.iter() {
            prefilled_values.push(col[i]);
        }
    }
    let prefilled = table.with_values(prefilled_values)?;

    let (imputed, mice_iterations) = mice_impute(&prefilled, policy)?;
    let cross_check = knn_impute(&prefilled, policy.knn_k)?;
    let audit = validate_imputation(table, &imputed, &cross_check, &strategies, mice_iterations)?;

    if imputed.total_missing_cells() != 0 {
        return Err(Error::internal("imputation left missing cells behind"));
    }
    Ok((imputed, audit))
}
