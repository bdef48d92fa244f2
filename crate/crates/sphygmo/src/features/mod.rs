//! Stage 2 feature engineering and selection.
//!
//! Engineering appends configured interaction products and power
//! transforms (square, square root, log1p) as derived columns; nothing
//! here ever mutates an existing column. Selection then runs a four-step
//! funnel: univariate slope screen, iterative VIF elimination, mutual
//! information screen, and a final top-count cap by MI. [`align_features`]
//! maps an external cohort onto the reference schema by normalized name,
//! filling the gaps from clinical defaults or training medians.

mod align;
mod select;

pub use align::{align_features, normalize_name, AlignmentMap};
pub use select::{
    compute_vif, estimate_mutual_information, select_features, DroppedFeature, SelectionAudit,
    SelectionStage,
};

use serde::{Deserialize, Serialize};

use crate::cohort::{ColumnKind, ColumnSpec, CohortTable, DomainTag};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturePipelineConfig {
    pub interaction_pairs: Vec<(String, String)>,
    pub transform_columns: Vec<String>,
    pub p_value_cutoff: f64,
    pub vif_cutoff: f64,
    pub mi_cutoff: f64,
    pub target_feature_count: usize,
}

impl Default for FeaturePipelineConfig {
    fn default() -> Self {
        let pair = |a: &str, b: &str| (a.to_string(), b.to_string());
        FeaturePipelineConfig {
            interaction_pairs: vec![
                pair("age", "creatinine"),
                pair("hr_mean", "creatinine"),
                pair("vasopressor_dose", "lactate"),
                pair("hrv", "sbp_baseline"),
            ],
            transform_columns: vec![
                "age".to_string(),
                "creatinine".to_string(),
                "lactate".to_string(),
                "hr_mean".to_string(),
            ],
            p_value_cutoff: 0.1,
            vif_cutoff: 5.0,
            mi_cutoff: 0.01,
            target_feature_count: 74,
        }
    }
}

impl FeaturePipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_value_cutoff > 0.0 && self.p_value_cutoff <= 1.0) {
            return Err(Error::config(format!(
                "p_value_cutoff must lie in (0, 1], got {}",
                self.p_value_cutoff
            )));
        }
        if !(self.vif_cutoff > 1.0) {
            return Err(Error::config(format!(
                "vif_cutoff must exceed 1 (VIF is never below 1), got {}",
                self.vif_cutoff
            )));
        }
        if !(self.mi_cutoff > 0.0) {
            return Err(Error::config(format!(
                "mi_cutoff must be positive, got {}",
                self.mi_cutoff
            )));
        }
        if self.target_feature_count == 0 {
            return Err(Error::config("target_feature_count must be at least 1"));
        }
        Ok(())
    }
}

pub fn interaction_name(a: &str, b: &str) -> String {
    format!("{a}__x__{b}")
}

/// Appends one product column per configured pair, named `a__x__b` and
/// tagged as derived. Missing cells propagate (NaN times anything is NaN).
pub fn build_interactions(
    table: &CohortTable,
    pairs: &[(String, String)],
) -> Result<CohortTable> {
    let mut extra = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let ja = table.column_index(a).ok_or_else(|| {
            Error::config(format!("interaction pair ({a}, {b}): column '{a}' not found"))
        })?;
        let jb = table.column_index(b).ok_or_else(|| {
            Error::config(format!("interaction pair ({a}, {b}): column '{b}' not found"))
        })?;
        for (name, j) in [(a, ja), (b, jb)] {
            if table.schema()[j].kind == ColumnKind::Categorical {
                return Err(Error::config(format!(
                    "interaction pair ({a}, {b}): column '{name}' is categorical"
                )));
            }
        }
        let values: Vec<f64> = (0..table.n_rows())
            .map(|i| table.value(i, ja) * table.value(i, jb))
            .collect();
        let spec = ColumnSpec::new(
            &interaction_name(a, b),
            ColumnKind::Numeric,
            DomainTag::Derived,
            "",
        );
        extra.push((spec, values));
    }
    table.with_extra_columns(extra)
}

/// Appends `x^2`, `sqrt(x)`, and `log(1+x)` columns for every listed
/// column. Any negative observed value in a listed column is a data
/// error: the square root and log branches would produce NaN silently.
pub fn build_power_transforms(table: &CohortTable, columns: &[String]) -> Result<CohortTable> {
    let mut extra = Vec::with_capacity(columns.len() * 3);
    for name in columns {
        let j = table
            .column_index(name)
            .ok_or_else(|| Error::config(format!("transform column '{name}' not found")))?;
        for i in 0..table.n_rows() {
            let v = table.value(i, j);
            if v < 0.0 {
                return Err(Error::data(format!(
                    "row {i}: column '{name}': negative value {v} cannot be power-transformed"
                )));
            }
        }
        let col = table.column(j);
        let derived = |suffix: &str, f: fn(f64) -> f64| {
            let spec = ColumnSpec::new(
                &format!("{name}__{suffix}"),
                ColumnKind::Numeric,
                DomainTag::Derived,
                "",
            );
            (spec, col.iter().map(|&v| f(v)).collect::<Vec<f64>>())
        };
        extra.push(derived("squared", |v| v * v));
        extra.push(derived("sqrt", f64::sqrt));
        extra.push(derived("log1p", f64::ln_1p));
    }
    table.with_extra_columns(extra)
}
