//! Dataset model: column schema, patient-level cohort tables, SBP strata,
//! the inclusion filters, and a synthetic dual-institution generator.
//!
//! A cohort is a patient-level table: one row per ICU stay, numeric or
//! binary feature columns (missing cells allowed), two target columns
//! (systolic and diastolic pressure in mmHg), and a per-row group id that
//! ties stays of the same patient together so cross-validation can split
//! by patient instead of by row.

mod load;
mod synth;

pub use load::{load_cohort, write_cohort_csv, write_schema_yaml, LoadAudit, SchemaFile};
pub use synth::{generate_synthetic_pair, SyntheticConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Plausibility bounds, mmHg. Rows outside are dropped at ingestion.
pub const SBP_BOUNDS: (f64, f64) = (30.0, 300.0);
pub const DBP_BOUNDS: (f64, f64) = (15.0, 200.0);
/// Adult inclusion window, years.
pub const AGE_BOUNDS: (f64, f64) = (18.0, 89.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numeric,
    Binary,
    Categorical,
}

/// Clinical category of a column; drives shift diagnostics and ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainTag {
    Vitals,
    Laboratory,
    Medication,
    Temporal,
    Derived,
    Demographic,
    Target,
    Id,
}

impl DomainTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            DomainTag::Vitals => "vitals",
            DomainTag::Laboratory => "laboratory",
            DomainTag::Medication => "medication",
            DomainTag::Temporal => "temporal",
            DomainTag::Derived => "derived",
            DomainTag::Demographic => "demographic",
            DomainTag::Target => "target",
            DomainTag::Id => "id",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    pub domain: DomainTag,
    #[serde(default)]
    pub unit: String,
    /// Informational range in the column's unit; not a row filter.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_range: Option<[f64; 2]>,
}

impl ColumnSpec {
    pub fn new(name: &str, kind: ColumnKind, domain: DomainTag, unit: &str) -> Self {
        ColumnSpec {
            name: name.to_string(),
            kind,
            domain,
            unit: unit.to_string(),
            valid_range: None,
        }
    }

    pub fn with_range(mut self, min: f64, max: f64) -> Self {
        self.valid_range = Some([min, max]);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::config("column with empty name"));
        }
        if let Some([min, max]) = self.valid_range {
            if !(min < max) {
                return Err(Error::config(format!(
                    "column '{}': valid_range [{min}, {max}] must satisfy min < max",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// SBP stratum; lower bound inclusive, upper exclusive, final stratum open.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stratum {
    Hypotension,
    Normal,
    Prehypertension,
    Hypertension,
}

impl Stratum {
    pub const ALL: [Stratum; 4] = [
        Stratum::Hypotension,
        Stratum::Normal,
        Stratum::Prehypertension,
        Stratum::Hypertension,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stratum::Hypotension => "hypotension",
            Stratum::Normal => "normal",
            Stratum::Prehypertension => "prehypertension",
            Stratum::Hypertension => "hypertension",
        }
    }
}

/// Stratum of a systolic pressure: hypotension below 90, normal in
/// [90, 120), prehypertension in [120, 140), hypertension at or above 140.
pub fn stratum_of(sbp: f64) -> Result<Stratum> {
    if !sbp.is_finite() {
        return Err(Error::data(format!("stratum of non-finite SBP {sbp}")));
    }
    Ok(if sbp < 90.0 {
        Stratum::Hypotension
    } else if sbp < 120.0 {
        Stratum::Normal
    } else if sbp < 140.0 {
        Stratum::Prehypertension
    } else {
        Stratum::Hypertension
    })
}

/// Immutable patient-level table. Missing feature cells are NaN; target
/// and group columns never have missing entries (ingestion drops such
/// rows). Construction validates every invariant, so downstream stages
/// can rely on them without rechecking.
#[derive(Debug, Clone)]
pub struct CohortTable {
    schema: Vec<ColumnSpec>,
    /// Row-major n x d; NaN marks a missing cell.
    values: Vec<f64>,
    targets: Vec<[f64; 2]>,
    group_ids: Vec<String>,
    source_tag: String,
}

impl CohortTable {
    pub fn new(
        schema: Vec<ColumnSpec>,
        values: Vec<f64>,
        targets: Vec<[f64; 2]>,
        group_ids: Vec<String>,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        let d = schema.len();
        let n = targets.len();
        if values.len() != n * d {
            return Err(Error::internal(format!(
                "cohort shape mismatch: {} cells for {n} rows x {d} columns",
                values.len()
            )));
        }
        if group_ids.len() != n {
            return Err(Error::internal("group id count differs from row count"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for spec in &schema {
            spec.validate()?;
            if !seen.insert(spec.name.clone()) {
                return Err(Error::config(format!("duplicate column name '{}'", spec.name)));
            }
            if matches!(spec.domain, DomainTag::Target | DomainTag::Id) {
                return Err(Error::internal(format!(
                    "'{}': target/id columns do not belong in the feature schema",
                    spec.name
                )));
            }
        }
        for (i, t) in targets.iter().enumerate() {
            let [sbp, dbp] = *t;
            if !sbp.is_finite() || !dbp.is_finite() {
                return Err(Error::data(format!("row {i}: non-finite target")));
            }
            if !(SBP_BOUNDS.0..=SBP_BOUNDS.1).contains(&sbp) {
                return Err(Error::data(format!("row {i}: SBP {sbp} outside plausibility bounds")));
            }
            if !(DBP_BOUNDS.0..=DBP_BOUNDS.1).contains(&dbp) {
                return Err(Error::data(format!("row {i}: DBP {dbp} outside plausibility bounds")));
            }
        }
        if let Some(i) = group_ids.iter().position(String::is_empty) {
            return Err(Error::data(format!("row {i}: empty group id")));
        }
        Ok(CohortTable { schema, values, targets, group_ids, source_tag: source_tag.into() })
    }

    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn schema(&self) -> &[ColumnSpec] {
        &self.schema
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|c| c.name == name)
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.schema.len() + col]
    }

    #[inline]
    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.value(row, col).is_nan()
    }

    pub fn feature_row(&self, row: usize) -> &[f64] {
        let d = self.schema.len();
        &self.values[row * d..(row + 1) * d]
    }

    /// All values of one column, missing cells included (as NaN).
    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.value(i, col)).collect()
    }

    /// Observed (non-missing) values of one column.
    pub fn column_observed(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|i| self.value(i, col)).filter(|v| !v.is_nan()).collect()
    }

    pub fn missing_fraction(&self, col: usize) -> f64 {
        let n = self.n_rows();
        if n == 0 {
            return 0.0;
        }
        let miss = (0..n).filter(|&i| self.is_missing(i, col)).count();
        miss as f64 / n as f64
    }

    pub fn total_missing_cells(&self) -> usize {
        self.values.iter().filter(|v| v.is_nan()).count()
    }

    pub fn targets(&self) -> &[[f64; 2]] {
        &self.targets
    }

    pub fn target_column(&self, idx: usize) -> Vec<f64> {
        self.targets.iter().map(|t| t[idx]).collect()
    }

    pub fn group_ids(&self) -> &[String] {
        &self.group_ids
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    /// Dense feature matrix; fails if any cell is still missing.
    pub fn feature_matrix(&self) -> Result<Matrix> {
        if let Some(pos) = self.values.iter().position(|v| v.is_nan()) {
            let d = self.schema.len();
            return Err(Error::data(format!(
                "missing cell at row {}, column '{}' (impute before modeling)",
                pos / d,
                self.schema[pos % d].name
            )));
        }
        Ok(Matrix::from_flat(self.values.clone(), self.n_rows(), self.n_features()))
    }

    /// Same table with new cell values (used by imputation). Shape and
    /// schema are preserved; target/group columns are untouched.
    pub fn with_values(&self, values: Vec<f64>) -> Result<CohortTable> {
        CohortTable::new(
            self.schema.clone(),
            values,
            self.targets.clone(),
            self.group_ids.clone(),
            self.source_tag.clone(),
        )
    }

    /// New table keeping only the columns at `keep` (in the given order).
    pub fn select_columns(&self, keep: &[usize]) -> Result<CohortTable> {
        let schema: Vec<ColumnSpec> = keep.iter().map(|&j| self.schema[j].clone()).collect();
        let n = self.n_rows();
        let mut values = Vec::with_capacity(n * keep.len());
        for i in 0..n {
            for &j in keep {
                values.push(self.value(i, j));
            }
        }
        CohortTable::new(schema, values, self.targets.clone(), self.group_ids.clone(), self.source_tag.clone())
    }

    /// New table keeping only the rows at `keep` (in the given order).
    pub fn select_rows(&self, keep: &[usize]) -> Result<CohortTable> {
        let d = self.n_features();
        let mut values = Vec::with_capacity(keep.len() * d);
        let mut targets = Vec::with_capacity(keep.len());
        let mut groups = Vec::with_capacity(keep.len());
        for &i in keep {
            values.extend_from_slice(self.feature_row(i));
            targets.push(self.targets[i]);
            groups.push(self.group_ids[i].clone());
        }
        CohortTable::new(self.schema.clone(), values, targets, groups, self.source_tag.clone())
    }

    /// Append derived columns (used by feature engineering).
    pub fn with_extra_columns(&self, extra: Vec<(ColumnSpec, Vec<f64>)>) -> Result<CohortTable> {
        let n = self.n_rows();
        let mut schema = self.schema.clone();
        let d_old = schema.len();
        let d_new = d_old + extra.len();
        let mut values = Vec::with_capacity(n * d_new);
        for (spec, col) in &extra {
            if col.len() != n {
                return Err(Error::internal(format!("derived column '{}' has wrong length", spec.name)));
            }
        }
        for i in 0..n {
            values.extend_from_slice(self.feature_row(i));
            for (_, col) in &extra {
                values.push(col[i]);
            }
        }
        schema.extend(extra.into_iter().map(|(s, _)| s));
        CohortTable::new(schema, values, self.targets.clone(), self.group_ids.clone(), self.source_tag.clone())
    }

    /// Warn-level sample-size check: n should be at least ten times the
    /// feature count (returns a message instead of failing; the caller
    /// decides where to surface it).
    pub fn sample_size_warning(&self) -> Option<String> {
        let (n, d) = (self.n_rows(), self.n_features());
        if d > 0 && n < 10 * d {
            Some(format!("sample size {n} is below 10x feature count ({d} features)"))
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_schema() -> Vec<ColumnSpec> {
        vec![
            ColumnSpec::new("age", ColumnKind::Numeric, DomainTag::Demographic, "years"),
            ColumnSpec::new("hr_mean", ColumnKind::Numeric, DomainTag::Vitals, "bpm"),
        ]
    }

    fn tiny_table() -> CohortTable {
        CohortTable::new(
            tiny_schema(),
            vec![60.0, 80.0, 70.0, f64::NAN],
            vec![[120.0, 70.0], [135.0, 82.0]],
            vec!["p1".into(), "p2".into()],
            "internal",
        )
        .unwrap()
    }

    #[test]
    fn strata_match_the_clinical_boundaries() {
        assert_eq!(stratum_of(85.0).unwrap(), Stratum::Hypotension);
        assert_eq!(stratum_of(90.0).unwrap(), Stratum::Normal);
        assert_eq!(stratum_of(119.9).unwrap(), Stratum::Normal);
        assert_eq!(stratum_of(120.0).unwrap(), Stratum::Prehypertension);
        assert_eq!(stratum_of(140.0).unwrap(), Stratum::Hypertension);
        assert_eq!(stratum_of(250.0).unwrap(), Stratum::Hypertension);
        assert!(stratum_of(f64::NAN).is_err());
        assert!(stratum_of(f64::INFINITY).is_err());
    }

    proptest! {
        #[test]
        fn every_valid_sbp_maps_to_exactly_one_stratum(sbp in 30.0f64..300.0) {
            let s = stratum_of(sbp).unwrap();
            let matches = Stratum::ALL
                .iter()
                .filter(|&&c| c == s)
                .count();
            prop_assert_eq!(matches, 1);
            // Boundary semantics: lower-inclusive.
            if sbp >= 140.0 { prop_assert_eq!(s, Stratum::Hypertension); }
            if sbp < 90.0 { prop_assert_eq!(s, Stratum::Hypotension); }
        }
    }

    #[test]
    fn construction_rejects_invariant_violations() {
        let schema = tiny_schema();
        // Non-finite target.
        assert!(CohortTable::new(
            schema.clone(),
            vec![1.0, 2.0],
            vec![[f64::NAN, 70.0]],
            vec!["p".into()],
            "t"
        )
        .is_err());
        // SBP outside plausibility bounds.
        assert!(CohortTable::new(
            schema.clone(),
            vec![1.0, 2.0],
            vec![[310.0, 70.0]],
            vec!["p".into()],
            "t"
        )
        .is_err());
        // Empty group id.
        assert!(CohortTable::new(
            schema.clone(),
            vec![1.0, 2.0],
            vec![[120.0, 70.0]],
            vec!["".into()],
            "t"
        )
        .is_err());
        // Duplicate column names.
        let mut dup = tiny_schema();
        dup[1].name = "age".into();
        assert!(CohortTable::new(dup, vec![1.0, 2.0], vec![[120.0, 70.0]], vec!["p".into()], "t").is_err());
    }

    #[test]
    fn missing_cells_are_tracked_per_column() {
        let t = tiny_table();
        assert!(!t.is_missing(0, 0));
        assert!(t.is_missing(1, 1));
        assert_eq!(t.missing_fraction(1), 0.5);
        assert_eq!(t.column_observed(1), vec![80.0]);
        assert_eq!(t.total_missing_cells(), 1);
        // Dense export refuses while cells are missing.
        assert!(t.feature_matrix().is_err());
    }

    #[test]
    fn column_and_row_selection_keep_alignment() {
        let t = tiny_table();
        let only_hr = t.select_columns(&[1]).unwrap();
        assert_eq!(only_hr.n_features(), 1);
        assert_eq!(only_hr.schema()[0].name, "hr_mean");
        assert_eq!(only_hr.value(0, 0), 80.0);
        assert_eq!(only_hr.targets()[1], [135.0, 82.0]);

        let second = t.select_rows(&[1]).unwrap();
        assert_eq!(second.n_rows(), 1);
        assert_eq!(second.group_ids()[0], "p2");
        assert_eq!(second.value(0, 0), 70.0);
    }

    #[test]
    fn sample_size_warning_triggers_below_ten_to_one() {
        let t = tiny_table();
        assert!(t.sample_size_warning().is_some());
    }
}
