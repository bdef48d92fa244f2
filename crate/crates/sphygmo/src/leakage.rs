//! Lexical leakage screen: drop feature columns whose names say they
//! encode the prediction target.
//!
//! Matching is a plain case-insensitive substring test against a small
//! pattern set; the defaults catch charted BP aggregates and verification
//! flags. The screen never inspects values (statistical leakage detection
//! is out of scope) and never touches targets or group ids, which live
//! outside the feature schema. A removal is followed by a re-scan of the
//! surviving names; a surviving match is an internal fault, not a silent
//! pass.

use serde::{Deserialize, Serialize};

use crate::cohort::CohortTable;
use crate::error::{Error, Result};

pub const DEFAULT_PATTERNS: [&str; 4] = ["verify", "sbp_mean", "dbp_mean", "map_mean"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakagePatternSet {
    /// Lowercase substrings to match; never empty.
    pub patterns: Vec<String>,
}

impl Default for LeakagePatternSet {
    fn default() -> Self {
        LeakagePatternSet { patterns: DEFAULT_PATTERNS.iter().map(|s| s.to_string()).collect() }
    }
}

impl LeakagePatternSet {
    /// Default patterns plus schema-specific additions.
    pub fn with_extra(extra: &[String]) -> Result<Self> {
        let mut set = LeakagePatternSet::default();
        set.patterns.extend(extra.iter().cloned());
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patterns.is_empty() {
            return Err(Error::config("leakage pattern set is empty"));
        }
        for p in &self.patterns {
            if p.is_empty() {
                return Err(Error::config("empty leakage pattern"));
            }
            if p.chars().any(|c| c.is_uppercase()) {
                return Err(Error::config(format!("leakage pattern '{p}' must be lowercase")));
            }
        }
        Ok(())
    }

    /// First matching pattern for a column name, if any.
    pub fn matches(&self, column_name: &str) -> Option<&str> {
        let lower = column_name.to_lowercase();
        self.patterns.iter().find(|p| lower.contains(p.as_str())).map(String::as_str)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Removed column names with the pattern that caught each.
    pub removed_columns: Vec<RemovedColumn>,
    pub total_features: usize,
    pub removal_rate: f64,
    /// Matches found by the post-removal re-scan; 0 on success.
    pub post_validation_matches: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RemovedColumn {
    pub name: String,
    pub pattern: String,
}

/// Drop every feature column whose lowercased name contains a pattern.
pub fn remove_leakage(
    table: &CohortTable,
    patterns: &LeakagePatternSet,
) -> Result<(CohortTable, LeakageReport)> {
    patterns.validate()?;
    let total = table.n_features();
    let mut keep = Vec::with_capacity(total);
    let mut removed = Vec::new();
    for (j, spec) in table.schema().iter().enumerate() {
        match patterns.matches(&spec.name) {
            Some(p) => removed.push(RemovedColumn { name: spec.name.clone(), pattern: p.to_string() }),
            None => keep.push(j),
        }
    }
    let cleaned = table.select_columns(&keep)?;

    // Validation pass over the survivors. A hit here means the removal
    // logic itself is broken; fail loudly.
    let post_validation_matches =
        cleaned.schema().iter().filter(|c| patterns.matches(&c.name).is_some()).count();
    if post_validation_matches != 0 {
        return Err(Error::internal(format!(
            "leakage validation re-scan found {post_validation_matches} surviving matches"
        )));
    }

    let report = LeakageReport {
        removal_rate: if total == 0 { 0.0 } else { removed.len() as f64 / total as f64 },
        removed_columns: removed,
        total_features: total,
        post_validation_matches,
    };
    Ok((cleaned, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{ColumnKind, ColumnSpec, DomainTag};
    use proptest::prelude::*;

    fn table_with_columns(names: &[&str]) -> CohortTable {
        let schema: Vec<ColumnSpec> = names
            .iter()
            .map(|n| ColumnSpec::new(n, ColumnKind::Numeric, DomainTag::Vitals, ""))
            .collect();
        let n = 3;
        let values: Vec<f64> = (0..n * names.len()).map(|k| k as f64).collect();
        CohortTable::new(
            schema,
            values,
            vec![[120.0, 70.0]; n],
            (0..n).map(|i| format!("p{i}")).collect(),
            "t",
        )
        .unwrap()
    }

    #[test]
    fn removes_matching_columns_and_keeps_the_rest() {
        let t = table_with_columns(&["sbp_mean_6h", "hr_mean", "verify_flag"]);
        let (cleaned, report) = remove_leakage(&t, &LeakagePatternSet::default()).unwrap();
        let kept: Vec<&str> = cleaned.schema().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(kept, vec!["hr_mean"]);
        let removed: Vec<&str> = report.removed_columns.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(removed, vec!["sbp_mean_6h", "verify_flag"]);
        assert!((report.removal_rate - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(report.post_validation_matches, 0);
        // Values stay aligned with the surviving column.
        assert_eq!(cleaned.value(0, 0), t.value(0, 1));
    }

    #[test]
    fn no_match_is_a_no_op_with_rate_zero() {
        let t = table_with_columns(&["hr_mean", "age"]);
        let (cleaned, report) = remove_leakage(&t, &LeakagePatternSet::default()).unwrap();
        assert_eq!(cleaned.n_features(), 2);
        assert_eq!(report.removal_rate, 0.0);
        assert!(report.removed_columns.is_empty());
    }

    #[test]
    fn matching_is_case_insensitive() {
        let t = table_with_columns(&["SBP_Mean_6h", "Verify_Flag", "HR_mean"]);
        let (cleaned, _) = remove_leakage(&t, &LeakagePatternSet::default()).unwrap();
        let kept: Vec<&str> = cleaned.schema().iter().map(|c| c.name.as_str()).collect();
        assert_eq!(kept, vec!["HR_mean"]);
    }

    #[test]
    fn removal_rate_matches_the_counting_convention() {
        // 111 features, 3 planted matches: rate rounds to 0.027.
        let mut names: Vec<String> = (0..108).map(|i| format!("feat_{i:03}")).collect();
        names.extend(["sbp_mean_icu".to_string(), "dbp_mean_icu".to_string(), "verify_src".to_string()]);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let t = table_with_columns(&refs);
        let (_, report) = remove_leakage(&t, &LeakagePatternSet::default()).unwrap();
        assert_eq!(report.total_features, 111);
        assert_eq!(report.removed_columns.len(), 3);
        assert!((report.removal_rate - 3.0 / 111.0).abs() < 1e-12);
    }

    #[test]
    fn pattern_set_validation_rejects_bad_inputs() {
        assert!(LeakagePatternSet { patterns: vec![] }.validate().is_err());
        assert!(LeakagePatternSet { patterns: vec!["SBP".into()] }.validate().is_err());
        assert!(LeakagePatternSet { patterns: vec!["".into()] }.validate().is_err());
        assert!(LeakagePatternSet::with_extra(&["map_sys".into()]).is_ok());
    }

    proptest! {
        #[test]
        fn removal_is_idempotent(raw_names in proptest::collection::vec("[a-z_]{1,12}", 1..20)) {
            // Deduplicate to satisfy the unique-name invariant.
            let mut names: Vec<String> = Vec::new();
            for (i, n) in raw_names.iter().enumerate() {
                names.push(format!("{n}_{i}"));
            }
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let t = table_with_columns(&refs);
            let pats = LeakagePatternSet::default();
            let (once, r1) = remove_leakage(&t, &pats).unwrap();
            let (twice, r2) = remove_leakage(&once, &pats).unwrap();
            prop_assert_eq!(once.n_features(), twice.n_features());
            prop_assert_eq!(r2.removed_columns.len(), 0);
            prop_assert_eq!(r1.post_validation_matches, 0);
        }

        #[test]
        fn extra_patterns_never_enlarge_the_survivor_set(
            raw_names in proptest::collection::vec("[a-z_]{1,12}", 1..20),
            extra in "[a-z]{1,6}",
        ) {
            let mut names: Vec<String> = Vec::new();
            for (i, n) in raw_names.iter().enumerate() {
                names.push(format!("{n}_{i}"));
            }
            let refs: Vec<&str> = names.iter().map(String::as_str).collect();
            let t = table_with_columns(&refs);
            let base = LeakagePatternSet::default();
            let wider = LeakagePatternSet::with_extra(&[extra]).unwrap();
            let (kept_base, _) = remove_leakage(&t, &base).unwrap();
            let (kept_wider, _) = remove_leakage(&t, &wider).unwrap();
            prop_assert!(kept_wider.n_features() <= kept_base.n_features());
            // Survivors under the wider set are a subset of the base survivors.
            let base_names: std::collections::BTreeSet<String> =
                kept_base.schema().iter().map(|c| c.name.clone()).collect();
            for c in kept_wider.schema() {
                prop_assert!(base_names.contains(&c.name));
            }
        }
    }
}
