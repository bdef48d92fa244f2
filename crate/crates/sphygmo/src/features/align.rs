//! External-schema alignment onto the reference feature set.
//!
//! External cohorts rarely share exact column names with the training
//! institution, so matching happens on normalized names (lowercase,
//! non-alphanumerics collapsed to single underscores). Reference features
//! with no counterpart are filled from the clinical-defaults map when one
//! is configured, otherwise from the training cohort's medians. Alignment
//! never fails; low coverage is the caller's signal to distrust results.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::cohort::{ColumnSpec, CohortTable};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct AlignmentMap {
    /// External column name to the reference feature it was mapped onto.
    pub direct_matches: BTreeMap<String, String>,
    /// Reference features absent externally, with the fill value used.
    pub defaulted: BTreeMap<String, f64>,
    /// |direct matches| / |reference features|.
    pub coverage: f64,
}

/// Lowercases and collapses every run of non-alphanumeric characters to
/// a single underscore, trimming the ends: "Na Serum" and "na_serum"
/// normalize identically.
pub fn normalize_name(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    let mut pending_gap = false;
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            if pending_gap && !out.is_empty() {
                out.push('_');
            }
            pending_gap = false;
            out.push(ch.to_ascii_lowercase());
        } else {
            pending_gap = true;
        }
    }
    out
}

/// Projects `external` onto `reference_schema`: matched columns copy
/// their values, everything else becomes a constant fill column. The
/// output schema equals the reference schema exactly, in order.
pub fn align_features(
    external: &CohortTable,
    reference_schema: &[ColumnSpec],
    defaults: &BTreeMap<String, f64>,
    reference_medians: &BTreeMap<String, f64>,
) -> Result<(CohortTable, AlignmentMap)> {
    if reference_schema.is_empty() {
        return Err(Error::config("alignment needs a non-empty reference schema"));
    }

    // First occurrence wins when two external columns normalize alike.
    let mut external_by_norm: BTreeMap<String, usize> = BTreeMap::new();
    for (j, spec) in external.schema().iter().enumerate() {
        external_by_norm.entry(normalize_name(&spec.name)).or_insert(j);
    }

    let n = external.n_rows();
    let d = reference_schema.len();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut direct_matches = BTreeMap::new();
    let mut defaulted = BTreeMap::new();
    for spec in reference_schema {
        match external_by_norm.get(&normalize_name(&spec.name)) {
            Some(&j) => {
                columns.push(external.column(j));
                direct_matches
                    .insert(external.schema()[j].name.clone(), spec.name.clone());
            }
            None => {
                let fill = defaults
                    .get(&spec.name)
                    .or_else(|| reference_medians.get(&spec.name))
                    .copied()
                    .unwrap_or_else(|| {
                        log::warn!(
                            "no default or training median for '{}'; filling with 0",
                            spec.name
                        );
                        0.0
                    });
                defaulted.insert(spec.name.clone(), fill);
                columns.push(vec![fill; n]);
            }
        }
    }

    let mut values = Vec::with_capacity(n * d);
    for i in 0..n {
        for col in &columns {
            values.push(col[i]);
        }
    }
    let aligned = CohortTable::new(
        reference_schema.to_vec(),
        values,
        external.targets().to_vec(),
        external.group_ids().to_vec(),
        external.source_tag(),
    )?;
    let map = AlignmentMap {
        coverage: direct_matches.len() as f64 / d as f64,
        direct_matches,
        defaulted,
    };
    Ok((aligned, map))
}
