//! Cohort CSV ingestion against a YAML schema sidecar, with the
//! inclusion filters applied at load time.
//!
//! The CSV carries one row per ICU stay: feature columns plus the
//! required `sbp_target`, `dbp_target`, and `group_id`. Empty cells (or
//! `na`/`nan`/`null`, case-insensitive) are missing. The sidecar declares
//! every column's kind, clinical domain, unit, and optional informational
//! range; loading is strict both ways (undeclared CSV columns and
//! declared-but-absent columns are configuration errors).
//!
//! Filters mirror the cohort inclusion predicates: adult age window,
//! target plausibility bounds, at least 24 h of stay when a stay-length
//! column is present, and at least two BP measurements when a
//! measurement-count column is present. Rows are dropped and counted per
//! predicate; filters never fail a load outright unless nothing survives.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ColumnKind, ColumnSpec, CohortTable, DomainTag, AGE_BOUNDS, DBP_BOUNDS, SBP_BOUNDS};
use crate::error::{Error, Result};

pub const SBP_TARGET: &str = "sbp_target";
pub const DBP_TARGET: &str = "dbp_target";
pub const GROUP_ID: &str = "group_id";

/// Sidecar schema: every CSV column, targets and id included.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub columns: Vec<ColumnSpec>,
}

impl SchemaFile {
    pub fn load(path: &Path) -> Result<SchemaFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: SchemaFile = serde_yaml::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_yaml::to_string(self)
            .map_err(|e| Error::internal(format!("schema serialization: {e}")))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for c in &self.columns {
            c.validate()?;
            if !seen.insert(c.name.as_str()) {
                return Err(Error::config(format!("schema declares '{}' twice", c.name)));
            }
        }
        for required in [SBP_TARGET, DBP_TARGET, GROUP_ID] {
            if !seen.contains(required) {
                return Err(Error::config(format!("schema must declare '{required}'")));
            }
        }
        for c in &self.columns {
            let is_target = c.name == SBP_TARGET || c.name == DBP_TARGET;
            if is_target && c.domain != DomainTag::Target {
                return Err(Error::config(format!("'{}' must carry the target domain", c.name)));
            }
            if c.name == GROUP_ID && c.domain != DomainTag::Id {
                return Err(Error::config(format!("'{GROUP_ID}' must carry the id domain")));
            }
            if !is_target && c.name != GROUP_ID {
                if matches!(c.domain, DomainTag::Target | DomainTag::Id) {
                    return Err(Error::config(format!(
                        "feature column '{}' may not carry the {} domain",
                        c.name,
                        c.domain.as_str()
                    )));
                }
                if c.kind == ColumnKind::Categorical {
                    return Err(Error::config(format!(
                        "feature column '{}' is categorical; one-hot encode it upstream",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Feature columns only, in declared order.
    pub fn feature_specs(&self) -> Vec<ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| !matches!(c.domain, DomainTag::Target | DomainTag::Id))
            .cloned()
            .collect()
    }
}

/// Per-predicate drop counts from one load.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadAudit {
    pub rows_read: usize,
    pub rows_kept: usize,
    pub dropped_age: usize,
    pub dropped_sbp: usize,
    pub dropped_dbp: usize,
    pub dropped_target_missing: usize,
    pub dropped_stay_length: usize,
    pub dropped_bp_count: usize,
    pub dropped_group_missing: usize,
    pub warnings: Vec<String>,
}

/// Indices of the columns the row filters inspect, when declared.
struct FilterCols {
    age: Option<usize>,
    stay_hours: Option<usize>,
    stay_minutes: Option<usize>,
    bp_count: Option<usize>,
}

impl FilterCols {
    fn from_schema(specs: &[ColumnSpec]) -> FilterCols {
        let find = |name: &str| specs.iter().position(|c| c.name == name);
        FilterCols {
            age: find("age"),
            stay_hours: find("stay_length_hours"),
            stay_minutes: find("stay_length_minutes"),
            bp_count: find("bp_measurement_count"),
        }
    }
}

/// First failed predicate for a parsed row, if any. Missing cells pass
/// every feature-level filter; only observed values can violate one.
fn row_violation(features: &[f64], cols: &FilterCols, sbp: f64, dbp: f64) -> Option<&'static str> {
    if !(SBP_BOUNDS.0..=SBP_BOUNDS.1).contains(&sbp) {
        return Some("sbp");
    }
    if !(DBP_BOUNDS.0..=DBP_BOUNDS.1).contains(&dbp) {
        return Some("dbp");
    }
    if let Some(j) = cols.age {
        let v = features[j];
        if !v.is_nan() && !(AGE_BOUNDS.0..=AGE_BOUNDS.1).contains(&v) {
            return Some("age");
        }
    }
    if let Some(j) = cols.stay_hours {
        let v = features[j];
        if !v.is_nan() && v < 24.0 {
            return Some("stay");
        }
    }
    if let Some(j) = cols.stay_minutes {
        let v = features[j];
        if !v.is_nan() && v < 1440.0 {
            return Some("stay");
        }
    }
    if let Some(j) = cols.bp_count {
        let v = features[j];
        if !v.is_nan() && v < 2.0 {
            return Some("bp_count");
        }
    }
    None
}

/// Count rows of an already-built table that would fail the filters
/// again. Zero for any table returned by [`load_cohort`] (idempotence).
pub fn count_filter_violations(table: &CohortTable) -> usize {
    let cols = FilterCols::from_schema(table.schema());
    (0..table.n_rows())
        .filter(|&i| {
            let [sbp, dbp] = table.targets()[i];
            row_violation(table.feature_row(i), &cols, sbp, dbp).is_some()
        })
        .count()
}

fn parse_cell(raw: &str, line: u64, col: &str) -> Result<f64> {
    let t = raw.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") || t.eq_ignore_ascii_case("null")
    {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .map_err(|_| Error::data(format!("line {line}: column '{col}': unparseable numeric '{t}'")))
}

/// Load a cohort CSV under a schema, applying the inclusion filters.
pub fn load_cohort(
    csv_path: &Path,
    schema: &SchemaFile,
    source_tag: &str,
) -> Result<(CohortTable, LoadAudit)> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(csv_path)
        .map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", csv_path.display())))?
        .iter()
        .map(str::to_string)
        .collect();

    // Strict two-way match between header and schema.
    let declared: std::collections::BTreeSet<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
    let present: std::collections::BTreeSet<&str> = headers.iter().map(String::as_str).collect();
    let undeclared: Vec<&&str> = present.difference(&declared).collect();
    if !undeclared.is_empty() {
        return Err(Error::config(format!(
            "CSV columns not declared in the schema: {}",
            undeclared.iter().map(|s| format!("'{s}'")).collect::<Vec<_>>().join(", ")
        )));
    }
    let absent: Vec<&&str> = declared.difference(&present).collect();
    if !absent.is_empty() {
        return Err(Error::config(format!(
            "schema columns missing from the CSV: {}",
            absent.iter().map(|s| format!("'{s}'")).collect::<Vec<_>>().join(", ")
        )));
    }

    let header_idx = |name: &str| headers.iter().position(|h| h == name).expect("checked above");
    let sbp_idx = header_idx(SBP_TARGET);
    let dbp_idx = header_idx(DBP_TARGET);
    let group_idx = header_idx(GROUP_ID);

    let feature_specs = schema.feature_specs();
    let feature_idx: Vec<usize> = feature_specs.iter().map(|c| header_idx(&c.name)).collect();
    let cols = FilterCols::from_schema(&feature_specs);

    let mut audit = LoadAudit::default();
    if cols.bp_count.is_none() {
        audit
            .warnings
            .push("no bp_measurement_count column declared; measurement-count filter skipped".into());
    }

    let d = feature_specs.len();
    let mut values: Vec<f64> = Vec::new();
    let mut targets: Vec<[f64; 2]> = Vec::new();
    let mut groups: Vec<String> = Vec::new();
    let mut row_buf = vec![0.0f64; d];

    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(csv::Position::line).unwrap_or(0);
            Error::data(format!("line {line}: malformed CSV row: {e}"))
        })?;
        let line = record.position().map(csv::Position::line).unwrap_or(0);
        audit.rows_read += 1;

        let sbp_raw = record.get(sbp_idx).unwrap_or("");
        let dbp_raw = record.get(dbp_idx).unwrap_or("");
        let sbp = parse_cell(sbp_raw, line, SBP_TARGET)?;
        let dbp = parse_cell(dbp_raw, line, DBP_TARGET)?;
        if sbp.is_nan() || dbp.is_nan() {
            audit.dropped_target_missing += 1;
            continue;
        }

        let group = record.get(group_idx).unwrap_or("").trim().to_string();
        if group.is_empty() {
            audit.dropped_group_missing += 1;
            continue;
        }

        for (k, (&ci, spec)) in feature_idx.iter().zip(&feature_specs).enumerate() {
            row_buf[k] = parse_cell(record.get(ci).unwrap_or(""), line, &spec.name)?;
        }

        match row_violation(&row_buf, &cols, sbp, dbp) {
            Some("sbp") => audit.dropped_sbp += 1,
            Some("dbp") => audit.dropped_dbp += 1,
            Some("age") => audit.dropped_age += 1,
            Some("stay") => audit.dropped_stay_length += 1,
            Some("bp_count") => audit.dropped_bp_count += 1,
            Some(other) => return Err(Error::internal(format!("unknown filter '{other}'"))),
            None => {
                values.extend_from_slice(&row_buf);
                targets.push([sbp, dbp]);
                groups.push(group);
            }
        }
    }

    audit.rows_kept = targets.len();
    if audit.rows_kept == 0 {
        return Err(Error::data(format!(
            "{}: no rows survive the inclusion filters ({} read)",
            csv_path.display(),
            audit.rows_read
        )));
    }

    let table = CohortTable::new(feature_specs, values, targets, groups, source_tag)?;
    if let Some(w) = table.sample_size_warning() {
        audit.warnings.push(w);
    }
    Ok((table, audit))
}

/// Shortest-roundtrip float formatting; keeps CSV writes byte-stable.
fn fmt_cell(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Write a cohort to CSV in schema order plus the required columns.
pub fn write_cohort_csv(table: &CohortTable, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let mut header: Vec<&str> = table.schema().iter().map(|c| c.name.as_str()).collect();
    header.extend([SBP_TARGET, DBP_TARGET, GROUP_ID]);
    w.write_record(&header).map_err(|e| Error::data(e.to_string()))?;
    for i in 0..table.n_rows() {
        let mut row: Vec<String> = table.feature_row(i).iter().map(|&v| fmt_cell(v)).collect();
        let [sbp, dbp] = table.targets()[i];
        row.push(fmt_cell(sbp));
        row.push(fmt_cell(dbp));
        row.push(table.group_ids()[i].clone());
        w.write_record(&row).map_err(|e| Error::data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write the sidecar schema for a table (features + targets + id).
pub fn write_schema_yaml(table: &CohortTable, path: &Path) -> Result<()> {
    let mut columns = table.schema().to_vec();
    columns.push(
        ColumnSpec::new(SBP_TARGET, ColumnKind::Numeric, DomainTag::Target, "mmHg")
            .with_range(SBP_BOUNDS.0, SBP_BOUNDS.1),
    );
    columns.push(
        ColumnSpec::new(DBP_TARGET, ColumnKind::Numeric, DomainTag::Target, "mmHg")
            .with_range(DBP_BOUNDS.0, DBP_BOUNDS.1),
    );
    columns.push(ColumnSpec::new(GROUP_ID, ColumnKind::Categorical, DomainTag::Id, ""));
    SchemaFile { columns }.save(path)
}
