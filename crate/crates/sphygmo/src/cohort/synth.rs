//! Synthetic dual-institution cohort generator.
//!
//! Stands in for a matched pair of real ICU extracts so the whole
//! pipeline can be exercised at desk scale with a known ground truth.
//!
//! # Generative model
//!
//! Each row is an ICU stay. Five latent hemodynamic factors drive the
//! observed columns: cardiac function, vascular tone, renal function,
//! physiological stress, and metabolic state, all standard normal. A
//! per-stay shock flag (drawn for an exact `hypotension_fraction` of
//! rows) pushes vitals, labs, and vasopressor use toward a shock
//! presentation and lowers both targets sharply.
//!
//! Targets are a fixed linear function of the observed columns plus two
//! interaction terms (age x creatinine, HRV x baseline SBP for systolic;
//! age x creatinine, vasopressor x lactate for diastolic), a residual
//! vascular-tone term, the shock effect, and Gaussian noise with known
//! scale (6.0 mmHg systolic, 6.5 mmHg diastolic, multiplied by
//! `noise_scale`; 0 gives noise-free targets for plumbing tests).
//!
//! The external institution reuses the same ground-truth function and
//! applies `shift_magnitude`-scaled mean shifts sized per domain:
//! medications shift hardest (about 0.8 sd at magnitude 1), then labs
//! (about 0.5 sd), vitals (about 0.28 sd), and age barely (about 0.1 sd).
//! When `shift_magnitude > 0` the external schema also renames four lab
//! columns (`sodium` -> `na_serum`, `bun` -> `urea_nitrogen`, `wbc` ->
//! `leukocyte_count`, `glucose` -> `blood_sugar_admit`) to exercise
//! name-based alignment; at magnitude 0 the institutions differ only by
//! source tag and sampling stream.
//!
//! Two columns (`sbp_mean_24h`, `dbp_mean_24h`) are deliberate leakage
//! bait: charted first-day aggregates of the targets themselves, present
//! so the leakage screen has something real to catch in every run.
//!
//! Missing cells are MCAR at `missing_rate` on all columns except
//! demographics, the stay bookkeeping columns, and the leakage bait;
//! `troponin` is extra-sparse (rate + 0.55, capped at 0.85) so the
//! high-missingness median strategy is exercised whenever missingness is
//! on at all.
//!
//! Determinism: every draw comes from a ChaCha stream derived from the
//! seed, with separate streams for internal values, external values,
//! missingness masks, and row structure. Identical configs produce
//! bitwise-identical cohorts; the internal cohort is unaffected by
//! `shift_magnitude`, and feature values are unaffected by `noise_scale`
//! (only target noise scales).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ColumnKind, ColumnSpec, CohortTable, DomainTag};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_patients: usize,
    pub seed: u64,
    /// 0 = statistically identical institutions.
    #[serde(default)]
    pub shift_magnitude: f64,
    /// MCAR cell missingness on eligible columns, in [0, 1).
    #[serde(default)]
    pub missing_rate: f64,
    /// Fraction of stays forced into a shock presentation, in [0, 1).
    #[serde(default)]
    pub hypotension_fraction: f64,
    /// Multiplier on target noise; 0 gives noise-free targets for tests.
    #[serde(default = "default_noise_scale")]
    pub noise_scale: f64,
}

fn default_noise_scale() -> f64 {
    1.0
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_patients: 1000,
            seed: 42,
            shift_magnitude: 1.0,
            missing_rate: 0.15,
            hypotension_fraction: 0.05,
            noise_scale: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients < 50 {
            return Err(Error::config(format!(
                "n_patients = {} is too small for grouped 5-fold validation (need >= 50)",
                self.n_patients
            )));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::config("missing_rate must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.hypotension_fraction) {
            return Err(Error::config("hypotension_fraction must lie in [0, 1)"));
        }
        if !(self.shift_magnitude >= 0.0) || !self.shift_magnitude.is_finite() {
            return Err(Error::config("shift_magnitude must be finite and >= 0"));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::config("noise_scale must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Target noise scales in mmHg at noise_scale = 1.
pub const SBP_NOISE_SD: f64 = 6.0;
pub const DBP_NOISE_SD: f64 = 6.5;

/// Columns the external institution renames when shift_magnitude > 0.
pub const EXTERNAL_RENAMES: [(&str, &str); 4] = [
    ("sodium", "na_serum"),
    ("bun", "urea_nitrogen"),
    ("wbc", "leukocyte_count"),
    ("glucose", "blood_sugar_admit"),
];

fn spec(name: &str, kind: ColumnKind, domain: DomainTag, unit: &str) -> ColumnSpec {
    ColumnSpec::new(name, kind, domain, unit)
}

fn feature_schema(renamed: bool) -> Vec<ColumnSpec> {
    use ColumnKind::*;
    use DomainTag::*;
    let rename = |name: &str| -> String {
        if renamed {
            for (from, to) in EXTERNAL_RENAMES {
                if name == from {
                    return to.to_string();
                }
            }
        }
        name.to_string()
    };
    let mut cols = vec![
        spec("age", Numeric, Demographic, "years").with_range(18.0, 89.0),
        spec("sex_male", Binary, Demographic, ""),
        spec("hr_mean", Numeric, Vitals, "bpm").with_range(20.0, 220.0),
        spec("hr_std", Numeric, Vitals, "bpm"),
        spec("rr_mean", Numeric, Vitals, "breaths/min").with_range(4.0, 60.0),
        spec("spo2_mean", Numeric, Vitals, "%").with_range(50.0, 100.0),
        spec("temp_mean", Numeric, Vitals, "C").with_range(30.0, 43.0),
        spec("hrv", Numeric, Vitals, "ms"),
        spec("sbp_baseline", Numeric, Vitals, "mmHg").with_range(30.0, 300.0),
        spec("creatinine", Numeric, Laboratory, "mg/dL"),
        spec("lactate", Numeric, Laboratory, "mmol/L"),
        spec(&rename("sodium"), Numeric, Laboratory, "mEq/L"),
        spec("potassium", Numeric, Laboratory, "mEq/L"),
        spec("hemoglobin", Numeric, Laboratory, "g/dL"),
        spec(&rename("bun"), Numeric, Laboratory, "mg/dL"),
        spec(&rename("wbc"), Numeric, Laboratory, "10^9/L"),
        spec(&rename("glucose"), Numeric, Laboratory, "mg/dL"),
        spec("troponin", Numeric, Laboratory, "ng/mL"),
        spec("vasopressor_dose", Numeric, Medication, "mcg/kg/min"),
        spec("beta_blocker", Binary, Medication, ""),
        spec("diuretic_dose", Numeric, Medication, "mg"),
        spec("antihypertensive_count", Numeric, Medication, "count"),
        spec("hr_trend", Numeric, Temporal, "bpm/h"),
        spec("bp_lability_index", Numeric, Temporal, "events"),
        spec("stay_length_hours", Numeric, Temporal, "h"),
        spec("bp_measurement_count", Numeric, Temporal, "count"),
        spec("bmi", Numeric, Derived, "kg/m^2"),
        spec("shock_index", Numeric, Derived, ""),
        spec("comorbidity_score", Numeric, Derived, "points"),
        spec("sbp_mean_24h", Numeric, Vitals, "mmHg"),
        spec("dbp_mean_24h", Numeric, Vitals, "mmHg"),
    ];
    // Columns that never go missing: identity, stay bookkeeping, bait.
    debug_assert!(cols.iter().map(|c| c.name.clone()).collect::<std::collections::BTreeSet<_>>().len() == cols.len());
    cols.shrink_to_fit();
    cols
}

/// Whether a column participates in MCAR missingness.
fn missable(name: &str) -> bool {
    !matches!(
        name,
        "age" | "sex_male" | "stay_length_hours" | "bp_measurement_count" | "sbp_mean_24h" | "dbp_mean_24h"
    )
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Generate the (internal, external) cohort pair.
pub fn generate_synthetic_pair(cfg: &SyntheticConfig) -> Result<(CohortTable, CohortTable)> {
    cfg.validate()?;
    let internal = institution(cfg, false)?;
    let external = institution(cfg, true)?;
    Ok((internal, external))
}

fn institution(cfg: &SyntheticConfig, external: bool) -> Result<CohortTable> {
    let n = cfg.n_patients;
    let m = if external { cfg.shift_magnitude } else { 0.0 };
    let renamed = external && cfg.shift_magnitude > 0.0;
    let schema = feature_schema(renamed);
    let d = schema.len();

    // Stream layout: values, missingness, and row structure never share a
    // stream, so e.g. changing missing_rate cannot perturb cell values.
    let base = if external { 100 } else { 0 };
    let mut rv = rng::stream(cfg.seed, base + 1); // values
    let mut rm = rng::stream(cfg.seed, base + 2); // missingness
    let mut rs = rng::stream(cfg.seed, base + 3); // structure (shock, stays)

    // Exact-count shock flags via a seeded shuffle.
    let k_shock = (cfg.hypotension_fraction * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rs.random_range(0..=i);
        order.swap(i, j);
    }
    let mut shock = vec![false; n];
    for &i in order.iter().take(k_shock) {
        shock[i] = true;
    }
    // Second-stay flags: a row may continue the previous row's patient.
    let reuse: Vec<bool> = (0..n).map(|i| i > 0 && rs.random::<f64>() < 0.12).collect();

    let tag_prefix = if external { "e" } else { "i" };
    let mut values = vec![0.0; n * d];
    let mut targets = Vec::with_capacity(n);
    let mut groups: Vec<String> = Vec::with_capacity(n);
    let mut patient_no = 0usize;
    let mut prev_latents = [0.0f64; 5];

    for i in 0..n {
        let mut norm = || -> f64 { StandardNormal.sample(&mut rv) };
        // Latents: cardiac, vascular tone, renal, stress, metabolic.
        let fresh = [norm(), norm(), norm(), norm(), norm()];
        let lat: [f64; 5] = if reuse[i] {
            // Second stay of the same patient: correlated but not equal.
            std::array::from_fn(|k| 0.7 * prev_latents[k] + (1.0 - 0.7f64 * 0.7).sqrt() * fresh[k])
        } else {
            patient_no += 1;
            fresh
        };
        prev_latents = lat;
        let [z_card, z_vasc, z_renal, z_stress, z_metab] = lat;
        let s = if shock[i] { 1.0 } else { 0.0 };
        groups.push(format!("{tag_prefix}-{patient_no:05}"));

        // Per-feature noise and binary draws, in fixed order.
        let e: [f64; 27] = std::array::from_fn(|_| StandardNormal.sample(&mut rv));
        let u_sex: f64 = rv.random();
        let u_bb: f64 = rv.random();
        let e_sbp: f64 = StandardNormal.sample(&mut rv);
        let e_dbp: f64 = StandardNormal.sample(&mut rv);
        let e_bait1: f64 = StandardNormal.sample(&mut rv);
        let e_bait2: f64 = StandardNormal.sample(&mut rv);

        let age = (62.0 + 10.0 * e[0] + 5.0 * z_renal + 1.2 * m).clamp(20.0, 88.0);
        let sex_male = if u_sex < 0.55 + 0.02 * m { 1.0 } else { 0.0 };
        let hr_mean = 80.0 + 8.0 * z_stress + 4.0 * z_card + 10.0 * s + 3.0 * e[1] + 2.5 * m;
        let hr_std = (5.0 + 1.6 * z_stress + 0.8 * e[2] + 0.5 * m).max(0.5);
        let rr_mean = 17.5 + 2.2 * z_stress + 1.5 * s + 1.2 * e[3] + 0.8 * m;
        let spo2_mean = (96.5 - 1.1 * z_stress - 0.8 * s + 0.8 * e[4] - 0.4 * m).min(100.0);
        let temp_mean = 36.9 + 0.35 * z_stress + 0.25 * e[5] + 0.1 * m;
        let hrv = (42.0 - 7.0 * z_stress - 6.0 * s + 5.0 * e[6] - 2.5 * m).max(3.0);
        let sbp_baseline = 119.0 + 11.0 * z_vasc + 5.0 * z_card - 16.0 * s + 4.0 * e[7] - 3.0 * m;
        let creatinine = (0.38 * z_renal + 0.12 * z_stress + 0.18 * s + 0.12 * e[8] + 0.20 * m).exp();
        let lactate = (1.3f64.ln() + 0.35 * z_stress + 0.55 * s + 0.18 * e[9] + 0.18 * m).exp();
        let sodium = 139.0 - 1.0 * z_renal + 2.2 * e[10] - 1.2 * m;
        let potassium = 4.1 + 0.35 * z_renal + 0.3 * e[11] + 0.22 * m;
        let hemoglobin = 11.8 - 0.5 * z_renal - 0.6 * s + 1.2 * e[12] - 0.6 * m;
        let bun = (17.0f64.ln() + 0.45 * z_renal + 0.15 * s + 0.18 * e[13] + 0.24 * m).exp();
        let wbc = (9.0f64.ln() + 0.25 * z_stress + 0.2 * s + 0.2 * e[14] + 0.15 * m).exp();
        let glucose = (130.0f64.ln() + 0.15 * z_metab + 0.10 * z_stress + 0.12 * e[15] + 0.10 * m).exp();
        let troponin = (0.08f64.ln() + 0.9 * z_card + 0.5 * s + 0.5 * e[16] + 0.55 * m).exp();
        let vasopressor_dose = (0.35 * z_stress - 0.18 * z_vasc + 1.1 * s - 0.30 + 0.25 * e[17] + 0.25 * m).max(0.0);
        let beta_blocker =
            if u_bb < logistic(0.5 * z_card + 0.02 * (age - 62.0) - 0.85 + 0.7 * m) { 1.0 } else { 0.0 };
        let diuretic_dose = (20.0 * (0.5 * z_renal + 0.3 * z_card) + 8.0 * e[18] + 9.0 * m).max(0.0);
        let antihypertensive_count =
            (1.1 + 0.8 * z_vasc - 0.8 * s + 0.5 * e[19] + 0.5 * m).clamp(0.0, 4.0).round();
        let hr_trend = 0.4 * z_stress + 1.5 * s + 0.5 * e[20] + 0.15 * m;
        let bp_lability_index = (1.5 + 1.2 * z_stress + 2.0 * s + 0.8 * e[21] + 0.35 * m).max(0.0);
        let stay_length_hours = 24.0 + (30.0f64.ln() + 0.5 * z_stress + 0.3 * s + 0.4 * e[22] + 0.10 * m).exp();
        let bp_measurement_count = (6.0 + stay_length_hours / 12.0 + 2.0 * e[23]).round().max(2.0);
        let bmi = 27.5 + 4.5 * z_metab + 1.5 * e[24] + 0.7 * m;
        let shock_index = hr_mean / sbp_baseline.max(40.0) + 0.03 * e[25];
        let comorbidity_score =
            (2.2 + 0.05 * (age - 62.0) + 0.8 * z_renal + 0.7 * z_card + 0.8 * e[26]).clamp(0.0, 12.0).round();

        // Ground truth: linear in observed columns + two interactions +
        // residual vascular tone + shock effect + Gaussian noise.
        let sbp_mu = 43.5
            + 0.55 * sbp_baseline
            + 0.12 * age
            + 0.10 * hr_mean
            + 3.2 * creatinine
            - 2.2 * lactate
            - 4.5 * vasopressor_dose
            - 2.5 * beta_blocker
            - 0.06 * hrv
            + 6.0 * z_vasc
            + 0.25 * (age - 62.0) * (creatinine - 1.15)
            + 0.020 * (hrv - 42.0) * (sbp_baseline - 119.0)
            - 42.0 * s;
        let dbp_mu = 40.0
            + 0.24 * sbp_baseline
            + 0.05 * hr_mean
            - 0.04 * age
            + 1.4 * creatinine
            - 1.3 * lactate
            - 2.2 * vasopressor_dose
            - 1.5 * beta_blocker
            + 5.0 * z_vasc
            + 0.18 * (age - 62.0) * (creatinine - 1.15)
            + 0.35 * vasopressor_dose * lactate
            - 24.0 * s;
        let sbp = (sbp_mu + SBP_NOISE_SD * cfg.noise_scale * e_sbp).clamp(32.0, 295.0);
        let dbp = (dbp_mu + DBP_NOISE_SD * cfg.noise_scale * e_dbp).clamp(18.0, 190.0);
        targets.push([sbp, dbp]);

        // Leakage bait: charted first-day aggregates of the targets.
        let sbp_mean_24h = sbp + 2.0 * e_bait1;
        let dbp_mean_24h = dbp + 2.0 * e_bait2;

        let row = [
            age,
            sex_male,
            hr_mean,
            hr_std,
            rr_mean,
            spo2_mean,
            temp_mean,
            hrv,
            sbp_baseline,
            creatinine,
            lactate,
            sodium,
            potassium,
            hemoglobin,
            bun,
            wbc,
            glucose,
            troponin,
            vasopressor_dose,
            beta_blocker,
            diuretic_dose,
            antihypertensive_count,
            hr_trend,
            bp_lability_index,
            stay_length_hours,
            bp_measurement_count,
            bmi,
            shock_index,
            comorbidity_score,
            sbp_mean_24h,
            dbp_mean_24h,
        ];
        debug_assert_eq!(row.len(), d);
        values[i * d..(i + 1) * d].copy_from_slice(&row);
    }

    // MCAR missingness; troponin runs much sparser so the median path is
    // exercised whenever missingness is on.
    if cfg.missing_rate > 0.0 {
        let troponin_rate = (cfg.missing_rate + 0.55).min(0.85);
        for i in 0..n {
            for (j, col) in schema.iter().enumerate() {
                if !missable(&col.name) {
                    continue;
                }
                let rate = if col.name == "troponin" { troponin_rate } else { cfg.missing_rate };
                if rm.random::<f64>() < rate {
                    values[i * d + j] = f64::NAN;
                }
            }
        }
    }

    let tag = if external { "external" } else { "internal" };
    CohortTable::new(schema, values, targets, groups, tag)
}
