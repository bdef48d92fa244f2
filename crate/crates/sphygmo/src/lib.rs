//! Blood-pressure regression toolkit for ICU cohorts.
//!
//! The crate implements a five-stage pipeline for predicting systolic and
//! diastolic blood pressure from routinely collected ICU variables:
//!
//! 1. **Cohort assembly** ([`cohort`]): CSV ingestion against a declared
//!    schema, plausibility filters, and a synthetic dual-institution
//!    generator for end-to-end testing.
//! 2. **Leakage screening** ([`leakage`]): removal of feature columns whose
//!    names indicate they encode the prediction target.
//! 3. **Imputation** ([`impute`]): per-column strategy selection between
//!    chained-regression imputation, column medians, and configured
//!    clinical defaults, with a KNN cross-check and distribution audit.
//! 4. **Feature engineering** ([`features`]): clinically motivated
//!    interaction terms, power transforms, and a four-stage selection
//!    funnel (univariate screen, collinearity pruning, mutual-information
//!    screen, count cap), plus name-based schema alignment for external
//!    cohorts.
//! 5. **Modeling and evaluation** ([`models`], [`evaluate`]): a blended
//!    ensemble (gradient boosting blended with a stacked model under a
//!    ridge meta-learner), linear quantile heads for 80% prediction
//!    intervals, grouped cross-validation, and a clinical report covering
//!    AAMI/BHS conformance, Bland-Altman limits, interval coverage,
//!    subgroup equity, and cross-institution shift diagnostics.
//!
//! The [`pipeline`] module wires the stages into the commands exposed by
//! the `sphygmo` binary; [`config`] and [`report`] define the on-disk run
//! configuration and report formats.
//!
//! Every stage is deterministic given a configuration and seed: reruns at
//! any thread count reproduce reports byte for byte (timestamps aside).

pub mod cohort;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod features;
pub mod impute;
pub mod leakage;
pub mod linalg;
pub mod models;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
