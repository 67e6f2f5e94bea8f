//! Survival models for time-to-purchase data.
//!
//! The crate covers the full path from a right-censored cohort to a model
//! comparison: CSV ingestion and encoding ([`data`]), Kaplan-Meier and
//! Nelson-Aalen curves ([`nonparametric`]), five risk models ([`cox`],
//! [`mtlr`], [`rsf`], [`deepsurv`], [`ksvm`]), Harrell's C-index
//! ([`metrics`]), a synthetic cohort generator with a known hazard
//! ([`datagen`]) and the benchmark harness ([`bench`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cox;
pub mod data;
pub mod datagen;
pub mod deepsurv;
pub mod error;
pub mod ksvm;
pub mod metrics;
pub mod mtlr;
pub mod nonparametric;
pub mod report;
pub mod rsf;

pub use data::{Cohort, CovariateSchema, DesignMatrix, SurvivalRecord};
pub use error::{Result, SurvError};
pub use metrics::{concordance_index, ConcordanceResult};
pub use nonparametric::StepFunction;
