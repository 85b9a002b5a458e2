//! Tabular clinical risk-prediction pipeline.
//!
//! The stages mirror a conventional modelling workflow: cohort statistics
//! ([`stats`]), preprocessing ([`preprocess`]), L1 feature selection
//! ([`select`]), minority oversampling ([`resample`]), classifier families
//! ([`learn`]), grid search ([`tune`]), test-set evaluation ([`eval`]) and
//! Shapley explanations ([`explain`]). [`pipeline`] wires them together and
//! [`cohortgen`] produces a synthetic cohort so the whole chain runs without
//! restricted data.

pub mod cohortgen;
pub mod cv;
pub mod error;
pub mod eval;
pub mod explain;
pub mod learn;
pub mod matrix;
pub mod pipeline;
pub mod plots;
pub mod preprocess;
pub mod resample;
pub mod seed;
pub mod select;
pub mod special;
pub mod stats;
pub mod tabular;
pub mod tune;

pub use error::{Error, Result};
