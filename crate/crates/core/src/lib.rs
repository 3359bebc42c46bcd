//! Model-agnostic explanations for right-censored survival models.
//!
//! Models implement [`models::SurvivalModel`]; explainers consume the
//! [`models::Predictor`] view of a model on a chosen output scale.

pub mod data;
pub mod dataio;
pub mod effects;
pub mod error;
pub mod importance;
pub mod interactions;
pub mod local;
pub mod metrics;
pub mod models;
pub mod rng;
pub mod survival;
pub mod survshap;

pub use data::{FeatureKind, FeatureSpec, FeatureTable, SurvivalDataset};
pub use error::{Error, Result};
pub use survival::{CurveKind, StepCurve, TimeGrid};
