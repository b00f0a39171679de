//! Counterfactual restricted mean durations for semi-competing promotion and
//! retirement processes.
//!
//! Two proportional-hazards models are fitted on calendar time with delayed
//! entry ([`cox`]); their Breslow survival curves give the expected time a
//! subject spends in the lower rank, the higher rank and retirement over a
//! window under a covariate policy ([`prediction`]); influence functions
//! supply standard errors ([`variance`]); and [`simulation`] checks the whole
//! pipeline by Monte Carlo.
//!
//! The numerical code is generic over [`Scalar`]; the aliases below fix the
//! precision.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cox;
pub mod data;
pub mod io;
pub mod linalg;
pub mod prediction;
pub mod scalar;
pub mod simulation;
pub mod variance;

pub use scalar::Scalar;

pub type CovariateTrajectory = data::CovariateTrajectory<f64>;
pub type ProcessObservation = data::ProcessObservation<f64>;
pub type SubjectRecord = data::SubjectRecord<f64>;
pub type Dataset = data::Dataset<f64>;
pub type RestrictionWindow = data::RestrictionWindow<f64>;
pub type CountingProcessView = cox::CountingProcessView<f64>;
pub type CoxFit = cox::CoxFit<f64>;
pub type CounterfactualPolicy = prediction::CounterfactualPolicy<f64>;
pub type SurvivalCurve = prediction::SurvivalCurve<f64>;
pub type RestrictedMeanEstimate = prediction::RestrictedMeanEstimate<f64>;
pub type TargetContext = prediction::TargetContext<f64>;

pub type Dataset32 = data::Dataset<f32>;
pub type CountingProcessView32 = cox::CountingProcessView<f32>;
pub type CoxFit32 = cox::CoxFit<f32>;
pub type TargetContext32 = prediction::TargetContext<f32>;
