//! Rate-ratio estimation from sampled risk sets.
//!
//! This crate implements a generalized Mantel-Haenszel estimator for cohort
//! data under risk-set sampling. At each failure time a sampled risk set is
//! drawn according to a design (full cohort, simple random sampling, matching,
//! or counter-matching), and a weighted cross-level tally drives a closed-form
//! or least-squares estimating equation for the exposure rate ratio. On top of
//! the point estimator sit robust variance estimators, an optimal weighting of
//! the estimating-equation pairs, a weighted Breslow-type cumulative baseline
//! hazard estimator, closed-form asymptotic variance and relative-efficiency
//! calculators, and a Monte Carlo harness that checks the asymptotics at
//! simulation scale.
//!
//! The numerical core is generic over the scalar type through [`num::Real`];
//! the enumeration oracle for design probabilities and the hypergeometric
//! moment calculator run in exact rational arithmetic.

pub mod asymptotics;
pub mod baseline;
pub mod cohort;
pub mod design;
pub mod enumerate;
pub mod estimator;
pub mod hypergeom;
pub mod montecarlo;
pub mod num;
pub mod population;
pub mod rng;

pub use cohort::{build_cohort, Cohort,EventKind, EventRecord, FailureEvent, LevelSet, RiskSet};
pub use design::{DesignKind, DesignSpec, SampledFailure, SampledMember};
pub use estimator::{EstimateOptions, EstimateResult, EstimatorState, VarianceMethod};
pub use population::{PopulationModel, SensSpecModel};

/// Default scalar for the estimation pipeline.
pub type Real64 = f64;

/// Estimator state over the default scalar.
pub type EstimatorState64 = estimator::EstimatorState<f64>;
/// Step function over the default scalar.
pub type StepFunction64 = baseline::StepFunction<f64>;
/// Baseline hazard report over the default scalar.
pub type BaselineReport64 = baseline::BaselineReport<f64>;
/// Population limit model over the default scalar.
pub type PopulationModel64 = population::PopulationModel<f64>;
