//! Two-photon (Hong-Ou-Mandel type) interference between independent
//! single-photon emitters.
//!
//! The crate is organised around four layers:
//!
//! * [`model`] holds the domain types (emitters, interference scenarios,
//!   detector response, spectral diffusion) and elementary relations.
//! * [`analytic`] evaluates the closed-form correlation functions, the
//!   detuning-averaged cross correlation, detector-response convolution and
//!   emission lineshapes.
//! * [`stochastic`] is a seeded Monte Carlo engine producing photon
//!   timestamp streams and start-stop histograms that converge to the
//!   analytic curves.
//! * [`estimate`] normalizes coincidence histograms and fits the analytic
//!   models to them.
//!
//! [`io`] covers scenario files, histogram tables and the binary timestamp
//! format.
//!
//! The model and analytic layers are generic over the floating point type
//! through [`Real`]; the aliases below fix the common `f64` instantiation.
//! Monte Carlo, fitting and I/O work in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod error;
pub mod estimate;
pub mod io;
pub mod model;
pub mod scalar;
pub mod stochastic;

pub use error::{Error, Result};
pub use scalar::Real;

pub type EmitterSpec = model::EmitterSpec<f64>;
pub type InterferenceScenario = model::InterferenceScenario<f64>;
pub type IrfSpec = model::IrfSpec<f64>;
pub type DiffusionSpec = model::DiffusionSpec<f64>;
pub type SampledCurve = analytic::SampledCurve<f64>;
pub type CrossCorrelationModel = analytic::CrossCorrelationModel<f64>;

pub type EmitterSpecF32 = model::EmitterSpec<f32>;
pub type InterferenceScenarioF32 = model::InterferenceScenario<f32>;
pub type IrfSpecF32 = model::IrfSpec<f32>;
pub type DiffusionSpecF32 = model::DiffusionSpec<f32>;
pub type SampledCurveF32 = analytic::SampledCurve<f32>;

pub use model::{CorrelationTrace, Normalization, TraceMetadata};
