//! Quantized local-SGD federated learning with an adaptive quantization-level
//! schedule.
//!
//! The crate is organised bottom-up:
//!
//! * [`quantizer`]: stochastic uniform quantization, exact bit accounting and
//!   the wire format used for client uploads.
//! * [`objectives`]: differentiable models (quadratic, logistic, one-hidden-layer
//!   MLP), synthetic and file-backed datasets, client partitioning.
//! * [`fedsim`]: the local-SGD round, server aggregation and the training loop.
//! * [`controller`]: the loss-driven quantization-level schedule, learning-rate
//!   schedules and the convergence-bound calculators.
//! * [`harness`]: configuration, experiment runner, sweeps and CSV output.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases below
//! fix the scalar to `f64`, which is what the harness and CLI use.

pub mod controller;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod objectives;
pub mod quantizer;
pub mod rng;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Flat model parameters.
pub type ParameterVector = Vec<f64>;
pub type QuantizedUpdate = quantizer::QuantizedUpdate<f64>;
pub type Dataset = objectives::Dataset<f64>;
pub type ClientShard = objectives::ClientShard<f64>;
pub type BoundConstants = controller::BoundConstants<f64>;
pub type QuantSchedule = controller::QuantSchedule<f64>;
pub type LrSchedule = controller::LrSchedule<f64>;
pub type RoundRecord = fedsim::RoundRecord<f64>;
pub type GlobalState = fedsim::GlobalState<f64>;
