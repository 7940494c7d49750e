//! Quantization-level and learning-rate schedules, plus the error-bound
//! calculators used to reason about them.
//!
//! The runtime schedule only needs observed training losses and the
//! learning rate; smoothness and gradient-variance constants appear solely in
//! the bound and feasibility helpers in [`bounds`].

pub mod bounds;
mod schedule;

pub use bounds::{
    adaptive_bound_terms, bound_from_terms, first_infeasible_round, lr_condition_fixed, lr_condition_per_round,
    lr_condition_value, AdaptiveBoundTerms, BoundConstants,
};
pub use schedule::{
    adaquant_level, bits_for_level, LrSchedule, QuantMode, QuantSchedule, DEFAULT_S0, DEFAULT_S_MAX,
};
