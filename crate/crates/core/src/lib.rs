//! Cohort analytics for gym habit formation: visit vectorization, NMF
//! behavioral clustering, survival-streak metrics, critical-visit milestones,
//! demographic deviations, and a propensity-matched causal pipeline, all
//! verifiable against a seeded synthetic cohort generator with known effects.
//!
//! The `parallel` feature (on by default) runs the per-member and per-cell
//! loops on rayon; disabling it yields the identical sequential results.

pub mod causal;
pub mod critical;
pub mod demographics;
pub mod error;
pub mod io;
pub mod model;
pub mod nmf;
pub mod par;
pub mod survival;
pub mod synth;
pub mod vectorize;

pub use error::{Error, Result};
