//! Causal analysis of a fare-free arrival/departure offer for overnight
//! guests: eligibility filtering, propensity-score matching, honest causal
//! forests, balance and overlap diagnostics, multiple imputation, a
//! synthetic ground-truth generator, and CO2 impact accounting.

pub mod data;
pub mod diagnostics;
pub mod effect;
pub mod error;
pub mod forest;
pub mod impact;
pub mod impute;
pub mod linalg;
pub mod logit;
pub mod psm;
pub mod rng;
pub mod stats;
pub mod synth;

pub use data::{Dataset, Field, FilterConfig, GuestRecord};
pub use effect::{EffectEstimate, Estimand};
pub use error::{Error, Result};
