//! Spatial individual-level epidemic models with behavioural-change alarm
//! functions: simulation, Bayesian fitting, screening and model comparison.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod alarm;
pub mod analysis;
pub mod epidemic;
pub mod inference;
pub mod model;
pub mod population;
pub mod screening;
pub mod simulate;
