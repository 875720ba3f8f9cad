//! Constrained, noisy, mixed-variable Bayesian optimization over flag-gated
//! configuration spaces, with a simulated evaluation harness and brute-force
//! oracles.

// `!(x > 0.0)` is the NaN-rejecting form used throughout validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod driver;
pub mod error;
pub mod evaluator;
pub mod flagspace;
pub mod surrogate;
pub mod telemetry;
pub mod trustregion;
pub mod warmstart;

pub use error::{Error, Result};
pub use evaluator::{Adapter, EvaluationRecord, SimSpec, Simulator, TaskSuite};
pub use flagspace::{Configuration, FlagDef, FlagKind, FlagSpace, FlagValue};
