//! Region-based variational inference for discrete graphical models with
//! linear-response consistency constraints.
//!
//! The numeric core is generic over [`Real`]; `f64` aliases are provided at the
//! crate root for the common case.

pub mod constraints;
pub mod error;
pub mod fc_analytic;
pub mod graph_model;
pub mod harness;
pub mod inference;
pub mod linalg;
pub mod oracle;
pub mod response;
pub mod scalar;

pub use error::{ConstraintError, FcError, HarnessError, InferenceError, ModelError, OracleError};
pub use scalar::{Dual, Real};

pub type FactorGraph64 = graph_model::FactorGraph<f64>;
pub type FactorTable64 = graph_model::FactorTable<f64>;
