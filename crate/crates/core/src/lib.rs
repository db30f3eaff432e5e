//! Numerical laboratory for Markovian BSDEs with superquadratic drivers.
//!
//! The crate couples a least-squares Monte Carlo backward solver with an
//! independent finite-difference PDE oracle, implements the sup-convolution
//! regularisation of irregular terminal data, and evaluates the a priori
//! envelopes for `Y` and `Z` together with sampled checkers for the standing
//! assumptions.

// `!(x > 0.0)` is used on purpose in validation: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod forward;
pub mod mcsolver;
pub mod numerics;
pub mod pde;
pub mod problem;
pub mod supconv;
pub mod verify;

pub use error::{Error, Result};
pub use problem::{
    eval_generator, eval_terminal, Assumption, DriftSpec, ForwardModel, GeneratorFamily,
    GeneratorSpec, GrowthParams, ProblemSpec, SigmaSpec, TerminalFamily, TerminalSpec,
};

/// Crate version recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
