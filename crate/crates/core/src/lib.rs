//! Minimal Markov semigroups of diffusion processes on `R^n`, computed by
//! exhaustion over nested balls, together with invariant densities, transition
//! kernels, entropy production and a Monte-Carlo cross-check.

// `!(x > 0.0)` guards reject NaN on purpose; quadrature and oracle constants
// carry every digit they were published with; banded solves read best indexed.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision, clippy::needless_range_loop)]

pub mod config;
pub mod cutoff;
pub mod elliptic;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod mc;
pub mod model;
pub mod poly;
pub mod quadrature;
pub mod resolvent;
pub mod semigroup;
pub mod stationary;
pub mod thermo;

pub use error::{Error, Result};
