//! Conditional inference for linear regression with symmetric errors.
//!
//! Given the residual configuration of a fitted model, the crate evaluates and
//! samples the exact conditional law of the estimation pivots, builds
//! kernel plug-in approximations when the error density is unknown, and
//! compares them with normal-approximation and residual-bootstrap intervals.

pub mod error;
pub mod rngsim;
pub mod stats;
pub mod quad;
pub mod model;
pub mod distributions;
pub mod kernel;
pub mod conddist;
pub mod npi;
pub mod bootstrap;
pub mod intervals;
pub mod polysampling;

pub use error::{Error, Result};
pub use rngsim::{SeedTree, Stream};
