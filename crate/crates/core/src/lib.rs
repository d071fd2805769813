//! Bayesian calibration of multivariate computer models with identifiable
//! calibration parameters.
//!
//! Posterior draws of the bias function are projected onto the set of
//! functions that are `L²`-orthogonal to the model's parameter gradients at an
//! anchor estimate. The crate provides the quadrature and projection
//! machinery, bias priors (Gaussian process, spline basis expansion and the
//! orthogonal-kernel baseline), deterministic emulators for expensive
//! simulators, the Gibbs/adaptive Metropolis sampler and the replication
//! studies used to validate the method.

pub mod bench;
pub mod calibrate;
pub mod emulator;
pub mod error;
pub mod model;
pub mod numerics;
pub mod priors;
pub mod projection;

pub use error::{Error, Result};
