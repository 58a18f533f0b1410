//! Reduced-order modeling for parametric dynamical systems whose trajectory
//! distribution is only partially known.
//!
//! The toolkit combines a surrogate prior over trajectories with incomplete
//! noisy observations, approximates the resulting data-enhanced posterior by
//! weighted particle ensembles, and fits two families of reduced models from
//! the weighted snapshots:
//!
//! - a Galerkin/POD reduced recursion ([`pod`]),
//! - an optimal low-rank linear one-step operator ([`dmd`]).
//!
//! A Rayleigh-Benard convection benchmark ([`rb`], [`benchmark`]) exercises
//! the full pipeline under five experimental setups.

pub mod benchmark;
pub mod dmd;
pub mod error;
pub mod fft;
pub mod matrix;
pub mod model;
pub mod observation;
pub mod pod;
pub mod rb;
pub mod rng;
pub mod smc;

pub use error::{Error, Result};
