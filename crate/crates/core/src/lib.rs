//! Representation-driven policy search.
//!
//! Policies are embedded into a learned latent space by a variational
//! encoder whose return decoder is linear, so that a linear bandit over the
//! latent features can steer exploration in policy space.

pub mod config;
pub mod decision_set;
pub mod drivers;
pub mod environments;
pub mod error;
pub mod harness;
pub mod linear_bandit;
pub mod metrics;
pub mod neuralnet;
pub mod numerics;
pub mod policy;
pub mod representation;

pub use error::{Error, Result};
