//! evosquish builds SqueezeNet-style macroarchitectures as typed layer
//! graphs, retargets them to fewer output classes, and evolves progressively
//! smaller offspring networks by stochastic synaptogenesis under a
//! resource-starvation factor, training and measuring each generation at
//! desk scale.

pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod evolve;
pub mod graph;
pub mod reporting;
pub mod rng;

pub use error::{Error, Result};
