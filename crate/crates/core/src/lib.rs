//! Simulator for collaborative learning with learned pairwise collaboration
//! weights (CoBo), its baselines, and numeric checks of its convergence bounds
//! on synthetic tasks.

pub mod algorithms;
pub mod collab;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod rng;
pub mod tasks;
pub mod theory;
pub mod vector;

pub use error::{Error, Result};
pub use vector::Vector;
