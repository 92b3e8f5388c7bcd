//! Model merging with weight-space kinship tracking.
//!
//! Modules build bottom-up: [`tensor_store`] reads and writes checkpoints,
//! [`merge`] combines them, [`kinship`] compares their deltas against a base,
//! [`metrics`] scores them, [`eval`] runs benchmarks and [`evolution`] drives
//! the generational search.

pub mod cli;
pub mod error;
pub mod eval;
pub mod evolution;
pub mod kinship;
pub mod merge;
pub mod metrics;
pub mod rng;
pub mod tensor_store;

pub use error::{Error, Result};
