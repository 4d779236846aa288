//! Batch front end for the needle pose estimation library: dataset
//! synthesis, noise calibration, tracking, and result aggregation.
//!
//! The binary wires these modules to a command-line interface; they are
//! exposed as a library so integration tests can drive the same code paths
//! directly.

pub mod error;
pub mod evalcmd;
pub mod schema;
pub mod tracker;
