//! scalelab: a desk-scale laboratory for comparing strong and weak
//! scaling of data-parallel synchronous SGD.
//!
//! The workload is a mixture-density autoencoder trained on synthetic
//! voxel volumes. Logical workers run as threads inside one process and
//! exchange gradients through deterministic collectives, so the strong
//! scaling claim — that adding workers leaves the optimization path
//! bitwise unchanged — is testable as exact weight equality.

pub mod error;
pub mod mixture;
pub mod model;
pub mod numerics;

pub use error::{DivergenceCause, Error, Result};
