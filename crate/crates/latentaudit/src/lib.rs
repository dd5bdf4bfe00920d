//! File formats, cohort IO and the staged pipeline around `latentaudit-core`.
//!
//! The core crate holds the numerics; this crate reads manifests and images,
//! writes checkpoints, reports and montages, and runs the restartable stages
//! behind the `latentaudit` binary.

pub mod artifacts;
pub mod cohort;
pub mod config;
pub mod error;
pub mod evaluate;
pub mod imageio;
pub mod manifest_io;
pub mod pipeline;
pub mod render;

pub use error::{AuditError, Result};
