//! File formats, checkpoints, run orchestration and the command-line driver
//! on top of `gmcl-core`.

pub mod checkpoint;
pub mod error;
pub mod export;
pub mod idx;
pub mod manifest;
pub mod metrics_log;
pub mod pnm;
pub mod runner;

pub use error::{GmclError, Result};
