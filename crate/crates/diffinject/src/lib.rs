//! File formats, pipeline stages and the command-line driver around
//! [`diffinject_core`].
//!
//! Everything that touches the filesystem, threads or the clock lives here:
//! checkpoints, the on-disk capture cache, JSONL datasets, TOML
//! configuration, manifests, event logs and wall-clock timing.

pub mod cache;
pub mod checkpoint;
pub mod cli;
pub mod config;
mod error;
pub mod events;
pub mod jsonl;
pub mod manifest;
pub mod pipeline;
pub mod timing;

pub use diffinject_core as core;
pub use error::{Error, LineError, Result};
