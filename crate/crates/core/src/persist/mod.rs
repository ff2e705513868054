//! Configuration files and checkpoints.

mod checkpoint;
mod codec;
mod config;

pub use checkpoint::{config_hash, Checkpoint, ModelSpec, OptimizerBlob, FORMAT_VERSION, MAGIC};
pub use config::{canonical_text, ConfigFile};
