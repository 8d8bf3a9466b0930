//! Networks and optimizer.

pub mod adamw;
pub mod checkpoint;
pub mod mlp;
pub mod ngm;

use std::sync::atomic::{AtomicU64, Ordering};

pub use adamw::AdamW;
pub use checkpoint::{read_checkpoint, write_checkpoint, Architecture, CheckpointHeader};
pub use mlp::{Mlp, MlpCache};
pub use ngm::{NgmCache, NgmDrift};

static VERSION: AtomicU64 = AtomicU64::new(1);

/// Fresh tag for a parameter state; caches remember the tag they were built with.
pub(crate) fn next_version() -> u64 {
    VERSION.fetch_add(1, Ordering::Relaxed)
}
