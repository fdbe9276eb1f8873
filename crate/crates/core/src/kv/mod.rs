//! Semantic sparse KV cache.
//!
//! Each generated chunk is reduced to its salient key/value tokens
//! ([`build_sparse_kv`]) and stored in a [`KVBank`] together with the chunk's
//! prompt embedding. Before generating chunk `c`, [`KVBank::assemble_context`]
//! concatenates the most recent chunks with the `top_l` older chunks whose
//! prompt embeddings are most similar to the current prompt.

mod bank;
mod embed;
mod snapshot;
mod sparse;

pub use bank::{BankEntry, ContextKv, KVBank};
pub use embed::{HashEmbedder, PromptEmbedder};
pub use snapshot::{read_snapshot, write_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};
pub use sparse::{
    build_sparse_kv, cover_count, importance_vector, select_probe_indices, top_indices, SparseKV,
};

use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum KvError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid cache config: {0}")]
    Config(String),
    #[error("degenerate importance")]
    DegenerateImportance,
    #[error("{what}: expected {expected}, got {got}")]
    Mismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid sparse KV: {0}")]
    Invalid(String),
    #[error("bank snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KvError>;

/// Token retention and retrieval parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheConfig {
    /// Fraction of total importance the kept tokens must cover, in `(0, 1]`.
    pub tau: f64,
    /// Number of semantically retrieved chunks.
    pub top_l: usize,
    pub probe_recent: usize,
    pub probe_random: usize,
    /// Number of most recent chunks always included.
    pub seq_ctx_len: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        Self {
            tau: 0.98,
            top_l: 2,
            probe_recent: 64,
            probe_random: 64,
            seq_ctx_len: 2,
        }
    }
}

impl CacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(KvError::Config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if self.probe_recent == 0 || self.probe_random == 0 {
            return Err(KvError::Config("probe counts must be at least 1".into()));
        }
        Ok(())
    }
}
