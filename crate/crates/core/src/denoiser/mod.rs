//! Toy causal block-diffusion denoiser.
//!
//! A chunk of `chunk_len` latent frames is split into `tokens_per_frame`
//! patches per frame. Each transformer block attends over the chunk's own
//! tokens plus the cached context tokens of earlier chunks, which are
//! attend-only. The network predicts the flow-matching velocity, trained
//! with the block forcing loss on teacher context and an adversarial
//! video-level loss on its own rollouts.

mod checkpoint;
mod discriminator;
mod flow;
pub mod gradcheck;
mod model;
mod params;
mod sampler;
mod shape;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use discriminator::{self_forcing_loss, Discriminator, VideoDiscriminator};
pub use flow::{block_forcing_loss, interpolate, semantic_reference, velocity_target};
pub use model::{BlockDenoiser, ForwardOutput, PreparedContext};
pub use params::{ParamStore, Sgd};
pub use sampler::{
    chunk_cache, chunk_noise, denoise_chunk, generate_chunk, generate_video, rollout_with_contexts, ChunkProvenance, SamplerConfig, VideoRollout,
};
pub use shape::latent_shape;
pub use train::{
    bf_loss_for_chunk, bf_samples, mean_bf_loss, teacher_contexts, train_step, BfSample, LossReport, TrainConfig, TrainState,
    TrainVideo,
};

use crate::kv::KvError;
use crate::schedule::ScheduleError;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum DenoiserError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error("invalid denoiser config: {0}")]
    Config(String),
    #[error("context has {got_heads} heads of dim {got_dim}, model expects {heads} of dim {dim}")]
    ContextMismatch {
        heads: usize,
        dim: usize,
        got_heads: usize,
        got_dim: usize,
    },
    #[error("t = {0} is outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("{0}")]
    Invalid(String),
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DenoiserError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub head_dim: usize,
    /// Latent frames per chunk.
    pub chunk_len: usize,
    /// Flattened size of one latent frame.
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub tokens_per_frame: usize,
    pub ff_dim: usize,
    /// Weight of the semantic reference in the block forcing target.
    pub gamma: f64,
    pub sample_steps: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            head_dim: 16,
            chunk_len: 8,
            latent_dim: 64,
            embed_dim: 64,
            tokens_per_frame: 4,
            ff_dim: 128,
            gamma: 0.5,
            sample_steps: 8,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("head_dim", self.head_dim),
            ("chunk_len", self.chunk_len),
            ("latent_dim", self.latent_dim),
            ("embed_dim", self.embed_dim),
            ("tokens_per_frame", self.tokens_per_frame),
            ("ff_dim", self.ff_dim),
            ("sample_steps", self.sample_steps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(DenoiserError::Config(format!("{name} must be >= 1")));
        }
        if self.d_model != self.n_heads * self.head_dim {
            return Err(DenoiserError::Config(format!(
                "d_model ({}) must equal n_heads * head_dim ({} * {})",
                self.d_model, self.n_heads, self.head_dim
            )));
        }
        if self.latent_dim % self.tokens_per_frame != 0 {
            return Err(DenoiserError::Config(format!(
                "latent_dim ({}) must be divisible by tokens_per_frame ({})",
                self.latent_dim, self.tokens_per_frame
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DenoiserError::Config(format!("gamma must be in [0, 1], got {}", self.gamma)));
        }
        Ok(())
    }

    /// Tokens per chunk.
    pub fn tokens(&self) -> usize {
        self.chunk_len * self.tokens_per_frame
    }

    pub fn patch_dim(&self) -> usize {
        self.latent_dim / self.tokens_per_frame
    }

    /// Head slots in a cached chunk: one per (layer, head).
    pub fn kv_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }
}

/// One chunk of latent frames, `[chunk_len, latent_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentChunk {
    pub latents: Tensor,
    pub prompt_embedding: Tensor,
    pub chunk_index: usize,
}
