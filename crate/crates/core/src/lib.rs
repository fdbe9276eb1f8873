//! Core of the long-video block-diffusion toolkit.
//!
//! * [`tensor`]: dense `f64` tensors with reverse-mode gradients.
//! * [`rng`]: seeded, splittable random streams.
//! * [`kv`]: salient-token sparse KV caches and the semantic KV bank.
//! * [`schedule`]: per-chunk noise levels and boundary noise shuffling.
//! * [`denoiser`]: the toy causal block denoiser, its losses, trainer and sampler.

pub mod denoiser;
pub mod kv;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use rng::RandomSource;
pub use tensor::{Mask, Tensor, TensorError};
