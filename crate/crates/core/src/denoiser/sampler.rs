use super::{BlockDenoiser, DenoiserError, LatentChunk, PreparedContext, Result};
use crate::kv::{build_sparse_kv, CacheConfig, ContextKv, KVBank};
use crate::rng::RandomSource;
use crate::schedule::{base_noise, shuffle_boundary, ScheduleParams};
use crate::tensor::Tensor;

const SHUFFLE_STREAM: u64 = 0x7368_7566;
const PROBE_STREAM: u64 = 0x7072_6f62;

/// Everything the chunk loop needs beyond the network itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub schedule: ScheduleParams,
    pub cache: CacheConfig,
    /// Boundary shuffle window in frames; 0 disables shuffling.
    pub shuffle_window: usize,
    /// Maximum number of bank entries; `None` keeps every chunk.
    pub bank_capacity: Option<usize>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            schedule: ScheduleParams::default(),
            cache: CacheConfig::default(),
            shuffle_window: 4,
            bank_capacity: None,
        }
    }
}

/// Which earlier chunks conditioned one generated chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkProvenance {
    pub chunk: usize,
    pub seq_ctx: Vec<usize>,
    pub semantic: Vec<usize>,
    pub context_tokens: usize,
    pub t_start: f64,
}

impl ChunkProvenance {
    pub fn context_chunks(&self) -> Vec<usize> {
        self.seq_ctx.iter().chain(&self.semantic).copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct VideoRollout {
    pub chunks: Vec<LatentChunk>,
    pub provenance: Vec<ChunkProvenance>,
    pub bank: KVBank,
    pub peak_bank_entries: usize,
    /// Prepared context each chunk was sampled with.
    pub contexts: Vec<PreparedContext>,
}

fn frame_noises(rng: &RandomSource, chunk: usize, frames: usize, dim: usize) -> Vec<Tensor> {
    (0..frames).map(|f| base_noise(rng, chunk, f, &[dim])).collect()
}

/// Initial noise of `chunk`, `[frames, dim]`: per-frame base noises with
/// the head shuffled against the previous chunk and the tail shuffled
/// against the next one. Both boundaries are always applied, so a chunk's
/// noise never depends on how many chunks follow it.
pub fn chunk_noise(rng: &RandomSource, chunk: usize, frames: usize, dim: usize, window: usize) -> Result<Tensor> {
    let mut cur = frame_noises(rng, chunk, frames, dim);
    if window > 0 {
        if chunk > 0 {
            let prev = frame_noises(rng, chunk - 1, frames, dim);
            let mut b = rng.split(&[SHUFFLE_STREAM, (chunk - 1) as u64]);
            cur = shuffle_boundary(&prev, &cur, window, &mut b)?.1;
        }
        let next = frame_noises(rng, chunk + 1, frames, dim);
        let mut b = rng.split(&[SHUFFLE_STREAM, chunk as u64]);
        cur = shuffle_boundary(&cur, &next, window, &mut b)?.0;
    }
    let refs: Vec<&Tensor> = cur.iter().collect();
    Ok(Tensor::concat(&refs, 0)?.reshape(&[frames, dim])?)
}

/// Euler integration of `dx/dt = v` from `t_start` down to 0 in the
/// configured number of uniform steps. With `track` false each step is
/// detached so no graph is retained.
pub fn denoise_chunk(
    net: &BlockDenoiser,
    noise: &Tensor,
    t_start: f64,
    ctx: &PreparedContext,
    prompt: &Tensor,
    track: bool,
) -> Result<Tensor> {
    if !(t_start > 0.0 && t_start <= 1.0) {
        return Err(DenoiserError::TimeOutOfRange(t_start));
    }
    let steps = net.config().sample_steps;
    let dt = t_start / steps as f64;
    let mut x = noise.clone();
    for i in 0..steps {
        let t = t_start - i as f64 * dt;
        let v = net.forward(&x, t, ctx, prompt)?;
        x = x.sub(&v.scale(dt)?)?;
        if !track {
            x = x.detach();
        }
    }
    Ok(x)
}

/// Samples one chunk from fresh Gaussian noise drawn from `rng`.
pub fn generate_chunk(
    net: &BlockDenoiser,
    ctx: &PreparedContext,
    prompt: &Tensor,
    t_start: f64,
    chunk_index: usize,
    rng: &mut RandomSource,
) -> Result<LatentChunk> {
    let cfg = net.config();
    let noise = Tensor::new(&[cfg.chunk_len, cfg.latent_dim], rng.normals(cfg.chunk_len * cfg.latent_dim))?;
    let latents = denoise_chunk(net, &noise, t_start, ctx, prompt, false)?;
    Ok(LatentChunk {
        latents,
        prompt_embedding: prompt.clone(),
        chunk_index,
    })
}

/// Retained KV of a finished chunk, computed at `t = 0`.
pub fn chunk_cache(
    net: &BlockDenoiser,
    latents: &Tensor,
    ctx: &PreparedContext,
    prompt: &Tensor,
    cache: &CacheConfig,
    rng: &RandomSource,
    chunk: usize,
) -> Result<crate::kv::SparseKV> {
    let out = net.forward_kv(&latents.detach(), 0.0, ctx, prompt)?;
    let mut probe_rng = rng.split(&[PROBE_STREAM, chunk as u64]);
    Ok(build_sparse_kv(&out.keys, &out.values, &out.queries, cache, &mut probe_rng)?)
}

/// Generates `n` chunks, each conditioned on the bank of earlier ones.
///
/// All randomness is derived from `rng` by stream splitting, so chunk `c`
/// is bit-identical however many chunks are generated after it.
pub fn generate_video(
    net: &BlockDenoiser,
    prompts: &[Tensor],
    n: usize,
    sampler: &SamplerConfig,
    rng: &RandomSource,
) -> Result<VideoRollout> {
    rollout(net, prompts, n, sampler, rng, false)
}

pub(crate) fn rollout(
    net: &BlockDenoiser,
    prompts: &[Tensor],
    n: usize,
    sampler: &SamplerConfig,
    rng: &RandomSource,
    track: bool,
) -> Result<VideoRollout> {
    if prompts.len() != n {
        return Err(DenoiserError::Invalid(format!("{} prompts for {n} chunks", prompts.len())));
    }
    if n > sampler.schedule.n_chunks {
        return Err(DenoiserError::Invalid(format!(
            "{n} chunks requested but the schedule covers {}",
            sampler.schedule.n_chunks
        )));
    }
    sampler.cache.validate()?;
    let cfg = *net.config();
    if sampler.shuffle_window > cfg.chunk_len {
        return Err(DenoiserError::Invalid(format!(
            "shuffle window {} exceeds chunk length {}",
            sampler.shuffle_window, cfg.chunk_len
        )));
    }
    let mut bank = KVBank::new(sampler.bank_capacity);
    let mut out = VideoRollout {
        chunks: Vec::with_capacity(n),
        provenance: Vec::with_capacity(n),
        bank: KVBank::new(sampler.bank_capacity),
        peak_bank_entries: 0,
        contexts: Vec::with_capacity(n),
    };
    for (c, prompt) in prompts.iter().enumerate() {
        let t_start = sampler.schedule.start_time(c)?;
        let ctx_kv: ContextKv = bank.assemble_context(c, prompt.data(), &sampler.cache)?;
        let ctx = PreparedContext::new(&ctx_kv, &cfg)?;
        let noise = chunk_noise(rng, c, cfg.chunk_len, cfg.latent_dim, sampler.shuffle_window)?;
        let latents = denoise_chunk(net, &noise, t_start, &ctx, prompt, track)?;
        let kv = chunk_cache(net, &latents, &ctx, prompt, &sampler.cache, rng, c)?;
        bank.insert(c, kv, prompt.to_vec())?;
        out.peak_bank_entries = out.peak_bank_entries.max(bank.len());
        out.provenance.push(ChunkProvenance {
            chunk: c,
            context_tokens: ctx_kv.tokens(),
            seq_ctx: ctx_kv.seq_ctx,
            semantic: ctx_kv.semantic,
            t_start,
        });
        out.contexts.push(ctx);
        out.chunks.push(LatentChunk {
            latents,
            prompt_embedding: prompt.clone(),
            chunk_index: c,
        });
    }
    out.bank = bank;
    Ok(out)
}

/// Tracked rollout with fixed, precomputed contexts; the differentiable
/// part of a self rollout.
pub fn rollout_with_contexts(
    net: &BlockDenoiser,
    prompts: &[Tensor],
    contexts: &[PreparedContext],
    noises: &[Tensor],
    t_starts: &[f64],
) -> Result<Vec<Tensor>> {
    let n = prompts.len();
    if contexts.len() != n || noises.len() != n || t_starts.len() != n {
        return Err(DenoiserError::Invalid("rollout inputs must have equal lengths".into()));
    }
    (0..n)
        .map(|c| denoise_chunk(net, &noises[c], t_starts[c], &contexts[c], &prompts[c], true))
        .collect()
}
