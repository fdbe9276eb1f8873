use std::collections::BTreeSet;

use super::sampler::{chunk_cache, rollout};
use super::{
    block_forcing_loss, interpolate, self_forcing_loss, semantic_reference, BlockDenoiser, DenoiserError,
    Discriminator, PreparedContext, Result, SamplerConfig, Sgd,
};
use crate::kv::KVBank;
use crate::rng::RandomSource;
use crate::tensor::Tensor;

const BF_STREAM: u64 = 0x6266;
const SF_STREAM: u64 = 0x7366;

/// Ground-truth chunks of one training video with their prompt embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainVideo {
    pub chunks: Vec<Tensor>,
    pub prompts: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub disc_lr: f64,
    /// Weight of the adversarial generator term.
    pub sf_weight: f64,
    /// Chunks per self rollout; 0 disables the adversarial term.
    pub rollout_chunks: usize,
    pub clip_norm: Option<f64>,
    pub disc_hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            disc_lr: 0.05,
            sf_weight: 0.1,
            rollout_chunks: 2,
            clip_norm: Some(1.0),
            disc_hidden: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr", self.lr), ("disc_lr", self.disc_lr), ("sf_weight", self.sf_weight)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(DenoiserError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return Err(DenoiserError::Config(format!("clip_norm must be > 0, got {c}")));
            }
        }
        if self.disc_hidden == 0 {
            return Err(DenoiserError::Config("disc_hidden must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub l_bf: f64,
    pub loss_g: f64,
    pub loss_d: f64,
}

/// One block forcing term: everything needed to recompute the loss for a
/// chunk as a function of the generator parameters.
#[derive(Debug, Clone)]
pub struct BfSample {
    pub x_start: Tensor,
    pub eps: Tensor,
    pub t: f64,
    pub ctx: PreparedContext,
    pub prompt: Tensor,
    pub x_cond: Tensor,
}

pub fn bf_loss_for_chunk(net: &BlockDenoiser, s: &BfSample) -> Result<Tensor> {
    let x_t = interpolate(&s.x_start, &s.eps, s.t)?;
    let v = net.forward(&x_t, s.t, &s.ctx, &s.prompt)?;
    block_forcing_loss(&v, &s.eps, &s.x_cond, net.config().gamma)
}

/// Teacher context for every chunk of `video`, built from ground-truth
/// chunks, plus each chunk's semantic reference over the `top_l` most
/// similar earlier ground-truth chunks.
pub fn teacher_contexts(
    net: &BlockDenoiser,
    video: &TrainVideo,
    sampler: &SamplerConfig,
    rng: &RandomSource,
) -> Result<Vec<(PreparedContext, Tensor)>> {
    let cfg = *net.config();
    let mut bank = KVBank::new(None);
    let mut out = Vec::with_capacity(video.chunks.len());
    for (c, (chunk, prompt)) in video.chunks.iter().zip(&video.prompts).enumerate() {
        let ctx = PreparedContext::new(&bank.assemble_context(c, prompt.data(), &sampler.cache)?, &cfg)?;
        let similar = bank.retrieve_semantic(prompt.data(), sampler.cache.top_l, &BTreeSet::new())?;
        let past: Vec<&Tensor> = similar.iter().map(|&i| &video.chunks[i]).collect();
        let x_cond = semantic_reference(&past, cfg.chunk_len, cfg.latent_dim)?;
        let kv = chunk_cache(net, chunk, &ctx, prompt, &sampler.cache, rng, c)?;
        bank.insert(c, kv, prompt.to_vec())?;
        out.push((ctx, x_cond));
    }
    Ok(out)
}

/// Block forcing samples for every chunk of every video. Chunk `c` draws
/// `t` uniformly from `(0, start_time(c)]`.
pub fn bf_samples(
    net: &BlockDenoiser,
    videos: &[TrainVideo],
    sampler: &SamplerConfig,
    rng: &RandomSource,
) -> Result<Vec<BfSample>> {
    let cfg = *net.config();
    let mut out = Vec::new();
    for (vi, video) in videos.iter().enumerate() {
        if video.chunks.len() != video.prompts.len() || video.chunks.is_empty() {
            return Err(DenoiserError::Invalid("training video needs one prompt per chunk".into()));
        }
        let vrng = rng.split(&[vi as u64]);
        let contexts = teacher_contexts(net, video, sampler, &vrng)?;
        for (c, (ctx, x_cond)) in contexts.into_iter().enumerate() {
            let mut r = vrng.split(&[BF_STREAM, c as u64]);
            let t = sampler.schedule.start_time(c)? * (1.0 - r.uniform());
            let eps = Tensor::new(&[cfg.chunk_len, cfg.latent_dim], r.normals(cfg.chunk_len * cfg.latent_dim))?;
            out.push(BfSample {
                x_start: video.chunks[c].clone(),
                eps,
                t,
                ctx,
                prompt: video.prompts[c].clone(),
                x_cond,
            });
        }
    }
    Ok(out)
}

/// Mean block forcing loss over `samples`.
pub fn mean_bf_loss(net: &BlockDenoiser, samples: &[BfSample]) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for s in samples {
        let l = bf_loss_for_chunk(net, s)?;
        acc = Some(match acc {
            Some(a) => a.add(&l)?,
            None => l,
        });
    }
    let total = acc.ok_or_else(|| DenoiserError::Invalid("no training chunks".into()))?;
    Ok(total.scale(1.0 / samples.len() as f64)?)
}

/// Generator, discriminator and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub net: BlockDenoiser,
    pub disc: Discriminator,
    pub step: u64,
}

impl TrainState {
    pub fn new(net: BlockDenoiser, cfg: &TrainConfig, rng: &mut RandomSource) -> Result<Self> {
        let disc = Discriminator::new(net.config().latent_dim, cfg.disc_hidden, rng)?;
        Ok(Self { net, disc, step: 0 })
    }
}

fn concat_frames(chunks: &[Tensor]) -> Result<Tensor> {
    let refs: Vec<&Tensor> = chunks.iter().collect();
    Ok(Tensor::concat(&refs, 0)?)
}

/// One simultaneous update of generator and discriminator.
///
/// The generator minimizes `L_BF + sf_weight * loss_g`, with `L_BF` on
/// teacher contexts and `loss_g` on a self rollout of the first
/// `rollout_chunks` chunks of each video; the discriminator minimizes
/// `loss_d`. On a non-finite loss or gradient nothing is updated.
pub fn train_step(
    state: &mut TrainState,
    videos: &[TrainVideo],
    sampler: &SamplerConfig,
    cfg: &TrainConfig,
    rng: &RandomSource,
) -> Result<LossReport> {
    cfg.validate()?;
    let step_rng = rng.split(&[state.step]);
    state.net.params().zero_grad();
    state.disc.params().zero_grad();

    let samples = bf_samples(&state.net, videos, sampler, &step_rng.split(&[BF_STREAM]))?;
    let l_bf = mean_bf_loss(&state.net, &samples)?;

    let mut g_total = l_bf.clone();
    let mut report = LossReport {
        l_bf: l_bf.item(),
        loss_g: 0.0,
        loss_d: 0.0,
    };
    let mut d_loss = None;
    if cfg.rollout_chunks > 0 {
        let sf_rng = step_rng.split(&[SF_STREAM]);
        let mut real = Vec::with_capacity(videos.len());
        let mut fake = Vec::with_capacity(videos.len());
        for (vi, video) in videos.iter().enumerate() {
            let n = cfg.rollout_chunks.min(video.chunks.len());
            let r = rollout(&state.net, &video.prompts[..n], n, sampler, &sf_rng.split(&[vi as u64]), true)?;
            let chunks: Vec<Tensor> = r.chunks.into_iter().map(|c| c.latents).collect();
            fake.push(concat_frames(&chunks)?);
            real.push(concat_frames(&video.chunks[..n])?);
        }
        let (_, loss_g) = self_forcing_loss(&state.disc, &real, &fake)?;
        let detached: Vec<Tensor> = fake.iter().map(Tensor::detach).collect();
        let (loss_d, _) = self_forcing_loss(&state.disc, &real, &detached)?;
        report.loss_g = loss_g.item();
        report.loss_d = loss_d.item();
        g_total = g_total.add(&loss_g.scale(cfg.sf_weight)?)?;
        d_loss = Some(loss_d);
    }
    if ![report.l_bf, report.loss_g, report.loss_d].iter().all(|v| v.is_finite()) {
        return Err(DenoiserError::NonFiniteLoss);
    }

    let mut g_params = state.net.params().clone();
    let mut d_params = state.disc.params().clone();
    g_total.backward()?;
    let g_opt = Sgd {
        lr: cfg.lr,
        clip_norm: cfg.clip_norm,
    };
    g_opt.step(&mut g_params)?;
    if let Some(loss_d) = d_loss {
        state.disc.params().zero_grad();
        loss_d.backward()?;
        let d_opt = Sgd {
            lr: cfg.disc_lr,
            clip_norm: cfg.clip_norm,
        };
        d_opt.step(&mut d_params)?;
    }

    *state.net.params_mut() = g_params;
    *state.disc.params_mut() = d_params;
    state.step += 1;
    Ok(report)
}
