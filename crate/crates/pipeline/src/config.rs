//! Run configuration files.
//!
//! A TOML file with one table per module. Every field has a default and
//! unknown keys are rejected, so a typo fails the run instead of silently
//! falling back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use lvcore::denoiser::{DenoiserConfig, SamplerConfig, TrainConfig};
use lvcore::kv::CacheConfig;
use lvcore::schedule::{ScheduleKind, ScheduleParams};
use lvde::VdeConfig;

use crate::corpus::{CorpusSpec, LATENT_DIM};
use crate::error::{PipelineError, Result};

fn cfg_err(e: impl ToString) -> PipelineError {
    PipelineError::Config(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub head_dim: usize,
    pub chunk_len: usize,
    pub latent_dim: usize,
    pub embed_dim: usize,
    pub tokens_per_frame: usize,
    pub ff_dim: usize,
    pub gamma: f64,
    pub sample_steps: usize,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self::from(DenoiserConfig::default())
    }
}

impl From<DenoiserConfig> for DenoiserSection {
    fn from(c: DenoiserConfig) -> Self {
        Self {
            d_model: c.d_model,
            n_heads: c.n_heads,
            n_layers: c.n_layers,
            head_dim: c.head_dim,
            chunk_len: c.chunk_len,
            latent_dim: c.latent_dim,
            embed_dim: c.embed_dim,
            tokens_per_frame: c.tokens_per_frame,
            ff_dim: c.ff_dim,
            gamma: c.gamma,
            sample_steps: c.sample_steps,
        }
    }
}

impl DenoiserSection {
    pub fn to_config(&self) -> DenoiserConfig {
        DenoiserConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            head_dim: self.head_dim,
            chunk_len: self.chunk_len,
            latent_dim: self.latent_dim,
            embed_dim: self.embed_dim,
            tokens_per_frame: self.tokens_per_frame,
            ff_dim: self.ff_dim,
            gamma: self.gamma,
            sample_steps: self.sample_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub kind: String,
    pub eps_min: f64,
    pub eps_max: f64,
    pub n_chunks: usize,
    pub alpha: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let p = ScheduleParams::default();
        Self {
            kind: p.kind.as_str().into(),
            eps_min: p.eps_min,
            eps_max: p.eps_max,
            n_chunks: p.n_chunks,
            alpha: p.alpha,
        }
    }
}

impl ScheduleSection {
    pub fn to_params(&self) -> Result<ScheduleParams> {
        let kind: ScheduleKind = self.kind.parse()?;
        Ok(ScheduleParams {
            kind,
            eps_min: self.eps_min,
            eps_max: self.eps_max,
            n_chunks: self.n_chunks,
            alpha: self.alpha,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheSection {
    pub tau: f64,
    pub top_l: usize,
    pub probe_recent: usize,
    pub probe_random: usize,
    pub seq_ctx_len: usize,
    /// Boundary noise shuffle window in frames; 0 turns shuffling off.
    pub shuffle_window: usize,
    /// Maximum bank entries; 0 means unbounded.
    pub bank_capacity: usize,
}

impl Default for CacheSection {
    fn default() -> Self {
        let c = CacheConfig::default();
        let s = SamplerConfig::default();
        Self {
            tau: c.tau,
            top_l: c.top_l,
            probe_recent: c.probe_recent,
            probe_random: c.probe_random,
            seq_ctx_len: c.seq_ctx_len,
            shuffle_window: s.shuffle_window,
            bank_capacity: s.bank_capacity.unwrap_or(0),
        }
    }
}

impl CacheSection {
    pub fn to_config(&self) -> CacheConfig {
        CacheConfig {
            tau: self.tau,
            top_l: self.top_l,
            probe_recent: self.probe_recent,
            probe_random: self.probe_random,
            seq_ctx_len: self.seq_ctx_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub lr: f64,
    pub disc_lr: f64,
    pub sf_weight: f64,
    pub rollout_chunks: usize,
    /// Gradient norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub disc_hidden: usize,
    /// Draws averaged when measuring the held-out block forcing loss.
    pub eval_draws: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            steps: 300,
            lr: t.lr,
            disc_lr: t.disc_lr,
            sf_weight: t.sf_weight,
            rollout_chunks: t.rollout_chunks,
            clip_norm: t.clip_norm.unwrap_or(0.0),
            disc_hidden: t.disc_hidden,
            eval_draws: 4,
        }
    }
}

impl TrainSection {
    pub fn to_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            disc_lr: self.disc_lr,
            sf_weight: self.sf_weight,
            rollout_chunks: self.rollout_chunks,
            clip_norm: (self.clip_norm > 0.0).then_some(self.clip_norm),
            disc_hidden: self.disc_hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    /// Chunks to generate, prompted with the corpus scene's template; 0
    /// uses the corpus chunk count.
    pub n_chunks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    pub schedules: Vec<String>,
    pub top_l: Vec<usize>,
    /// Empty lists fall back to the `[cache]` value.
    pub taus: Vec<f64>,
    pub shuffle_windows: Vec<usize>,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            schedules: ScheduleKind::ALL.iter().map(|k| k.as_str().to_string()).collect(),
            top_l: vec![0, 2],
            taus: Vec::new(),
            shuffle_windows: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub denoiser: DenoiserSection,
    pub schedule: ScheduleSection,
    pub cache: CacheSection,
    pub train: TrainSection,
    pub generate: GenerateSection,
    pub ablate: AblateSection,
    pub vde: VdeConfig,
    pub corpus: CorpusSpec,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::file(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            PipelineError::Config(msg) => PipelineError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn denoiser_config(&self) -> DenoiserConfig {
        self.denoiser.to_config()
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig {
            schedule: self.schedule.to_params()?,
            cache: self.cache.to_config(),
            shuffle_window: self.cache.shuffle_window,
            bank_capacity: (self.cache.bank_capacity > 0).then_some(self.cache.bank_capacity),
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.to_config()
    }

    /// Chunks per generated video.
    pub fn generate_chunks(&self) -> usize {
        if self.generate.n_chunks == 0 {
            self.corpus.n_chunks
        } else {
            self.generate.n_chunks
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.denoiser_config();
        d.validate().map_err(cfg_err)?;
        let sampler = self.sampler_config()?;
        sampler.schedule.validate()?;
        sampler.cache.validate().map_err(cfg_err)?;
        self.train_config().validate().map_err(cfg_err)?;
        self.vde.validate().map_err(cfg_err)?;
        self.corpus.validate()?;
        if d.latent_dim != LATENT_DIM {
            return Err(cfg_err(format!(
                "denoiser.latent_dim must be {LATENT_DIM} to match corpus latents, got {}",
                d.latent_dim
            )));
        }
        if sampler.shuffle_window == 0 {
            return Err(cfg_err("cache.shuffle_window must be >= 1"));
        }
        if sampler.shuffle_window > d.chunk_len {
            return Err(cfg_err(format!(
                "cache.shuffle_window {} exceeds denoiser.chunk_len {}",
                sampler.shuffle_window, d.chunk_len
            )));
        }
        for (what, n) in [("corpus.n_chunks", self.corpus.n_chunks), ("generate.n_chunks", self.generate_chunks())] {
            if n > sampler.schedule.n_chunks {
                return Err(cfg_err(format!(
                    "{what} {n} exceeds schedule.n_chunks {}",
                    sampler.schedule.n_chunks
                )));
            }
        }
        if self.corpus.frames_per_chunk != d.chunk_len {
            return Err(cfg_err(format!(
                "corpus.frames_per_chunk {} must equal denoiser.chunk_len {}",
                self.corpus.frames_per_chunk, d.chunk_len
            )));
        }
        if self.train.eval_draws == 0 {
            return Err(cfg_err("train.eval_draws must be >= 1"));
        }
        for k in &self.ablate.schedules {
            k.parse::<ScheduleKind>()?;
        }
        if self.ablate.schedules.is_empty() || self.ablate.top_l.is_empty() {
            return Err(cfg_err("ablate.schedules and ablate.top_l must be non-empty"));
        }
        for &tau in &self.ablate.taus {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(cfg_err(format!("ablate.taus entry {tau} outside (0, 1]")));
            }
        }
        if let Some(s) = self.ablate.shuffle_windows.iter().find(|s| **s == 0 || **s > d.chunk_len) {
            return Err(cfg_err(format!("ablate.shuffle_windows entry {s} outside 1..={}", d.chunk_len)));
        }
        Ok(())
    }
}
