//! Synthetic video corpus.
//!
//! Each video is `n_chunks * frames_per_chunk` RGB frames of 32x32 pixels:
//! a checkered, tinted background with one colored 8x8 square. Latents are
//! the frames' luma averaged over 4x4 boxes (an 8x8 grid, 64 values) and
//! mapped from `[0, 1]` to `[-1, 1]`.
//!
//! Drift scenes degrade the static scene once per chunk: `blur_drift`
//! applies a Gaussian blur of width `drift * c` to chunk `c`, and
//! `brightness_drift` lifts the frames toward white so that the frame mean
//! rises by exactly `drift` per chunk.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use lvcore::denoiser::TrainVideo;
use lvcore::kv::PromptEmbedder;
use lvcore::{RandomSource, Tensor};
use lvde::FrameSequence;

use crate::error::{PipelineError, Result};

pub const FRAME_SIZE: usize = 32;
pub const CHANNELS: usize = 3;
const SQUARE: usize = 8;
const BOX: usize = 4;
pub const LATENT_SIDE: usize = FRAME_SIZE / BOX;
pub const LATENT_DIM: usize = LATENT_SIDE * LATENT_SIDE;
const CORPUS_STREAM: u64 = 0x636f_7270;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    MovingSquare,
    Static,
    BlurDrift,
    BrightnessDrift,
}

impl SceneKind {
    pub const ALL: [SceneKind; 4] = [Self::MovingSquare, Self::Static, Self::BlurDrift, Self::BrightnessDrift];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::MovingSquare => "moving_square",
            Self::Static => "static",
            Self::BlurDrift => "blur_drift",
            Self::BrightnessDrift => "brightness_drift",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneKind {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PipelineError::Config(format!("unknown scene kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub scene: SceneKind,
    pub n_videos: usize,
    pub n_chunks: usize,
    pub frames_per_chunk: usize,
    /// Per-chunk degradation step; unused by `static` and `moving_square`.
    pub drift: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            scene: SceneKind::MovingSquare,
            n_videos: 2,
            n_chunks: 4,
            frames_per_chunk: 8,
            drift: 0.05,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_videos == 0 || self.n_chunks == 0 || self.frames_per_chunk == 0 {
            return Err(PipelineError::Config(
                "corpus n_videos, n_chunks and frames_per_chunk must be >= 1".into(),
            ));
        }
        if !(self.drift >= 0.0 && self.drift.is_finite()) {
            return Err(PipelineError::Config(format!("corpus drift must be >= 0, got {}", self.drift)));
        }
        Ok(())
    }

    pub fn frames_per_video(&self) -> usize {
        self.n_chunks * self.frames_per_chunk
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo {
    pub frames: FrameSequence,
    /// One `[frames_per_chunk, LATENT_DIM]` tensor per chunk.
    pub latents: Vec<Tensor>,
    pub prompts: Vec<String>,
}

impl SynthVideo {
    pub fn train_video(&self, embedder: &dyn PromptEmbedder) -> TrainVideo {
        TrainVideo {
            chunks: self.latents.clone(),
            prompts: self.prompts.iter().map(|p| embed_prompt(embedder, p)).collect(),
        }
    }
}

pub fn embed_prompt(embedder: &dyn PromptEmbedder, text: &str) -> Tensor {
    let e = embedder.embed(text);
    Tensor::new(&[e.len()], e).expect("finite embedding")
}

fn phase(k: usize, n: usize) -> &'static str {
    match 3 * k / n {
        0 => "opening",
        1 => "middle",
        _ => "closing",
    }
}

pub fn prompt(scene: SceneKind, k: usize, n_chunks: usize) -> String {
    format!("chunk {k}: {scene} {}", phase(k, n_chunks))
}

/// Scene layout of one video, drawn once per video.
struct Layout {
    tint: [f64; 3],
    color: [f64; 3],
    y: usize,
    x: usize,
}

impl Layout {
    fn draw(rng: &mut RandomSource) -> Self {
        let mut tint = [0.0; 3];
        let mut color = [0.0; 3];
        for c in 0..3 {
            tint[c] = 0.05 + 0.1 * rng.uniform();
            color[c] = 0.6 + 0.35 * rng.uniform();
        }
        let span = FRAME_SIZE - SQUARE + 1;
        Self {
            tint,
            color,
            y: rng.below(span),
            x: rng.below(span),
        }
    }

    /// Frame with the square's top-left corner at `(y, x)`.
    fn frame(&self, y: usize, x: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(FRAME_SIZE * FRAME_SIZE * CHANNELS);
        for r in 0..FRAME_SIZE {
            for c in 0..FRAME_SIZE {
                let inside = (y..y + SQUARE).contains(&r) && (x..x + SQUARE).contains(&c);
                let check = if (r + c) % 2 == 0 { 0.06 } else { -0.06 };
                let ramp = 0.15 * c as f64 / (FRAME_SIZE - 1) as f64;
                for ch in 0..CHANNELS {
                    out.push(if inside { self.color[ch] } else { 0.3 + check + ramp + self.tint[ch] });
                }
            }
        }
        out
    }
}

/// Back-and-forth sweep over `0..=span`, one pixel per frame.
fn bounce(start: usize, f: usize, span: usize) -> usize {
    let p = (start + f) % (2 * span);
    if p <= span {
        p
    } else {
        2 * span - p
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian blur with edge replication; `sigma = 0` is the
/// identity.
pub fn gaussian_blur(frame: &[f64], size: usize, channels: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return frame.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as i64;
    let idx = |y: usize, x: usize, c: usize| (y * size + x) * channels + c;
    let clamp = |v: i64| v.clamp(0, size as i64 - 1) as usize;
    let mut tmp = vec![0.0; frame.len()];
    for y in 0..size {
        for x in 0..size {
            for c in 0..channels {
                tmp[idx(y, x, c)] = k
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * frame[idx(y, clamp(x as i64 + i as i64 - r), c)])
                    .sum();
            }
        }
    }
    let mut out = vec![0.0; frame.len()];
    for y in 0..size {
        for x in 0..size {
            for c in 0..channels {
                out[idx(y, x, c)] = k
                    .iter()
                    .enumerate()
                    .map(|(i, w)| w * tmp[idx(clamp(y as i64 + i as i64 - r), x, c)])
                    .sum();
            }
        }
    }
    out.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

/// Blends `frame` toward white so its mean rises by `lift`.
fn haze(frame: &[f64], lift: f64) -> Result<Vec<f64>> {
    if lift == 0.0 {
        return Ok(frame.to_vec());
    }
    let mean = frame.iter().sum::<f64>() / frame.len() as f64;
    let w = lift / (1.0 - mean);
    if !(0.0..=1.0).contains(&w) {
        return Err(PipelineError::Config(format!(
            "brightness lift {lift} exceeds the headroom {} of a frame with mean {mean}",
            1.0 - mean
        )));
    }
    Ok(frame.iter().map(|v| v + w * (1.0 - v)).collect())
}

/// Box-averaged luma in `[-1, 1]`, row-major `LATENT_SIDE x LATENT_SIDE`.
pub fn encode_latent(frame: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; LATENT_DIM];
    for (i, o) in out.iter_mut().enumerate() {
        let (by, bx) = (i / LATENT_SIDE, i % LATENT_SIDE);
        let mut s = 0.0;
        for y in by * BOX..(by + 1) * BOX {
            for x in bx * BOX..(bx + 1) * BOX {
                let p = &frame[(y * FRAME_SIZE + x) * CHANNELS..][..CHANNELS];
                s += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
            }
        }
        *o = 2.0 * s / (BOX * BOX) as f64 - 1.0;
    }
    out
}

/// Single-channel `LATENT_SIDE x LATENT_SIDE` frames from latent chunks,
/// mapped back to `[0, 1]` and clamped.
pub fn latents_to_frames(chunks: &[Tensor]) -> Result<FrameSequence> {
    let mut data = Vec::new();
    for c in chunks {
        if c.shape().len() != 2 || c.shape()[1] != LATENT_DIM {
            return Err(PipelineError::Numeric(format!(
                "latent chunk of shape {:?}; expected [frames, {LATENT_DIM}]",
                c.shape()
            )));
        }
        data.extend(c.data().iter().map(|v| ((v + 1.0) / 2.0).clamp(0.0, 1.0)));
    }
    if let Some(bad) = data.iter().find(|v| v.is_nan()) {
        return Err(PipelineError::Numeric(format!("non-finite latent {bad}")));
    }
    let t = data.len() / LATENT_DIM;
    Ok(FrameSequence::new(t, LATENT_SIDE, LATENT_SIDE, 1, data, 24.0)?)
}

/// Deterministic corpus for `spec`; video `v` draws its layout from the
/// stream `(corpus, v)` of `rng`, independent of the scene kind.
pub fn synth_corpus(spec: &CorpusSpec, rng: &RandomSource) -> Result<Vec<SynthVideo>> {
    spec.validate()?;
    let span = FRAME_SIZE - SQUARE;
    (0..spec.n_videos)
        .map(|v| {
            let layout = Layout::draw(&mut rng.split(&[CORPUS_STREAM, v as u64]));
            let n_frames = spec.frames_per_video();
            let mut data = Vec::with_capacity(n_frames * FRAME_SIZE * FRAME_SIZE * CHANNELS);
            let mut latents = Vec::with_capacity(spec.n_chunks);
            let still = layout.frame(layout.y, layout.x);
            for c in 0..spec.n_chunks {
                let mut chunk = Vec::with_capacity(spec.frames_per_chunk * LATENT_DIM);
                let degraded = match spec.scene {
                    SceneKind::BlurDrift => gaussian_blur(&still, FRAME_SIZE, CHANNELS, spec.drift * c as f64),
                    SceneKind::BrightnessDrift => haze(&still, spec.drift * c as f64)?,
                    _ => still.clone(),
                };
                for f in 0..spec.frames_per_chunk {
                    let frame = match spec.scene {
                        SceneKind::MovingSquare => {
                            let t = c * spec.frames_per_chunk + f;
                            layout.frame(layout.y, bounce(layout.x, t, span))
                        }
                        _ => degraded.clone(),
                    };
                    chunk.extend(encode_latent(&frame));
                    data.extend(frame);
                }
                latents.push(Tensor::new(&[spec.frames_per_chunk, LATENT_DIM], chunk)?);
            }
            Ok(SynthVideo {
                frames: FrameSequence::new(n_frames, FRAME_SIZE, FRAME_SIZE, CHANNELS, data, 24.0)?,
                latents,
                prompts: (0..spec.n_chunks).map(|k| prompt(spec.scene, k, spec.n_chunks)).collect(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(scene: SceneKind, drift: f64) -> CorpusSpec {
        CorpusSpec {
            scene,
            n_videos: 2,
            n_chunks: 4,
            frames_per_chunk: 3,
            drift,
        }
    }

    #[test]
    fn kernel_is_normalized() {
        for sigma in [0.3, 1.0, 2.5] {
            let k = gaussian_kernel(sigma);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(k.len() % 2, 1);
        }
    }

    #[test]
    fn bounce_stays_in_range() {
        let xs: Vec<usize> = (0..60).map(|f| bounce(3, f, 24)).collect();
        assert!(xs.iter().all(|x| *x <= 24));
        assert!(xs.windows(2).all(|w| w[0].abs_diff(w[1]) == 1));
    }

    #[test]
    fn prompts_follow_the_template() {
        let v = &synth_corpus(&spec(SceneKind::Static, 0.0), &RandomSource::new(1)).unwrap()[0];
        assert_eq!(v.prompts[0], "chunk 0: static opening");
        assert_eq!(v.prompts[3], "chunk 3: static closing");
    }

    #[test]
    fn latents_cover_the_unit_range() {
        let v = &synth_corpus(&spec(SceneKind::MovingSquare, 0.0), &RandomSource::new(2)).unwrap()[0];
        assert_eq!(v.latents[0].shape(), &[3, LATENT_DIM]);
        assert!(v.latents.iter().all(|t| t.data().iter().all(|x| (-1.0..=1.0).contains(x))));
        let frames = latents_to_frames(&v.latents).unwrap();
        assert_eq!(frames.len(), 12);
    }

    #[test]
    fn excessive_haze_is_an_error() {
        assert!(synth_corpus(&spec(SceneKind::BrightnessDrift, 0.5), &RandomSource::new(3)).is_err());
    }
}
