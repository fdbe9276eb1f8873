//! Per-segment quality scores and the plugin seams behind them.
//!
//! Learned predictors (aesthetics, identity, optical flow) are out of reach
//! here, so each has a deterministic classical stand-in that can be swapped
//! through [`Plugins`].

use std::sync::Arc;

use crate::error::{Result, VdeError};
use crate::frames::{Frame, FrameSequence};

/// Per-pixel displacement `(dx, dy)` in pixels per frame, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub uv: Vec<[f64; 2]>,
}

impl FlowField {
    pub fn uniform(height: usize, width: usize, dx: f64, dy: f64) -> Self {
        Self {
            height,
            width,
            uv: vec![[dx, dy]; height * width],
        }
    }

    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.uv.iter().map(|[u, v]| u.hypot(*v))
    }

    /// Mean per-pixel flow magnitude.
    pub fn energy(&self) -> f64 {
        self.magnitudes().sum::<f64>() / self.uv.len() as f64
    }
}

pub trait FlowEstimator: Send + Sync {
    fn flow(&self, a: Frame<'_>, b: Frame<'_>) -> FlowField;
}

pub trait AestheticPredictor: Send + Sync {
    fn score(&self, frame: Frame<'_>) -> f64;
}

pub trait SubjectEncoder: Send + Sync {
    /// Subject crop as `(y, x, height, width)`; defaults to the central
    /// half of the frame.
    fn locate(&self, frame: Frame<'_>) -> (usize, usize, usize, usize) {
        center_crop(frame.height, frame.width)
    }

    fn encode(&self, frame: Frame<'_>, crop: (usize, usize, usize, usize)) -> Vec<f64>;
}

pub trait BackgroundMask: Send + Sync {
    fn mask(&self, frame: Frame<'_>) -> Vec<bool>;
}

/// Absolute luminance change per pixel, reported as a horizontal flow.
#[derive(Debug, Clone, Copy, Default)]
pub struct TemporalDifference;

impl FlowEstimator for TemporalDifference {
    fn flow(&self, a: Frame<'_>, b: Frame<'_>) -> FlowField {
        let (ya, yb) = (a.luminance(), b.luminance());
        FlowField {
            height: a.height,
            width: a.width,
            uv: ya.iter().zip(&yb).map(|(p, q)| [(q - p).abs(), 0.0]).collect(),
        }
    }
}

/// Half normalized RMS contrast plus half colorfulness, each in `[0, 1]`.
///
/// Contrast is `2 * std(Y)`; colorfulness is `1.5 * mean((|R-G| + |G-B| + |R-B|) / 3)`,
/// zero for grayscale frames.
#[derive(Debug, Clone, Copy, Default)]
pub struct ContrastColorfulness;

impl AestheticPredictor for ContrastColorfulness {
    fn score(&self, frame: Frame<'_>) -> f64 {
        let y = frame.luminance();
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let contrast = (2.0 * var.sqrt()).min(1.0);
        let colorfulness = if frame.channels == 3 {
            let total: f64 = frame
                .data
                .chunks(3)
                .map(|p| ((p[0] - p[1]).abs() + (p[1] - p[2]).abs() + (p[0] - p[2]).abs()) / 3.0)
                .sum();
            (1.5 * total / n).min(1.0)
        } else {
            0.0
        };
        0.5 * contrast + 0.5 * colorfulness
    }
}

pub const HISTOGRAM_BINS: usize = 8;

/// Per-channel color histogram of the crop, L2-normalized.
#[derive(Debug, Clone, Copy, Default)]
pub struct ColorHistogram;

impl SubjectEncoder for ColorHistogram {
    fn encode(&self, frame: Frame<'_>, (y0, x0, h, w): (usize, usize, usize, usize)) -> Vec<f64> {
        let c = frame.channels;
        let mut hist = vec![0.0; c * HISTOGRAM_BINS];
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                for ch in 0..c {
                    let bin = ((frame.at(y, x, ch) * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
                    hist[ch * HISTOGRAM_BINS + bin] += 1.0;
                }
            }
        }
        let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
        hist.iter_mut().for_each(|v| *v /= norm);
        hist
    }
}

/// Central half of a `height x width` frame, at least one pixel.
pub fn center_crop(height: usize, width: usize) -> (usize, usize, usize, usize) {
    let h = (height / 2).max(1);
    let w = (width / 2).max(1);
    ((height - h) / 2, (width - w) / 2, h, w)
}

/// Border band of width `ceil(min(H, W) / 8)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct BorderBand;

pub fn border_band(height: usize, width: usize) -> Vec<bool> {
    let b = height.min(width).div_ceil(8);
    (0..height * width)
        .map(|i| {
            let (y, x) = (i / width, i % width);
            y < b || x < b || y >= height - b.min(height) || x >= width - b.min(width)
        })
        .collect()
}

impl BackgroundMask for BorderBand {
    fn mask(&self, frame: Frame<'_>) -> Vec<bool> {
        border_band(frame.height, frame.width)
    }
}

/// The injectable scorer components.
#[derive(Clone)]
pub struct Plugins {
    pub flow: Arc<dyn FlowEstimator>,
    pub aesthetic: Arc<dyn AestheticPredictor>,
    pub subject: Arc<dyn SubjectEncoder>,
    pub background: Arc<dyn BackgroundMask>,
}

impl Default for Plugins {
    fn default() -> Self {
        Self {
            flow: Arc::new(TemporalDifference),
            aesthetic: Arc::new(ContrastColorfulness),
            subject: Arc::new(ColorHistogram),
            background: Arc::new(BorderBand),
        }
    }
}

impl std::fmt::Debug for Plugins {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Plugins")
    }
}

/// Population variance of the 4-neighbour Laplacian of luma, with edge
/// replication.
pub fn laplacian_variance(frame: Frame<'_>) -> f64 {
    let (h, w) = (frame.height, frame.width);
    let y = frame.luminance();
    let at = |r: usize, c: usize| y[r * w + c];
    let mut resp = Vec::with_capacity(h * w);
    for r in 0..h {
        let (up, down) = (r.saturating_sub(1), (r + 1).min(h - 1));
        for c in 0..w {
            let (left, right) = (c.saturating_sub(1), (c + 1).min(w - 1));
            resp.push(at(up, c) + at(down, c) + at(r, left) + at(r, right) - 4.0 * at(r, c));
        }
    }
    let n = resp.len() as f64;
    let mean = resp.iter().sum::<f64>() / n;
    resp.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    sum / n as f64
}

pub fn clarity_score(seg: &FrameSequence) -> f64 {
    mean(seg.frames().map(laplacian_variance))
}

fn pairs(seg: &FrameSequence) -> Result<impl Iterator<Item = (Frame<'_>, Frame<'_>)>> {
    if seg.len() < 2 {
        return Err(VdeError::SegmentTooShort(seg.len()));
    }
    Ok((0..seg.len() - 1).map(|t| (seg.frame(t), seg.frame(t + 1))))
}

/// Mean over consecutive pairs of the mean per-pixel flow magnitude.
pub fn motion_score(seg: &FrameSequence, plugins: &Plugins) -> Result<f64> {
    Ok(mean(pairs(seg)?.map(|(a, b)| plugins.flow.flow(a, b).energy())))
}

pub fn aesthetic_score(seg: &FrameSequence, plugins: &Plugins) -> f64 {
    mean(seg.frames().map(|f| plugins.aesthetic.score(f)))
}

/// Mean over consecutive pairs of the fraction of background pixels whose
/// flow magnitude is at most `tau`.
pub fn background_score(seg: &FrameSequence, plugins: &Plugins, tau: f64) -> Result<f64> {
    let mut phis = Vec::with_capacity(seg.len());
    for (a, b) in pairs(seg)? {
        let mask = plugins.background.mask(a);
        let flow = plugins.flow.flow(a, b);
        let mut total = 0usize;
        let mut still = 0usize;
        for (m, mag) in mask.iter().zip(flow.magnitudes()) {
            if *m {
                total += 1;
                still += usize::from(mag <= tau);
            }
        }
        if total == 0 {
            return Err(VdeError::EmptyMask);
        }
        phis.push(still as f64 / total as f64);
    }
    Ok(mean(phis.into_iter()))
}

fn subject_embedding(frame: Frame<'_>, plugins: &Plugins) -> Vec<f64> {
    let crop = plugins.subject.locate(frame);
    plugins.subject.encode(frame, crop)
}

/// Mean subject embedding over the frames of `seg`.
pub fn subject_reference(seg: &FrameSequence, plugins: &Plugins) -> Result<Vec<f64>> {
    let mut acc: Vec<f64> = Vec::new();
    for f in seg.frames() {
        let e = subject_embedding(f, plugins);
        if acc.is_empty() {
            acc = vec![0.0; e.len()];
        }
        if e.len() != acc.len() {
            return Err(VdeError::InvalidFrames("subject embeddings differ in length".into()));
        }
        acc.iter_mut().zip(&e).for_each(|(a, v)| *a += v);
    }
    let n = seg.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(VdeError::ZeroNorm);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Mean cosine similarity of each frame's subject embedding to `reference`.
pub fn subject_score(seg: &FrameSequence, plugins: &Plugins, reference: &[f64]) -> Result<f64> {
    let sims = seg
        .frames()
        .map(|f| cosine(&subject_embedding(f, plugins), reference))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(sims.into_iter()))
}
