//! Chunk-level noise schedules and boundary noise shuffling.
//!
//! Chunk `c` of an `n`-chunk video gets a noise level that grows with `c`:
//! early chunks start from less noise and fix the scene, later chunks start
//! from more noise and lean on their context.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::rng::RandomSource;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("invalid schedule parameters: {0}")]
    Params(String),
    #[error("chunk {chunk} out of range for {n_chunks} chunks")]
    ChunkOutOfRange { chunk: usize, n_chunks: usize },
    #[error("shuffle window {s} exceeds {frames} frames per chunk")]
    WindowTooLarge { s: usize, frames: usize },
    #[error("unknown schedule kind {0:?}")]
    UnknownKind(String),
}

pub type Result<T> = std::result::Result<T, ScheduleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    /// Every chunk at the maximal level.
    Naive,
    Linear,
    Cosine,
    Sigmoid,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 4] = [Self::Naive, Self::Linear, Self::Cosine, Self::Sigmoid];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Naive => "naive",
            Self::Linear => "linear",
            Self::Cosine => "cosine",
            Self::Sigmoid => "sigmoid",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScheduleKind {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ScheduleError::UnknownKind(s.to_string()))
    }
}

/// Flow-matching time at which the terminal signal-to-noise ratio
/// `((1 - t) / t)^2` equals 0.003.
pub fn default_eps_max() -> f64 {
    1.0 / (1.0 + 0.003f64.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleParams {
    pub kind: ScheduleKind,
    pub eps_min: f64,
    pub eps_max: f64,
    pub n_chunks: usize,
    /// Steepness of the sigmoid schedule.
    pub alpha: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        let eps_max = default_eps_max();
        Self {
            kind: ScheduleKind::Cosine,
            eps_min: 0.1 * eps_max,
            eps_max,
            n_chunks: 15,
            alpha: 10.0,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_min > 0.0) || !self.eps_min.is_finite() {
            return Err(ScheduleError::Params(format!("eps_min must be > 0, got {}", self.eps_min)));
        }
        if !(self.eps_max >= self.eps_min) || !self.eps_max.is_finite() {
            return Err(ScheduleError::Params(format!(
                "eps_max ({}) must be >= eps_min ({})",
                self.eps_max, self.eps_min
            )));
        }
        if self.n_chunks == 0 {
            return Err(ScheduleError::Params("n_chunks must be >= 1".into()));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(ScheduleError::Params(format!("alpha must be > 0, got {}", self.alpha)));
        }
        Ok(())
    }

    /// Noise level of chunk `c`, for `c` in `0..n_chunks`.
    pub fn noise_level(&self, c: usize) -> Result<f64> {
        self.validate()?;
        let n = self.n_chunks;
        if c >= n {
            return Err(ScheduleError::ChunkOutOfRange { chunk: c, n_chunks: n });
        }
        let (lo, hi) = (self.eps_min, self.eps_max);
        if self.kind == ScheduleKind::Naive {
            return Ok(hi);
        }
        if n == 1 {
            return Ok(lo);
        }
        let x = c as f64 / (n - 1) as f64;
        let level = match self.kind {
            ScheduleKind::Naive => unreachable!(),
            ScheduleKind::Linear => {
                if c == n - 1 {
                    hi
                } else {
                    lo + x * (hi - lo)
                }
            }
            ScheduleKind::Cosine => {
                if c == n - 1 {
                    hi
                } else {
                    lo + 0.5 * (hi - lo) * (1.0 - (std::f64::consts::PI * x).cos())
                }
            }
            ScheduleKind::Sigmoid => lo + (hi - lo) / (1.0 + (-self.alpha * (x - 0.5)).exp()),
        };
        Ok(level)
    }

    /// Start time of chunk `c`'s sampling trajectory, `noise_level / eps_max`.
    pub fn start_time(&self, c: usize) -> Result<f64> {
        Ok(self.noise_level(c)? / self.eps_max)
    }
}

/// Standard-normal noise for `(chunk, frame)`, independent of every other
/// frame's draw.
pub fn base_noise(rng: &RandomSource, chunk: usize, frame: usize, shape: &[usize]) -> Tensor {
    let mut stream = rng.split(&[BASE_NOISE_STREAM, chunk as u64, frame as u64]);
    let n = shape.iter().product();
    Tensor::new(shape, stream.normals(n)).expect("normal draws are finite")
}

const BASE_NOISE_STREAM: u64 = 0x6261_7365;

/// Shuffles the last `s` frame noises of `chunk_a` and, independently, the
/// first `s` frame noises of `chunk_b`.
#[allow(clippy::type_complexity)]
pub fn shuffle_boundary(
    chunk_a: &[Tensor],
    chunk_b: &[Tensor],
    s: usize,
    rng: &mut RandomSource,
) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    if s == 0 {
        return Err(ScheduleError::Params("shuffle window must be >= 1".into()));
    }
    let frames = chunk_a.len().min(chunk_b.len());
    if s > frames {
        return Err(ScheduleError::WindowTooLarge { s, frames });
    }
    let mut a = chunk_a.to_vec();
    let mut b = chunk_b.to_vec();
    let tail = a.len() - s;
    a[tail..].shuffle(rng);
    b[..s].shuffle(rng);
    Ok((a, b))
}
