//! Brute-force versions of the built-in segment scorers.
//!
//! Every score is recomputed with explicit index loops over the raw
//! `T x H x W x C` buffer, sharing no code with [`crate::scorers`]. Used as
//! a parity oracle for the production path.

use crate::frames::FrameSequence;

fn px(s: &FrameSequence, t: usize, y: usize, x: usize, c: usize) -> f64 {
    let (h, w, ch) = (s.height(), s.width(), s.channels());
    s.data()[((t * h + y) * w + x) * ch + c]
}

fn luma(s: &FrameSequence, t: usize, y: usize, x: usize) -> f64 {
    if s.channels() == 1 {
        px(s, t, y, x, 0)
    } else {
        0.299 * px(s, t, y, x, 0) + 0.587 * px(s, t, y, x, 1) + 0.114 * px(s, t, y, x, 2)
    }
}

pub fn clarity(s: &FrameSequence) -> f64 {
    let (h, w) = (s.height() as i64, s.width() as i64);
    let clampy = |v: i64| v.clamp(0, h - 1) as usize;
    let clampx = |v: i64| v.clamp(0, w - 1) as usize;
    let mut total = 0.0;
    for t in 0..s.len() {
        let mut lap = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let centre = luma(s, t, y as usize, x as usize);
                let v = luma(s, t, clampy(y - 1), x as usize)
                    + luma(s, t, clampy(y + 1), x as usize)
                    + luma(s, t, y as usize, clampx(x - 1))
                    + luma(s, t, y as usize, clampx(x + 1))
                    - 4.0 * centre;
                lap.push(v);
            }
        }
        let mut m = 0.0;
        for v in &lap {
            m += v;
        }
        m /= lap.len() as f64;
        let mut var = 0.0;
        for v in &lap {
            var += (v - m) * (v - m);
        }
        total += var / lap.len() as f64;
    }
    total / s.len() as f64
}

/// Motion under the temporal-difference flow proxy.
pub fn motion(s: &FrameSequence) -> f64 {
    let (h, w) = (s.height(), s.width());
    let mut total = 0.0;
    for t in 0..s.len() - 1 {
        let mut e = 0.0;
        for y in 0..h {
            for x in 0..w {
                e += (luma(s, t + 1, y, x) - luma(s, t, y, x)).abs();
            }
        }
        total += e / (h * w) as f64;
    }
    total / (s.len() - 1) as f64
}

pub fn aesthetic(s: &FrameSequence) -> f64 {
    let (h, w) = (s.height(), s.width());
    let n = (h * w) as f64;
    let mut total = 0.0;
    for t in 0..s.len() {
        let mut m = 0.0;
        for y in 0..h {
            for x in 0..w {
                m += luma(s, t, y, x);
            }
        }
        m /= n;
        let mut var = 0.0;
        let mut color = 0.0;
        for y in 0..h {
            for x in 0..w {
                let d = luma(s, t, y, x) - m;
                var += d * d;
                if s.channels() == 3 {
                    let (r, g, b) = (px(s, t, y, x, 0), px(s, t, y, x, 1), px(s, t, y, x, 2));
                    color += ((r - g).abs() + (g - b).abs() + (r - b).abs()) / 3.0;
                }
            }
        }
        let contrast = f64::min(2.0 * (var / n).sqrt(), 1.0);
        let colorfulness = f64::min(1.5 * color / n, 1.0);
        total += 0.5 * contrast + 0.5 * colorfulness;
    }
    total / s.len() as f64
}

/// Background staticness under the border-band mask and difference flow.
pub fn background(s: &FrameSequence, tau: f64) -> f64 {
    let (h, w) = (s.height(), s.width());
    let mut band = if h < w { h } else { w } / 8;
    if (if h < w { h } else { w }) % 8 != 0 {
        band += 1;
    }
    let mut total = 0.0;
    for t in 0..s.len() - 1 {
        let (mut inside, mut still) = (0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                let border = y < band || x < band || y + band >= h || x + band >= w;
                if border {
                    inside += 1.0;
                    if (luma(s, t + 1, y, x) - luma(s, t, y, x)).abs() <= tau {
                        still += 1.0;
                    }
                }
            }
        }
        total += still / inside;
    }
    total / (s.len() - 1) as f64
}

const BINS: usize = 8;

fn histogram(s: &FrameSequence, t: usize) -> Vec<f64> {
    let (h, w, ch) = (s.height(), s.width(), s.channels());
    let ch_h = if h / 2 == 0 { 1 } else { h / 2 };
    let ch_w = if w / 2 == 0 { 1 } else { w / 2 };
    let (y0, x0) = ((h - ch_h) / 2, (w - ch_w) / 2);
    let mut hist = vec![0.0; ch * BINS];
    for y in y0..y0 + ch_h {
        for x in x0..x0 + ch_w {
            for c in 0..ch {
                let mut bin = (px(s, t, y, x, c) * BINS as f64).floor() as usize;
                if bin >= BINS {
                    bin = BINS - 1;
                }
                hist[c * BINS + bin] += 1.0;
            }
        }
    }
    let mut norm = 0.0f64;
    for v in &hist {
        norm += v * v;
    }
    let norm = norm.sqrt();
    for v in &mut hist {
        *v /= norm;
    }
    hist
}

/// Mean histogram embedding over `first`, the reference for [`subject`].
pub fn subject_reference(first: &FrameSequence) -> Vec<f64> {
    let mut acc = vec![0.0; first.channels() * BINS];
    for t in 0..first.len() {
        let e = histogram(first, t);
        for i in 0..acc.len() {
            acc[i] += e[i];
        }
    }
    for a in &mut acc {
        *a /= first.len() as f64;
    }
    acc
}

pub fn subject(s: &FrameSequence, reference: &[f64]) -> f64 {
    let mut total = 0.0;
    for t in 0..s.len() {
        let e = histogram(s, t);
        let (mut dot, mut ne, mut nr) = (0.0, 0.0f64, 0.0f64);
        for i in 0..e.len() {
            dot += e[i] * reference[i];
            ne += e[i] * e[i];
            nr += reference[i] * reference[i];
        }
        total += (dot / (ne.sqrt() * nr.sqrt())).clamp(-1.0, 1.0);
    }
    total / s.len() as f64
}
