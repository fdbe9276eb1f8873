use crate::error::{Result, VdeError};

/// Borrowed view of one `height x width x channels` frame, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame<'a> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: &'a [f64],
}

impl Frame<'_> {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Rec. 601 luma; single-channel frames pass through.
    pub fn luminance(&self) -> Vec<f64> {
        if self.channels == 1 {
            return self.data.to_vec();
        }
        self.data
            .chunks(self.channels)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }
}

/// `T` frames of identical size with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    len: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    frame_rate: f64,
}

impl FrameSequence {
    pub fn new(
        len: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        frame_rate: f64,
    ) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(VdeError::InvalidFrames(format!("{channels} channels; expected 1 or 3")));
        }
        if len == 0 || height == 0 || width == 0 {
            return Err(VdeError::InvalidFrames("empty frame sequence".into()));
        }
        if data.len() != len * height * width * channels {
            return Err(VdeError::InvalidFrames(format!(
                "{} values for {len} frames of {height}x{width}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(VdeError::InvalidFrames(format!("value {v} outside [0, 1]")));
        }
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(VdeError::InvalidFrames(format!("frame rate {frame_rate} must be > 0")));
        }
        Ok(Self {
            len,
            height,
            width,
            channels,
            data,
            frame_rate,
        })
    }

    /// Stacks equally sized frames.
    pub fn from_frames(frames: &[Vec<f64>], height: usize, width: usize, channels: usize) -> Result<Self> {
        let data: Vec<f64> = frames.concat();
        Self::new(frames.len(), height, width, channels, data, 24.0)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    fn frame_size(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn frame(&self, i: usize) -> Frame<'_> {
        let n = self.frame_size();
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: &self.data[i * n..(i + 1) * n],
        }
    }

    pub fn frames(&self) -> impl Iterator<Item = Frame<'_>> {
        (0..self.len).map(|i| self.frame(i))
    }

    /// Frames `start..start + len` as a new sequence.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if len == 0 || start + len > self.len {
            return Err(VdeError::InvalidFrames(format!(
                "slice {start}..{} of {} frames",
                start + len,
                self.len
            )));
        }
        let n = self.frame_size();
        Ok(Self {
            len,
            data: self.data[start * n..(start + len) * n].to_vec(),
            ..*self
        })
    }

    /// Contiguous segments of at least 2 frames whose lengths differ by at
    /// most one; earlier segments take the remainder.
    pub fn split_segments(&self, n: usize) -> Result<Vec<FrameSequence>> {
        if n < 2 || n > self.len / 2 {
            return Err(VdeError::TooManySegments {
                segments: n,
                frames: self.len,
            });
        }
        let (base, extra) = (self.len / n, self.len % n);
        let mut start = 0;
        (0..n)
            .map(|i| {
                let len = base + usize::from(i < extra);
                let s = self.slice(start, len);
                start += len;
                s
            })
            .collect()
    }
}
