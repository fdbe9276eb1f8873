//! Frame sequence files: PGM/PPM frame directories and the `.lvt` tensor
//! container.
//!
//! An `.lvt` file is the magic `LVTF`, a little-endian `u16` version, the
//! `u32` dimensions `T H W C`, then `T*H*W*C` little-endian `f32` values in
//! `[0, 1]`, frame-major and channel-last.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};

use crate::error::{Result, VdeError};
use crate::frames::FrameSequence;

pub const LVT_MAGIC: [u8; 4] = *b"LVTF";
pub const LVT_VERSION: u16 = 1;

fn file_err(path: &Path, msg: impl ToString) -> VdeError {
    VdeError::File {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

fn is_pnm(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// Sorted PGM/PPM files in `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| file_err(dir, e))? {
        let path = entry.map_err(|e| file_err(dir, e))?.path();
        if path.is_file() && is_pnm(&path) {
            paths.push(path);
        }
    }
    paths.sort();
    if paths.is_empty() {
        return Err(file_err(dir, "no .pgm/.ppm frames found"));
    }
    Ok(paths)
}

fn read_pnm(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm).map_err(|e| file_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Ok((h, w, 1, g.into_raw().into_iter().map(|b| b as f64 / 255.0).collect())),
        DynamicImage::ImageRgb8(c) => Ok((h, w, 3, c.into_raw().into_iter().map(|b| b as f64 / 255.0).collect())),
        other => Err(file_err(path, format!("unsupported pixel format {:?}; expected 8-bit P5 or P6", other.color()))),
    }
}

/// Reads every frame of a PGM/PPM directory in lexicographic file order.
pub fn read_frame_dir(dir: &Path) -> Result<FrameSequence> {
    let paths = list_frames(dir)?;
    let mut data = Vec::new();
    let mut dims = None;
    for path in &paths {
        let (h, w, c, px) = read_pnm(path)?;
        match dims {
            None => dims = Some((h, w, c)),
            Some(d) if d != (h, w, c) => {
                return Err(file_err(
                    path,
                    format!("frame is {h}x{w}x{c}, earlier frames are {}x{}x{}", d.0, d.1, d.2),
                ))
            }
            Some(_) => {}
        }
        data.extend(px);
    }
    let (h, w, c) = dims.expect("at least one frame");
    FrameSequence::new(paths.len(), h, w, c, data, 24.0)
}

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes frames as `frame_00000.pgm` (one channel) or `.ppm` (three).
pub fn write_frame_dir(video: &FrameSequence, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| file_err(dir, e))?;
    let (h, w) = (video.height() as u32, video.width() as u32);
    let ext = if video.channels() == 1 { "pgm" } else { "ppm" };
    let mut paths = Vec::with_capacity(video.len());
    for (i, frame) in video.frames().enumerate() {
        let bytes: Vec<u8> = frame.data.iter().map(|&v| to_byte(v)).collect();
        let img = if video.channels() == 1 {
            DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, bytes).expect("frame size"))
        } else {
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, bytes).expect("frame size"))
        };
        let path = dir.join(format!("frame_{i:05}.{ext}"));
        img.save_with_format(&path, ImageFormat::Pnm).map_err(|e| file_err(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Encodes an `.lvt` byte stream. Values are stored as `f32`.
pub fn encode_lvt(dims: [usize; 4], data: &[f64]) -> Result<Vec<u8>> {
    let n: usize = dims.iter().product();
    if data.len() != n {
        return Err(VdeError::LengthMismatch(data.len(), n));
    }
    let mut out = Vec::with_capacity(22 + 4 * n);
    out.extend_from_slice(&LVT_MAGIC);
    out.extend_from_slice(&LVT_VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| VdeError::Format(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Decodes an `.lvt` byte stream into `[T, H, W, C]` and its values.
/// Value range is not checked here.
pub fn decode_lvt(bytes: &[u8]) -> Result<([usize; 4], Vec<f64>)> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| VdeError::Format("truncated .lvt header".into()))?;
    if magic != LVT_MAGIC {
        return Err(VdeError::Format(format!("bad .lvt magic {magic:?}")));
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v).map_err(|_| VdeError::Format("truncated .lvt header".into()))?;
    let version = u16::from_le_bytes(v);
    if version != LVT_VERSION {
        return Err(VdeError::Format(format!("unsupported .lvt version {version}")));
    }
    let mut dims = [0usize; 4];
    for d in &mut dims {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| VdeError::Format("truncated .lvt header".into()))?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some_and(|b| b == r.len()))
        .ok_or_else(|| {
            VdeError::Format(format!("{} payload bytes do not match dimensions {dims:?}", r.len()))
        })?;
    let data = r
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect::<Vec<_>>();
    debug_assert_eq!(data.len(), n);
    Ok((dims, data))
}

pub fn write_lvt(video: &FrameSequence, path: &Path) -> Result<()> {
    let bytes = encode_lvt(
        [video.len(), video.height(), video.width(), video.channels()],
        video.data(),
    )?;
    let mut f = fs::File::create(path).map_err(|e| file_err(path, e))?;
    f.write_all(&bytes).map_err(|e| file_err(path, e))
}

pub fn read_lvt(path: &Path) -> Result<FrameSequence> {
    let bytes = fs::read(path).map_err(|e| file_err(path, e))?;
    let ([t, h, w, c], data) = decode_lvt(&bytes).map_err(|e| file_err(path, e))?;
    FrameSequence::new(t, h, w, c, data, 24.0).map_err(|e| file_err(path, e))
}

/// Reads a video from an `.lvt` file or a frame directory.
pub fn read_video(path: &Path) -> Result<FrameSequence> {
    if path.is_dir() {
        read_frame_dir(path)
    } else {
        read_lvt(path)
    }
}
