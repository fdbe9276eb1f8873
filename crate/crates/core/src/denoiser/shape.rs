use super::{DenoiserError, Result};

/// Latent channels of the video autoencoder.
pub const LATENT_CHANNELS: usize = 16;

/// Latent shape `[1 + t / 4, h / 8, w / 8, 16]` for a clip of `1 + t`
/// frames of size `h x w`: the first frame is compressed only spatially,
/// the remaining `t` frames four to one in time.
pub fn latent_shape(t: usize, h: usize, w: usize) -> Result<[usize; 4]> {
    if t % 4 != 0 || h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(DenoiserError::Invalid(format!(
            "clip of 1 + {t} frames at {h}x{w} does not compress evenly"
        )));
    }
    Ok([1 + t / 4, h / 8, w / 8, LATENT_CHANNELS])
}
