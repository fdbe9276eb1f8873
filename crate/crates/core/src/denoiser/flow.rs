use super::{DenoiserError, Result};
use crate::tensor::Tensor;

/// The straight-line interpolant `(1 - t) * x_start + t * eps`.
pub fn interpolate(x_start: &Tensor, eps: &Tensor, t: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&t) {
        return Err(DenoiserError::TimeOutOfRange(t));
    }
    Ok(x_start.scale(1.0 - t)?.add(&eps.scale(t)?)?)
}

/// `eps - x_start`, the constant velocity of the interpolant.
pub fn velocity_target(x_start: &Tensor, eps: &Tensor) -> Result<Tensor> {
    Ok(eps.sub(x_start)?)
}

/// Resamples `frames` to `len` rows by linear interpolation along the
/// frame axis; endpoints map to endpoints.
fn resample(frames: &Tensor, len: usize) -> Result<Vec<f64>> {
    let &[n, dim] = frames.shape() else {
        return Err(DenoiserError::Invalid(format!(
            "past chunk must be [frames, latent_dim], got {:?}",
            frames.shape()
        )));
    };
    let data = frames.data();
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut out = Vec::with_capacity(len * dim);
    for j in 0..len {
        let pos = if len == 1 {
            (n - 1) as f64 / 2.0
        } else {
            j as f64 * (n - 1) as f64 / (len - 1) as f64
        };
        let lo = pos.floor() as usize;
        let frac = pos - lo as f64;
        if frac == 0.0 || lo + 1 >= n {
            out.extend_from_slice(row(lo.min(n - 1)));
        } else {
            out.extend(row(lo).iter().zip(row(lo + 1)).map(|(a, b)| (1.0 - frac) * a + frac * b));
        }
    }
    Ok(out)
}

/// Mean of the past chunks, each resampled to `len` frames. An empty list
/// gives zeros of shape `[len, latent_dim]`.
pub fn semantic_reference(past: &[&Tensor], len: usize, latent_dim: usize) -> Result<Tensor> {
    if len == 0 || latent_dim == 0 {
        return Err(DenoiserError::Invalid("semantic reference needs a non-empty shape".into()));
    }
    let mut acc = vec![0.0; len * latent_dim];
    for chunk in past {
        if chunk.shape().get(1) != Some(&latent_dim) {
            return Err(DenoiserError::Invalid(format!(
                "past chunk has shape {:?}, expected latent_dim {latent_dim}",
                chunk.shape()
            )));
        }
        for (a, v) in acc.iter_mut().zip(resample(chunk, len)?) {
            *a += v;
        }
    }
    if !past.is_empty() {
        let n = past.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    Ok(Tensor::new(&[len, latent_dim], acc)?)
}

/// `mean((v_pred - (eps - gamma * x_cond))^2)`.
pub fn block_forcing_loss(v_pred: &Tensor, eps: &Tensor, x_cond: &Tensor, gamma: f64) -> Result<Tensor> {
    let target = eps.sub(&x_cond.scale(gamma)?)?;
    Ok(v_pred.sub(&target)?.square()?.mean()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn interpolate_examples() {
        let x = t(&[2], &[1.0, -3.0]);
        let e = t(&[2], &[0.5, 4.0]);
        assert_eq!(interpolate(&x, &e, 0.0).unwrap(), x);
        assert_eq!(interpolate(&x, &e, 1.0).unwrap(), e);
        let z = interpolate(&t(&[1], &[0.0]), &t(&[1], &[2.0]), 0.25).unwrap();
        assert_eq!(z.data(), &[0.5]);
        assert!(matches!(interpolate(&x, &e, -0.1), Err(DenoiserError::TimeOutOfRange(_))));
        assert!(interpolate(&x, &t(&[3], &[0.0; 3]), 0.5).is_err());
    }

    #[test]
    fn velocity_examples() {
        let x = t(&[2], &[1.0, 2.0]);
        assert_eq!(velocity_target(&x, &x).unwrap().data(), &[0.0, 0.0]);
        assert_eq!(velocity_target(&t(&[2], &[0.0, 0.0]), &x).unwrap(), x);
        assert_eq!(velocity_target(&x, &t(&[2], &[3.0, 3.0])).unwrap().data(), &[2.0, 1.0]);
    }

    #[test]
    fn semantic_reference_examples() {
        let a = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(semantic_reference(&[&a], 3, 2).unwrap(), a);
        assert_eq!(semantic_reference(&[&a, &a], 3, 2).unwrap(), a);

        let two = t(&[2, 2], &[0.0, 10.0, 2.0, 20.0]);
        let r = semantic_reference(&[&two], 3, 2).unwrap();
        assert_eq!(r.data(), &[0.0, 10.0, 1.0, 15.0, 2.0, 20.0]);

        assert_eq!(semantic_reference(&[], 2, 3).unwrap(), Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn semantic_reference_downsamples() {
        let a = t(&[5, 1], &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(semantic_reference(&[&a], 3, 1).unwrap().data(), &[0.0, 2.0, 4.0]);
        assert_eq!(semantic_reference(&[&a], 1, 1).unwrap().data(), &[2.0]);
    }

    #[test]
    fn block_forcing_examples() {
        let e = t(&[2], &[1.0, -2.0]);
        let zero = Tensor::zeros(&[2]);
        assert_eq!(block_forcing_loss(&e, &e, &zero, 0.0).unwrap().item(), 0.0);
        let one = |v: f64| t(&[1], &[v]);
        let l = block_forcing_loss(&one(1.0), &one(2.0), &one(2.0), 0.5).unwrap();
        assert_eq!(l.item(), 0.0);
        let v = t(&[2], &[0.0, 0.0]);
        assert_eq!(block_forcing_loss(&v, &e, &e, 0.0).unwrap().item(), 2.5);
    }
}
