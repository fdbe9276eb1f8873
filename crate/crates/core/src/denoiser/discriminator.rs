use super::{DenoiserError, ParamStore, Result};
use crate::rng::RandomSource;
use crate::tensor::Tensor;

const SCORE_CLAMP: f64 = 1e-6;

/// Scores a whole latent video `[frames, latent_dim]` as real, in `(0, 1)`.
pub trait VideoDiscriminator {
    fn score(&self, video: &Tensor) -> Result<Tensor>;
}

/// Per-frame linear layer with SiLU, mean-pooled over frames, then a
/// linear logistic read-out clamped to `[1e-6, 1 - 1e-6]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    latent_dim: usize,
    hidden: usize,
    params: ParamStore,
}

impl Discriminator {
    pub fn new(latent_dim: usize, hidden: usize, rng: &mut RandomSource) -> Result<Self> {
        if latent_dim == 0 || hidden == 0 {
            return Err(DenoiserError::Config("discriminator dimensions must be >= 1".into()));
        }
        let mut params = ParamStore::new();
        params.insert_normal("w1", &[latent_dim, hidden], 1.0 / (latent_dim as f64).sqrt(), rng);
        params.insert_zeros("b1", &[hidden]);
        params.insert_normal("w2", &[hidden, 1], 1.0 / (hidden as f64).sqrt(), rng);
        params.insert_zeros("b2", &[1]);
        Ok(Self {
            latent_dim,
            hidden,
            params,
        })
    }

    pub fn from_params(params: ParamStore) -> Result<Self> {
        let w1 = params.get("w1")?.shape().to_vec();
        let &[latent_dim, hidden] = w1.as_slice() else {
            return Err(DenoiserError::Invalid("discriminator w1 must be 2-d".into()));
        };
        let expect = [
            ("b1", vec![hidden]),
            ("w2", vec![hidden, 1]),
            ("b2", vec![1]),
        ];
        for (name, shape) in expect {
            if params.get(name)?.shape() != shape.as_slice() {
                return Err(DenoiserError::Invalid(format!("discriminator {name} has the wrong shape")));
            }
        }
        if params.len() != 4 {
            return Err(DenoiserError::Invalid("discriminator expects exactly 4 tensors".into()));
        }
        Ok(Self {
            latent_dim,
            hidden,
            params,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
}

impl VideoDiscriminator for Discriminator {
    fn score(&self, video: &Tensor) -> Result<Tensor> {
        let &[frames, dim] = video.shape() else {
            return Err(DenoiserError::Invalid(format!("video must be 2-d, got {:?}", video.shape())));
        };
        if dim != self.latent_dim {
            return Err(DenoiserError::Invalid(format!(
                "discriminator expects latent_dim {}, got {dim}",
                self.latent_dim
            )));
        }
        let p = &self.params;
        let h = video.matmul(p.get("w1")?)?.add_row(p.get("b1")?)?.silu()?;
        let pool = Tensor::full(&[1, frames], 1.0 / frames as f64);
        let logit = pool.matmul(&h)?.matmul(p.get("w2")?)?.add_row(p.get("b2")?)?;
        Ok(logit.sigmoid()?.clamp(SCORE_CLAMP, 1.0 - SCORE_CLAMP)?.reshape(&[1])?)
    }
}

fn mean_log(scores: &[Tensor], complement: bool) -> Result<Tensor> {
    let mut acc: Option<Tensor> = None;
    for s in scores {
        let term = if complement {
            s.scale(-1.0)?.add(&Tensor::full(&[1], 1.0))?.ln()?
        } else {
            s.ln()?
        };
        acc = Some(match acc {
            Some(a) => a.add(&term)?,
            None => term,
        });
    }
    let total = acc.expect("non-empty score list");
    Ok(total.scale(1.0 / scores.len() as f64)?)
}

/// Adversarial losses over whole videos:
/// `loss_d = -mean ln D(real) - mean ln(1 - D(fake))` and
/// `loss_g = mean ln(1 - D(fake))`.
pub fn self_forcing_loss(
    d: &dyn VideoDiscriminator,
    real: &[Tensor],
    fake: &[Tensor],
) -> Result<(Tensor, Tensor)> {
    if real.is_empty() || fake.is_empty() {
        return Err(DenoiserError::Invalid("self forcing needs non-empty real and fake lists".into()));
    }
    let real_scores = real.iter().map(|v| d.score(v)).collect::<Result<Vec<_>>>()?;
    let fake_scores = fake.iter().map(|v| d.score(v)).collect::<Result<Vec<_>>>()?;
    check_scores(&real_scores)?;
    check_scores(&fake_scores)?;
    let log_fake = mean_log(&fake_scores, true)?;
    let loss_d = mean_log(&real_scores, false)?.add(&log_fake)?.scale(-1.0)?;
    Ok((loss_d, log_fake))
}

fn check_scores(scores: &[Tensor]) -> Result<()> {
    for s in scores {
        let v = s.item();
        if !(v > 0.0 && v < 1.0) {
            return Err(DenoiserError::Invalid(format!("discriminator score {v} outside (0, 1)")));
        }
    }
    Ok(())
}
