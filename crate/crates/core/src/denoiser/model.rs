use super::{DenoiserConfig, DenoiserError, ParamStore, Result};
use crate::kv::ContextKv;
use crate::rng::RandomSource;
use crate::tensor::Tensor;

const LN_EPS: f64 = 1e-5;
const TIME_FREQS: usize = 8;

/// Cached context split per head slot: `keys[s]` and `values[s]` are
/// `[tokens, head_dim]` for slot `s = layer * n_heads + head`.
#[derive(Debug, Clone, Default)]
pub struct PreparedContext {
    keys: Vec<Tensor>,
    values: Vec<Tensor>,
}

impl PreparedContext {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Splits a bank context into per-slot tensors. Context is conditioning
    /// only, so the tensors are detached from any graph.
    pub fn new(ctx: &ContextKv, cfg: &DenoiserConfig) -> Result<Self> {
        let (Some(k), Some(v)) = (ctx.keys(), ctx.values()) else {
            return Ok(Self::empty());
        };
        let &[heads, tokens, dim] = k.shape() else {
            return Err(DenoiserError::Invalid(format!("context keys must be 3-d, got {:?}", k.shape())));
        };
        if heads != cfg.kv_heads() || dim != cfg.head_dim {
            return Err(DenoiserError::ContextMismatch {
                heads: cfg.kv_heads(),
                dim: cfg.head_dim,
                got_heads: heads,
                got_dim: dim,
            });
        }
        let split = |t: &Tensor| -> Result<Vec<Tensor>> {
            (0..heads)
                .map(|s| Ok(t.narrow(0, s, 1)?.reshape(&[tokens, dim])?.detach()))
                .collect()
        };
        Ok(Self {
            keys: split(k)?,
            values: split(v)?,
        })
    }

    pub fn tokens(&self) -> usize {
        self.keys.first().map_or(0, |k| k.shape()[0])
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

/// Velocity prediction plus the chunk's own per-slot keys, values and
/// queries, each `[kv_heads, tokens, head_dim]` and untracked.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub v_pred: Tensor,
    pub keys: Tensor,
    pub values: Tensor,
    pub queries: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockDenoiser {
    cfg: DenoiserConfig,
    params: ParamStore,
}

fn time_features(t: f64) -> Tensor {
    let mut f = Vec::with_capacity(2 * TIME_FREQS);
    for k in 0..TIME_FREQS {
        let w = (1u32 << k) as f64;
        f.push((w * t).sin());
        f.push((w * t).cos());
    }
    Tensor::new(&[1, 2 * TIME_FREQS], f).expect("finite features")
}

/// Expected parameter names and shapes for `cfg`.
fn param_shapes(cfg: &DenoiserConfig) -> Vec<(String, Vec<usize>)> {
    let (d, p, l) = (cfg.d_model, cfg.patch_dim(), cfg.tokens());
    let mut v = vec![
        ("embed.in.w".to_string(), vec![p, d]),
        ("embed.in.b".to_string(), vec![d]),
        ("embed.pos".to_string(), vec![l, d]),
        ("embed.time.w".to_string(), vec![2 * TIME_FREQS, d]),
        ("embed.time.b".to_string(), vec![d]),
        ("embed.prompt.w".to_string(), vec![cfg.embed_dim, d]),
    ];
    for i in 0..cfg.n_layers {
        for m in ["wq", "wk", "wv", "wo"] {
            v.push((format!("block{i}.{m}"), vec![d, d]));
        }
        v.push((format!("block{i}.ff1.w"), vec![d, cfg.ff_dim]));
        v.push((format!("block{i}.ff1.b"), vec![cfg.ff_dim]));
        v.push((format!("block{i}.ff2.w"), vec![cfg.ff_dim, d]));
        v.push((format!("block{i}.ff2.b"), vec![d]));
    }
    v.push(("out.w".to_string(), vec![d, p]));
    v.push(("out.b".to_string(), vec![p]));
    v
}

impl BlockDenoiser {
    /// Random initialization: weights `N(0, 1/fan_in)`, biases zero,
    /// positional table `N(0, 0.01)`.
    pub fn new(cfg: DenoiserConfig, rng: &mut RandomSource) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        for (name, shape) in param_shapes(&cfg) {
            if name.ends_with(".b") {
                params.insert_zeros(&name, &shape);
            } else if name == "embed.pos" {
                params.insert_normal(&name, &shape, 0.1, rng);
            } else {
                params.insert_normal(&name, &shape, 1.0 / (shape[0] as f64).sqrt(), rng);
            }
        }
        Ok(Self { cfg, params })
    }

    /// Wraps an existing store, checking names and shapes.
    pub fn from_params(cfg: DenoiserConfig, params: ParamStore) -> Result<Self> {
        cfg.validate()?;
        let expected = param_shapes(&cfg);
        if params.len() != expected.len() {
            return Err(DenoiserError::Invalid(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let got = params.get(name)?.shape();
            if got != shape.as_slice() {
                return Err(DenoiserError::Invalid(format!("parameter {name}: expected {shape:?}, got {got:?}")));
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    /// Velocity prediction for noisy chunk `x_t` (`[chunk_len, latent_dim]`).
    pub fn forward(&self, x_t: &Tensor, t: f64, ctx: &PreparedContext, prompt: &Tensor) -> Result<Tensor> {
        Ok(self.run(x_t, t, ctx, prompt, false)?.v_pred)
    }

    /// As [`forward`](Self::forward), also returning the chunk's own keys,
    /// values and queries for cache construction.
    pub fn forward_kv(&self, x_t: &Tensor, t: f64, ctx: &PreparedContext, prompt: &Tensor) -> Result<ForwardOutput> {
        self.run(x_t, t, ctx, prompt, true)
    }

    fn run(&self, x_t: &Tensor, t: f64, ctx: &PreparedContext, prompt: &Tensor, record: bool) -> Result<ForwardOutput> {
        let cfg = &self.cfg;
        let p = &self.params;
        if x_t.shape() != [cfg.chunk_len, cfg.latent_dim] {
            return Err(DenoiserError::Invalid(format!(
                "x_t must be [{}, {}], got {:?}",
                cfg.chunk_len,
                cfg.latent_dim,
                x_t.shape()
            )));
        }
        if prompt.numel() != cfg.embed_dim {
            return Err(DenoiserError::Invalid(format!(
                "prompt embedding must have {} entries, got {}",
                cfg.embed_dim,
                prompt.numel()
            )));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(DenoiserError::TimeOutOfRange(t));
        }
        if !ctx.is_empty() && ctx.keys.len() != cfg.kv_heads() {
            return Err(DenoiserError::ContextMismatch {
                heads: cfg.kv_heads(),
                dim: cfg.head_dim,
                got_heads: ctx.keys.len(),
                got_dim: ctx.keys[0].shape()[1],
            });
        }
        let (l, hd) = (cfg.tokens(), cfg.head_dim);

        let tokens = x_t.reshape(&[l, cfg.patch_dim()])?;
        let cond = time_features(t)
            .matmul(p.get("embed.time.w")?)?
            .add_row(p.get("embed.time.b")?)?
            .add(&prompt.reshape(&[1, cfg.embed_dim])?.matmul(p.get("embed.prompt.w")?)?)?;
        let mut h = tokens
            .matmul(p.get("embed.in.w")?)?
            .add_row(p.get("embed.in.b")?)?
            .add(p.get("embed.pos")?)?
            .add_row(&cond)?;

        let mut rec_k = Vec::new();
        let mut rec_v = Vec::new();
        let mut rec_q = Vec::new();
        let scale = 1.0 / (hd as f64).sqrt();
        for layer in 0..cfg.n_layers {
            let w = |m: &str| p.get(&format!("block{layer}.{m}"));
            let a = h.layer_norm(LN_EPS)?;
            let q = a.matmul(w("wq")?)?;
            let k = a.matmul(w("wk")?)?;
            let v = a.matmul(w("wv")?)?;
            let mut heads = Vec::with_capacity(cfg.n_heads);
            for head in 0..cfg.n_heads {
                let slot = layer * cfg.n_heads + head;
                let qh = q.narrow(1, head * hd, hd)?;
                let kh = k.narrow(1, head * hd, hd)?;
                let vh = v.narrow(1, head * hd, hd)?;
                if record {
                    rec_q.push(qh.detach());
                    rec_k.push(kh.detach());
                    rec_v.push(vh.detach());
                }
                let (keys, values) = if ctx.is_empty() {
                    (kh, vh)
                } else {
                    (
                        Tensor::concat(&[&ctx.keys[slot], &kh], 0)?,
                        Tensor::concat(&[&ctx.values[slot], &vh], 0)?,
                    )
                };
                let att = qh.matmul(&keys.transpose()?)?.scale(scale)?.softmax()?;
                heads.push(att.matmul(&values)?);
            }
            let refs: Vec<&Tensor> = heads.iter().collect();
            h = h.add(&Tensor::concat(&refs, 1)?.matmul(w("wo")?)?)?;
            let f = h
                .layer_norm(LN_EPS)?
                .matmul(w("ff1.w")?)?
                .add_row(w("ff1.b")?)?
                .silu()?
                .matmul(w("ff2.w")?)?
                .add_row(w("ff2.b")?)?;
            h = h.add(&f)?;
        }
        let out = h
            .layer_norm(LN_EPS)?
            .matmul(p.get("out.w")?)?
            .add_row(p.get("out.b")?)?
            .reshape(&[cfg.chunk_len, cfg.latent_dim])?;

        let stack = |parts: Vec<Tensor>| -> Result<Tensor> {
            if parts.is_empty() {
                return Ok(Tensor::zeros(&[1]));
            }
            let refs: Vec<&Tensor> = parts.iter().collect();
            Ok(Tensor::concat(&refs, 0)?.reshape(&[parts.len(), l, hd])?)
        };
        Ok(ForwardOutput {
            v_pred: out,
            keys: stack(rec_k)?,
            values: stack(rec_v)?,
            queries: stack(rec_q)?,
        })
    }
}
