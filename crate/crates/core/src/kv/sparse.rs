//! Salient-token selection for one chunk's keys and values.

use std::cmp::Ordering;

use rand::seq::index;

use super::{CacheConfig, KvError, Result};
use crate::rng::RandomSource;
use crate::tensor::{Mask, Tensor};

/// The retained keys and values of one chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseKV {
    keys: Tensor,
    values: Tensor,
    kept_indices: Vec<usize>,
    source_len: usize,
}

impl SparseKV {
    /// `keys` and `values` are `[heads, kept, d]`; `kept_indices` are the
    /// original token positions, strictly ascending and below `source_len`.
    pub fn new(keys: Tensor, values: Tensor, kept_indices: Vec<usize>, source_len: usize) -> Result<Self> {
        if keys.shape().len() != 3 || keys.shape() != values.shape() {
            return Err(KvError::Invalid(format!(
                "keys {:?} and values {:?} must share a [heads, kept, d] shape",
                keys.shape(),
                values.shape()
            )));
        }
        if kept_indices.len() != keys.shape()[1] {
            return Err(KvError::Mismatch {
                what: "kept token count",
                expected: keys.shape()[1],
                got: kept_indices.len(),
            });
        }
        if kept_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(KvError::Invalid("kept indices must be strictly ascending".into()));
        }
        if kept_indices.last().is_some_and(|&i| i >= source_len) {
            return Err(KvError::Invalid(format!(
                "kept index {} out of range for {source_len} source tokens",
                kept_indices.last().unwrap()
            )));
        }
        Ok(Self {
            keys: keys.detach(),
            values: values.detach(),
            kept_indices,
            source_len,
        })
    }

    pub fn keys(&self) -> &Tensor {
        &self.keys
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn kept_indices(&self) -> &[usize] {
        &self.kept_indices
    }

    pub fn source_len(&self) -> usize {
        self.source_len
    }

    pub fn heads(&self) -> usize {
        self.keys.shape()[0]
    }

    pub fn kept(&self) -> usize {
        self.keys.shape()[1]
    }

    pub fn head_dim(&self) -> usize {
        self.keys.shape()[2]
    }
}

/// Probe query positions: the most recent `probe_recent` tokens plus up to
/// `probe_random` distinct older ones, ascending.
pub fn select_probe_indices(q_len: usize, cfg: &CacheConfig, rng: &mut RandomSource) -> Vec<usize> {
    let recent = cfg.probe_recent.min(q_len);
    let older = q_len - recent;
    let mut picked: Vec<usize> = if older > 0 {
        index::sample(rng, older, cfg.probe_random.min(older)).into_vec()
    } else {
        Vec::new()
    };
    picked.sort_unstable();
    picked.extend(older..q_len);
    picked
}

/// Sums attention `[heads, probe, q_len]` over heads and probes, then takes
/// the running mean: `m[j] = mean(s[0..=j])`.
pub fn importance_vector(attention: &Tensor) -> Result<Tensor> {
    let &[heads, probes, q_len] = attention.shape() else {
        return Err(KvError::Invalid(format!(
            "attention must be [heads, probe, q_len], got {:?}",
            attention.shape()
        )));
    };
    let a = attention.data();
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(KvError::Invalid("attention entries must be finite and nonnegative".into()));
    }
    let mut s = vec![0.0; q_len];
    for row in a.chunks(q_len).take(heads * probes) {
        for (acc, v) in s.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let mut running = 0.0;
    let m = s
        .iter()
        .enumerate()
        .map(|(j, v)| {
            running += v;
            running / (j + 1) as f64
        })
        .collect();
    Ok(Tensor::new(&[q_len], m)?)
}

/// Smallest `k` such that the `k` largest entries of `m` sum to at least
/// `tau * sum(m)`.
pub fn cover_count(m: &[f64], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(KvError::Config(format!("tau must be in (0, 1], got {tau}")));
    }
    if m.iter().any(|v| *v < 0.0 || !v.is_finite()) {
        return Err(KvError::Invalid("importance must be finite and nonnegative".into()));
    }
    let mut sorted = m.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    if total <= 0.0 {
        return Err(KvError::DegenerateImportance);
    }
    // Full coverage is exactly the support; avoids prefix sums that round
    // to the total before the last positive entry.
    if tau == 1.0 {
        return Ok(sorted.iter().take_while(|v| **v > 0.0).count());
    }
    let target = tau * total;
    let mut prefix = 0.0;
    for (k, v) in sorted.iter().enumerate() {
        prefix += v;
        if prefix >= target {
            return Ok(k + 1);
        }
    }
    Ok(sorted.len())
}

/// Indices of the `count` largest entries, ascending. Ties go to the more
/// recent (higher) index.
pub fn top_indices(m: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..m.len()).collect();
    // `+ 0.0` folds -0.0 into 0.0 so the two compare as a tie.
    order.sort_unstable_by(|&a, &b| match (m[b] + 0.0).total_cmp(&(m[a] + 0.0)) {
        Ordering::Equal => b.cmp(&a),
        o => o,
    });
    order.truncate(count);
    order.sort_unstable();
    order
}

fn gather_tokens(t: &Tensor, keep: &[usize]) -> Result<Tensor> {
    let &[heads, len, d] = t.shape() else {
        unreachable!("validated by caller")
    };
    let src = t.data();
    let mut out = Vec::with_capacity(heads * keep.len() * d);
    for h in 0..heads {
        for &j in keep {
            let base = (h * len + j) * d;
            out.extend_from_slice(&src[base..base + d]);
        }
    }
    Ok(Tensor::new(&[heads, keep.len(), d], out)?)
}

/// Attention of the probe queries over all keys, `[heads, probe, q_len]`.
/// A probe at position `p` sees keys `0..=p`.
fn probe_attention(k: &Tensor, q: &Tensor, probes: &[usize]) -> Result<Tensor> {
    let &[heads, q_len, d] = k.shape() else {
        unreachable!("validated by caller")
    };
    let scale = 1.0 / (d as f64).sqrt();
    let (kd, qd) = (k.data(), q.data());
    let p = probes.len();
    let mut logits = Vec::with_capacity(heads * p * q_len);
    for h in 0..heads {
        for &pi in probes {
            let qrow = &qd[(h * q_len + pi) * d..(h * q_len + pi + 1) * d];
            for j in 0..q_len {
                let krow = &kd[(h * q_len + j) * d..(h * q_len + j + 1) * d];
                let dot: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum();
                logits.push(dot * scale);
            }
        }
    }
    let mask = Mask::from_fn(&[heads, p, q_len], |i| i[2] <= probes[i[1]]);
    Ok(Tensor::new(&[heads, p, q_len], logits)?.masked_softmax(&mask)?)
}

/// Keeps the tokens that cover a `tau` fraction of probe attention.
///
/// `k`, `v` and `q` are `[heads, q_len, d]`. A single-token input is
/// returned whole.
pub fn build_sparse_kv(
    k: &Tensor,
    v: &Tensor,
    q: &Tensor,
    cfg: &CacheConfig,
    rng: &mut RandomSource,
) -> Result<SparseKV> {
    cfg.validate()?;
    if k.shape().len() != 3 || k.shape() != v.shape() || k.shape() != q.shape() {
        return Err(KvError::Invalid(format!(
            "K {:?}, V {:?} and Q {:?} must share a [heads, q_len, d] shape",
            k.shape(),
            v.shape(),
            q.shape()
        )));
    }
    let q_len = k.shape()[1];
    if q_len == 1 {
        return SparseKV::new(k.clone(), v.clone(), vec![0], 1);
    }
    let probes = select_probe_indices(q_len, cfg, rng);
    let attention = probe_attention(k, q, &probes)?;
    let m = importance_vector(&attention)?;
    let count = cover_count(m.data(), cfg.tau)?;
    let keep = top_indices(m.data(), count);
    SparseKV::new(gather_tokens(k, &keep)?, gather_tokens(v, &keep)?, keep, q_len)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(tau: f64) -> CacheConfig {
        CacheConfig {
            tau,
            ..CacheConfig::default()
        }
    }

    fn random(shape: &[usize], rng: &mut RandomSource) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape, rng.normals(n)).unwrap()
    }

    #[test]
    fn probes_clamp_to_short_inputs() {
        let mut rng = RandomSource::new(1);
        let c = CacheConfig::default();
        assert_eq!(select_probe_indices(64, &c, &mut rng), (0..64).collect::<Vec<_>>());
        assert_eq!(select_probe_indices(1, &c, &mut rng), vec![0]);
    }

    #[test]
    fn probes_for_long_inputs() {
        let mut rng = RandomSource::new(2);
        let p = select_probe_indices(200, &CacheConfig::default(), &mut rng);
        assert_eq!(p.len(), 128);
        assert_eq!(&p[64..], &(136..200).collect::<Vec<_>>()[..]);
        assert!(p[..64].iter().all(|&i| i < 136));
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn probes_with_small_random_range() {
        let mut rng = RandomSource::new(3);
        let p = select_probe_indices(70, &CacheConfig::default(), &mut rng);
        assert_eq!(p, (0..70).collect::<Vec<_>>());
    }

    #[test]
    fn importance_examples() {
        let a = Tensor::new(&[1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(importance_vector(&a).unwrap().data(), &[1.0, 1.0, 1.0]);
        // s = [3, 1] split across two heads.
        let a = Tensor::new(&[2, 1, 2], vec![2.0, 0.5, 1.0, 0.5]).unwrap();
        assert_eq!(importance_vector(&a).unwrap().data(), &[3.0, 2.0]);
        let a = Tensor::new(&[1, 1, 2], vec![0.5, 0.5]).unwrap();
        assert_eq!(importance_vector(&a).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn importance_rejects_bad_input() {
        assert!(importance_vector(&Tensor::zeros(&[2, 2])).is_err());
        let neg = Tensor::new(&[1, 1, 2], vec![-0.5, 1.5]).unwrap();
        assert!(importance_vector(&neg).is_err());
    }

    #[test]
    fn signed_zeros_tie() {
        assert_eq!(top_indices(&[0.0, -0.0, 1.0], 2), vec![1, 2]);
        assert_eq!(top_indices(&[-0.0, 0.0, 1.0], 2), vec![1, 2]);
    }

    #[test]
    fn cover_count_examples() {
        assert_eq!(cover_count(&[0.1; 10], 0.5).unwrap(), 5);
        assert_eq!(cover_count(&[0.3, 0.2, 0.1, 0.4], 1.0).unwrap(), 4);
        assert_eq!(cover_count(&[0.3, 0.0, 0.1], 1.0).unwrap(), 2);
        assert_eq!(cover_count(&[0.9, 0.05, 0.05], 0.9).unwrap(), 1);
        assert!(matches!(cover_count(&[0.0; 3], 0.5), Err(KvError::DegenerateImportance)));
        assert!(cover_count(&[1.0], 0.0).is_err());
    }

    #[test]
    fn top_indices_prefers_recent_on_ties() {
        assert_eq!(top_indices(&[1.0, 1.0, 1.0], 2), vec![1, 2]);
        assert_eq!(top_indices(&[3.0, 1.0, 2.0], 2), vec![0, 2]);
    }

    #[test]
    fn keep_all_at_full_coverage() {
        let mut rng = RandomSource::new(4);
        let k = random(&[2, 20, 4], &mut rng);
        let v = random(&[2, 20, 4], &mut rng);
        let q = random(&[2, 20, 4], &mut rng);
        let kv = build_sparse_kv(&k, &v, &q, &cfg(1.0), &mut rng).unwrap();
        assert_eq!(kv.kept_indices(), &(0..20).collect::<Vec<_>>()[..]);
        assert_eq!(kv.keys(), &k);
        assert_eq!(kv.values(), &v);
    }

    #[test]
    fn decode_branch_keeps_single_token() {
        let mut rng = RandomSource::new(5);
        let k = random(&[3, 1, 4], &mut rng);
        let v = random(&[3, 1, 4], &mut rng);
        let kv = build_sparse_kv(&k, &v, &k, &cfg(0.1), &mut rng).unwrap();
        assert_eq!(kv.keys(), &k);
        assert_eq!(kv.values(), &v);
        assert_eq!(kv.kept_indices(), &[0]);
    }

    #[test]
    fn dominant_token_is_kept() {
        // One head; every query aligns with key 7 far more than any other.
        let (n, d) = (32, 4);
        let mut kd = vec![0.0; n * d];
        kd[7 * d] = 50.0;
        let mut qd = vec![0.0; n * d];
        for i in 0..n {
            qd[i * d] = 1.0;
        }
        let k = Tensor::new(&[1, n, d], kd).unwrap();
        let q = Tensor::new(&[1, n, d], qd).unwrap();
        let mut rng = RandomSource::new(6);
        for tau in [0.05, 0.3, 0.6, 0.9] {
            let kv = build_sparse_kv(&k, &k, &q, &cfg(tau), &mut rng).unwrap();
            assert!(kv.kept_indices().contains(&7), "tau {tau}: {:?}", kv.kept_indices());
        }
    }

    #[test]
    fn kept_count_is_monotone_in_tau() {
        let mut rng = RandomSource::new(7);
        for _ in 0..20 {
            let k = random(&[2, 40, 4], &mut rng);
            let v = random(&[2, 40, 4], &mut rng);
            let q = random(&[2, 40, 4], &mut rng);
            let mut last = 0;
            for step in 1..=20 {
                let tau = step as f64 / 20.0;
                let mut r = RandomSource::new(11);
                let kept = build_sparse_kv(&k, &v, &q, &cfg(tau), &mut r).unwrap().kept();
                assert!(kept >= last);
                last = kept;
            }
        }
    }

    #[test]
    fn sparse_kv_invariants_are_enforced() {
        let k = Tensor::zeros(&[1, 2, 2]);
        assert!(SparseKV::new(k.clone(), k.clone(), vec![1, 0], 3).is_err());
        assert!(SparseKV::new(k.clone(), k.clone(), vec![0, 3], 3).is_err());
        assert!(SparseKV::new(k.clone(), k.clone(), vec![0], 3).is_err());
        assert!(SparseKV::new(k.clone(), k, vec![0, 2], 3).is_ok());
    }
}
