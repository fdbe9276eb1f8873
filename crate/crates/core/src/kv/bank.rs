use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use super::{CacheConfig, KvError, Result, SparseKV};
use crate::tensor::{cosine_similarity, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct BankEntry {
    pub kv: SparseKV,
    pub embedding: Vec<f64>,
}

/// Sparse KV caches of past chunks, keyed by chunk index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KVBank {
    entries: BTreeMap<usize, BankEntry>,
    capacity: Option<usize>,
}

/// Context for one chunk: the chunks it was drawn from and their
/// concatenated keys and values, `[heads, tokens, d]`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextKv {
    pub seq_ctx: Vec<usize>,
    pub semantic: Vec<usize>,
    kv: Option<(Tensor, Tensor)>,
}

impl ContextKv {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Wraps explicit context tensors that did not come from a bank.
    pub fn from_tensors(keys: Tensor, values: Tensor) -> Result<Self> {
        if keys.shape().len() != 3 || keys.shape() != values.shape() {
            return Err(KvError::Invalid("context keys/values must share [heads, tokens, d]".into()));
        }
        Ok(Self {
            seq_ctx: Vec::new(),
            semantic: Vec::new(),
            kv: Some((keys, values)),
        })
    }

    /// Chunk indices in concatenation order.
    pub fn chunks(&self) -> Vec<usize> {
        self.seq_ctx.iter().chain(&self.semantic).copied().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.kv.is_none()
    }

    pub fn tokens(&self) -> usize {
        self.kv.as_ref().map_or(0, |(k, _)| k.shape()[1])
    }

    pub fn keys(&self) -> Option<&Tensor> {
        self.kv.as_ref().map(|(k, _)| k)
    }

    pub fn values(&self) -> Option<&Tensor> {
        self.kv.as_ref().map(|(_, v)| v)
    }
}

impl KVBank {
    pub fn new(capacity: Option<usize>) -> Self {
        Self {
            entries: BTreeMap::new(),
            capacity,
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, chunk: usize) -> Option<&BankEntry> {
        self.entries.get(&chunk)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.keys().copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (usize, &BankEntry)> + '_ {
        self.entries.iter().map(|(&i, e)| (i, e))
    }

    pub fn embed_dim(&self) -> Option<usize> {
        self.entries.values().next().map(|e| e.embedding.len())
    }

    /// Total retained tokens across all entries.
    pub fn total_tokens(&self) -> usize {
        self.entries.values().map(|e| e.kv.kept()).sum()
    }

    /// Stores `kv` under `chunk`, replacing any previous entry. When the
    /// bank exceeds its capacity the lowest chunk index is evicted.
    pub fn insert(&mut self, chunk: usize, kv: SparseKV, embedding: Vec<f64>) -> Result<()> {
        if let Some((_, other)) = self.entries.iter().find(|(&i, _)| i != chunk) {
            if other.embedding.len() != embedding.len() {
                return Err(KvError::Mismatch {
                    what: "embedding dimension",
                    expected: other.embedding.len(),
                    got: embedding.len(),
                });
            }
            if other.kv.heads() != kv.heads() || other.kv.head_dim() != kv.head_dim() {
                return Err(KvError::Invalid(format!(
                    "bank holds [{}, _, {}] caches, got [{}, _, {}]",
                    other.kv.heads(),
                    other.kv.head_dim(),
                    kv.heads(),
                    kv.head_dim()
                )));
            }
        }
        self.entries.insert(chunk, BankEntry { kv, embedding });
        if let Some(cap) = self.capacity {
            while self.entries.len() > cap {
                self.entries.pop_first();
            }
        }
        Ok(())
    }

    /// Up to `l` chunk indices not in `exclude`, by descending cosine
    /// similarity to `query`; ties go to the more recent chunk.
    pub fn retrieve_semantic(&self, query: &[f64], l: usize, exclude: &BTreeSet<usize>) -> Result<Vec<usize>> {
        if l == 0 {
            return Ok(Vec::new());
        }
        let mut scored = Vec::new();
        for (&i, e) in &self.entries {
            if exclude.contains(&i) {
                continue;
            }
            // `+ 0.0` folds -0.0 into 0.0 so that orthogonal entries tie.
            scored.push((i, cosine_similarity(query, &e.embedding)? + 0.0));
        }
        scored.sort_unstable_by(|a, b| match b.1.total_cmp(&a.1) {
            Ordering::Equal => b.0.cmp(&a.0),
            o => o,
        });
        Ok(scored.into_iter().take(l).map(|(i, _)| i).collect())
    }

    /// The context for chunk `current`: the `seq_ctx_len` most recent
    /// earlier chunks (ascending) followed by the `top_l` most similar
    /// remaining earlier chunks.
    pub fn assemble_context(&self, current: usize, query: &[f64], cfg: &CacheConfig) -> Result<ContextKv> {
        let earlier: Vec<usize> = self.entries.range(..current).map(|(&i, _)| i).collect();
        let seq_start = earlier.len().saturating_sub(cfg.seq_ctx_len);
        let seq_ctx = earlier[seq_start..].to_vec();
        let exclude: BTreeSet<usize> = seq_ctx
            .iter()
            .copied()
            .chain(self.entries.range(current..).map(|(&i, _)| i))
            .collect();
        let semantic = self.retrieve_semantic(query, cfg.top_l, &exclude)?;

        let chosen: Vec<&SparseKV> = seq_ctx
            .iter()
            .chain(&semantic)
            .map(|i| &self.entries[i].kv)
            .collect();
        let kv = if chosen.is_empty() {
            None
        } else {
            let keys: Vec<&Tensor> = chosen.iter().map(|kv| kv.keys()).collect();
            let values: Vec<&Tensor> = chosen.iter().map(|kv| kv.values()).collect();
            Some((Tensor::concat(&keys, 1)?, Tensor::concat(&values, 1)?))
        };
        Ok(ContextKv { seq_ctx, semantic, kv })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A one-head, one-token cache whose single key value is `marker`.
    fn kv(marker: f64) -> SparseKV {
        let t = Tensor::new(&[1, 1, 2], vec![marker, 0.0]).unwrap();
        SparseKV::new(t.clone(), t, vec![0], 1).unwrap()
    }

    fn bank_with(indices: &[usize], embed: impl Fn(usize) -> Vec<f64>) -> KVBank {
        let mut b = KVBank::new(None);
        for &i in indices {
            b.insert(i, kv(i as f64), embed(i)).unwrap();
        }
        b
    }

    #[test]
    fn insert_replace_and_evict() {
        let mut b = KVBank::new(None);
        b.insert(0, kv(0.0), vec![1.0, 0.0]).unwrap();
        assert_eq!(b.len(), 1);
        b.insert(0, kv(5.0), vec![0.0, 1.0]).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.get(0).unwrap().kv.keys().data()[0], 5.0);

        let mut capped = KVBank::new(Some(3));
        for i in 1..=4 {
            capped.insert(i, kv(i as f64), vec![1.0]).unwrap();
        }
        assert_eq!(capped.indices().collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn insert_checks_dimensions() {
        let mut b = KVBank::new(None);
        b.insert(0, kv(0.0), vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            b.insert(1, kv(1.0), vec![1.0]),
            Err(KvError::Mismatch { what: "embedding dimension", .. })
        ));
        let wide = Tensor::zeros(&[2, 1, 2]);
        let other = SparseKV::new(wide.clone(), wide, vec![0], 1).unwrap();
        assert!(b.insert(1, other, vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn orthogonal_entries_tie_whatever_the_sign_of_zero() {
        // Against [-1, 0], chunk 0 at [0, -1] scores -0.0 and chunk 1 at
        // [0, 1] scores +0.0.
        let q = [-1.0, 0.0];
        let b = bank_with(&[0, 1], |i| if i == 0 { vec![0.0, -1.0] } else { vec![0.0, 1.0] });
        assert_eq!(b.retrieve_semantic(&q, 1, &BTreeSet::new()).unwrap(), vec![1]);
        let b = bank_with(&[0, 1], |i| if i == 0 { vec![0.0, 1.0] } else { vec![0.0, -1.0] });
        assert_eq!(b.retrieve_semantic(&q, 1, &BTreeSet::new()).unwrap(), vec![1]);
    }

    #[test]
    fn retrieve_examples() {
        // Cosine similarities to [1, 0] of 0.9, 0.1 and 0.5.
        let sims = [0.9f64, 0.1, 0.5];
        let b = bank_with(&[0, 1, 2], |i| vec![sims[i], (1.0 - sims[i] * sims[i]).sqrt()]);
        let none = BTreeSet::new();
        assert!(b.retrieve_semantic(&[1.0, 0.0], 0, &none).unwrap().is_empty());
        assert_eq!(b.retrieve_semantic(&[1.0, 0.0], 2, &none).unwrap(), vec![0, 2]);
        assert_eq!(b.retrieve_semantic(&[1.0, 0.0], 10, &none).unwrap(), vec![0, 2, 1]);

        let same = bank_with(&[0, 1, 2], |_| vec![1.0, 1.0]);
        assert_eq!(same.retrieve_semantic(&[1.0, 0.0], 1, &none).unwrap(), vec![2]);
        assert!(matches!(
            same.retrieve_semantic(&[0.0, 0.0], 1, &none),
            Err(KvError::Tensor(_))
        ));
    }

    #[test]
    fn first_chunk_has_empty_context() {
        let b = KVBank::new(None);
        let ctx = b.assemble_context(1, &[1.0], &CacheConfig::default()).unwrap();
        assert!(ctx.is_empty());
        assert_eq!(ctx.tokens(), 0);
    }

    #[test]
    fn seq_ctx_consumes_short_history() {
        let b = bank_with(&[1, 2], |_| vec![1.0]);
        let ctx = b.assemble_context(3, &[1.0], &CacheConfig::default()).unwrap();
        assert_eq!(ctx.seq_ctx, vec![1, 2]);
        assert!(ctx.semantic.is_empty());
        assert_eq!(ctx.keys().unwrap().data(), &[1.0, 0.0, 2.0, 0.0]);
    }

    #[test]
    fn semantic_chunks_follow_recent_ones() {
        let b = bank_with(&[1, 2, 3, 4, 5], |i| if i == 1 || i == 3 { vec![1.0, 0.1] } else { vec![0.0, 1.0] });
        let ctx = b.assemble_context(6, &[1.0, 0.0], &CacheConfig::default()).unwrap();
        assert_eq!(ctx.chunks(), vec![4, 5, 3, 1]);
        let markers: Vec<f64> = ctx.keys().unwrap().data().iter().step_by(2).copied().collect();
        assert_eq!(markers, vec![4.0, 5.0, 3.0, 1.0]);
    }

    #[test]
    fn future_chunks_are_never_used() {
        let b = bank_with(&[0, 1, 2, 3, 4, 5, 6], |_| vec![1.0]);
        let ctx = b.assemble_context(3, &[1.0], &CacheConfig::default()).unwrap();
        assert_eq!(ctx.seq_ctx, vec![1, 2]);
        assert_eq!(ctx.semantic, vec![0]);
    }
}
