use std::collections::BTreeSet;

use lvcore::kv::{build_sparse_kv, cover_count, top_indices, CacheConfig, KVBank, SparseKV};
use lvcore::{RandomSource, Tensor};
use proptest::prelude::*;

/// Dyadic importances keep every partial sum exact in any order.
fn dyadic(xs: &[u16]) -> Vec<f64> {
    xs.iter().map(|&x| x as f64 / 64.0).collect()
}

/// Smallest k whose best k-subset reaches the target, choosing each
/// member by repeated argmax.
fn cover_oracle(m: &[f64], tau: f64) -> usize {
    let target = tau * m.iter().sum::<f64>();
    let mut used = vec![false; m.len()];
    let mut acc = 0.0;
    for k in 1..=m.len() {
        let best = (0..m.len()).filter(|&i| !used[i]).max_by(|&a, &b| m[a].total_cmp(&m[b])).unwrap();
        used[best] = true;
        acc += m[best];
        if tau == 1.0 {
            if m.iter().enumerate().all(|(i, v)| used[i] || *v == 0.0) {
                return k;
            }
        } else if acc >= target {
            return k;
        }
    }
    m.len()
}

fn exhaustive_cover(m: &[f64], tau: f64) -> usize {
    let target = tau * m.iter().sum::<f64>();
    let n = m.len();
    (1..=n)
        .find(|&k| {
            (0u32..1 << n).filter(|s| s.count_ones() as usize == k).any(|s| {
                let sum: f64 = (0..n).filter(|i| s >> i & 1 == 1).map(|i| m[i]).sum();
                if tau == 1.0 {
                    (0..n).all(|i| s >> i & 1 == 1 || m[i] == 0.0)
                } else {
                    sum >= target
                }
            })
        })
        .unwrap()
}

fn top_oracle(m: &[f64], count: usize) -> Vec<usize> {
    (0..m.len())
        .filter(|&i| (0..m.len()).filter(|&j| m[j] > m[i] || (m[j] == m[i] && j > i)).count() < count)
        .collect()
}

fn tau_strategy() -> impl Strategy<Value = f64> {
    (1u32..=256).prop_map(|k| k as f64 / 256.0)
}

proptest! {
    #[test]
    fn cover_count_matches_greedy_oracle(xs in prop::collection::vec(0u16..200, 1..256), tau in tau_strategy()) {
        let m = dyadic(&xs);
        prop_assume!(m.iter().any(|v| *v > 0.0));
        prop_assert_eq!(cover_count(&m, tau).unwrap(), cover_oracle(&m, tau));
    }

    #[test]
    fn cover_count_matches_subset_enumeration(xs in prop::collection::vec(0u16..50, 1..11), tau in tau_strategy()) {
        let m = dyadic(&xs);
        prop_assume!(m.iter().any(|v| *v > 0.0));
        prop_assert_eq!(cover_count(&m, tau).unwrap(), exhaustive_cover(&m, tau));
    }

    #[test]
    fn cover_count_is_monotone_in_tau(xs in prop::collection::vec(1u16..200, 1..64), a in tau_strategy(), b in tau_strategy()) {
        let m = dyadic(&xs);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(cover_count(&m, lo).unwrap() <= cover_count(&m, hi).unwrap());
    }

    #[test]
    fn top_indices_match_rank_oracle(xs in prop::collection::vec(0u16..20, 1..256), frac in 0.0f64..=1.0) {
        let m = dyadic(&xs);
        let count = ((m.len() as f64) * frac).round() as usize;
        prop_assert_eq!(top_indices(&m, count), top_oracle(&m, count));
    }

    #[test]
    fn retrieval_matches_rank_oracle(
        embeds in prop::collection::vec(prop::collection::vec(-4i8..5, 3), 1..16),
        query in prop::collection::vec(-4i8..5, 3),
        l in 0usize..6,
        skip in prop::collection::btree_set(0usize..16, 0..4),
    ) {
        let to_f = |v: &[i8]| v.iter().map(|&x| x as f64).collect::<Vec<f64>>();
        prop_assume!(query.iter().any(|&x| x != 0));
        prop_assume!(embeds.iter().all(|e| e.iter().any(|&x| x != 0)));
        let mut bank = KVBank::new(None);
        let one = Tensor::zeros(&[1, 1, 1]);
        for (i, e) in embeds.iter().enumerate() {
            bank.insert(i, SparseKV::new(one.clone(), one.clone(), vec![0], 1).unwrap(), to_f(e)).unwrap();
        }
        let q = to_f(&query);
        let got = bank.retrieve_semantic(&q, l, &skip).unwrap();

        let cos = |e: &[f64]| lvcore::tensor::cosine_similarity(&q, e).unwrap();
        let cand: Vec<usize> = (0..embeds.len()).filter(|i| !skip.contains(i)).collect();
        let sims: Vec<f64> = cand.iter().map(|&i| cos(&to_f(&embeds[i]))).collect();
        let mut want: Vec<(usize, usize)> = cand
            .iter()
            .enumerate()
            .map(|(a, &i)| {
                let better = (0..cand.len()).filter(|&b| sims[b] > sims[a] || (sims[b] == sims[a] && cand[b] > i)).count();
                (better, i)
            })
            .filter(|(rank, _)| *rank < l)
            .collect();
        want.sort_unstable();
        prop_assert_eq!(got, want.into_iter().map(|(_, i)| i).collect::<Vec<_>>());
    }

    #[test]
    fn context_respects_causality_and_cardinality(n in 1usize..16, current in 0usize..20, l in 0usize..4, seq in 0usize..4) {
        let mut bank = KVBank::new(None);
        let one = Tensor::zeros(&[1, 1, 1]);
        for i in 0..n {
            bank.insert(i, SparseKV::new(one.clone(), one.clone(), vec![0], 1).unwrap(), vec![1.0, i as f64]).unwrap();
        }
        let cfg = CacheConfig { top_l: l, seq_ctx_len: seq, ..CacheConfig::default() };
        let ctx = bank.assemble_context(current, &[1.0, 0.5], &cfg).unwrap();
        let chunks = ctx.chunks();
        prop_assert!(chunks.iter().all(|&c| c < current));
        prop_assert!(chunks.len() <= seq + l);
        let unique: BTreeSet<usize> = chunks.iter().copied().collect();
        prop_assert_eq!(unique.len(), chunks.len());
        prop_assert_eq!(ctx.seq_ctx.len(), seq.min(current.min(n)));
    }
}

#[test]
fn full_coverage_and_decode_keep_everything() {
    let mut rng = RandomSource::new(3);
    for q_len in [1usize, 2, 17, 100] {
        let t = |rng: &mut RandomSource| Tensor::new(&[3, q_len, 4], rng.normals(12 * q_len)).unwrap();
        let (k, v, q) = (t(&mut rng), t(&mut rng), t(&mut rng));
        let cfg = CacheConfig { tau: 1.0, ..CacheConfig::default() };
        let kv = build_sparse_kv(&k, &v, &q, &cfg, &mut rng).unwrap();
        assert_eq!(kv.kept_indices(), (0..q_len).collect::<Vec<_>>());
        assert_eq!(kv.keys(), &k);
    }
    let one = Tensor::new(&[2, 1, 3], vec![1.0; 6]).unwrap();
    let kv = build_sparse_kv(&one, &one, &one, &CacheConfig { tau: 0.1, ..CacheConfig::default() }, &mut rng).unwrap();
    assert_eq!(kv.kept(), 1);
}
