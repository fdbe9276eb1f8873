use lvcore::schedule::{shuffle_boundary, ScheduleKind, ScheduleParams};
use lvcore::{RandomSource, Tensor};
use proptest::prelude::*;

fn params(kind: ScheduleKind, n: usize, lo: f64, span: f64, alpha: f64) -> ScheduleParams {
    ScheduleParams {
        kind,
        eps_min: lo,
        eps_max: lo + span,
        n_chunks: n,
        alpha,
    }
}

proptest! {
    #[test]
    fn schedules_are_monotone_and_bounded(n in 1usize..60, lo in 0.01f64..0.5, span in 0.0f64..0.5, alpha in 0.1f64..30.0) {
        for kind in ScheduleKind::ALL {
            let p = params(kind, n, lo, span, alpha);
            let levels: Vec<f64> = (0..n).map(|c| p.noise_level(c).unwrap()).collect();
            prop_assert!(levels.windows(2).all(|w| w[0] <= w[1]), "{kind} {levels:?}");
            prop_assert!(levels.iter().all(|&e| e >= p.eps_min && e <= p.eps_max));
        }
    }

    #[test]
    fn cosine_and_linear_hit_endpoints(n in 2usize..60, lo in 0.01f64..0.5, span in 0.0f64..0.5) {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let p = params(kind, n, lo, span, 1.0);
            prop_assert_eq!(p.noise_level(0).unwrap(), p.eps_min);
            prop_assert_eq!(p.noise_level(n - 1).unwrap(), p.eps_max);
        }
    }

    #[test]
    fn cosine_midpoint(half in 1usize..30, lo in 0.01f64..0.5, span in 0.0f64..0.5) {
        let n = 2 * half + 1;
        let p = params(ScheduleKind::Cosine, n, lo, span, 1.0);
        let mid = p.noise_level(half).unwrap();
        prop_assert!((mid - (p.eps_min + p.eps_max) / 2.0).abs() <= 1e-12);
    }

    #[test]
    fn shuffle_preserves_window_multisets(t in 1usize..12, s_frac in 0.0f64..=1.0, seed in any::<u64>()) {
        let s = 1 + ((t - 1) as f64 * s_frac).round() as usize;
        let mut rng = RandomSource::new(seed);
        let mk = |rng: &mut RandomSource| -> Vec<Tensor> {
            (0..t).map(|_| Tensor::new(&[3], rng.normals(3)).unwrap()).collect()
        };
        let (a, b) = (mk(&mut rng), mk(&mut rng));
        let (sa, sb) = shuffle_boundary(&a, &b, s, &mut rng).unwrap();
        let key = |v: &[Tensor]| {
            let mut k: Vec<Vec<u64>> = v.iter().map(|x| x.data().iter().map(|f| f.to_bits()).collect()).collect();
            k.sort();
            k
        };
        prop_assert_eq!(&sa[..t - s], &a[..t - s]);
        prop_assert_eq!(&sb[s..], &b[s..]);
        prop_assert_eq!(key(&sa[t - s..]), key(&a[t - s..]));
        prop_assert_eq!(key(&sb[..s]), key(&b[..s]));
        if s == 1 {
            prop_assert_eq!((sa, sb), (a, b));
        }
    }
}
