//! Central finite-difference checks of reverse-mode gradients.

use super::{ParamStore, Result};
use crate::rng::RandomSource;

/// A parameter entry: tensor name and flat offset.
pub type Entry = (String, usize);

/// Draws `count` entries uniformly over all scalars of `params`.
pub fn sample_entries(params: &ParamStore, count: usize, rng: &mut RandomSource) -> Vec<Entry> {
    let sizes: Vec<(String, usize)> = params.iter().map(|(k, t)| (k.to_string(), t.numel())).collect();
    let total: usize = sizes.iter().map(|(_, n)| n).sum();
    (0..count)
        .map(|_| {
            let mut i = rng.below(total);
            for (name, n) in &sizes {
                if i < *n {
                    return (name.clone(), i);
                }
                i -= n;
            }
            unreachable!("index below total")
        })
        .collect()
}

/// Central differences `(f(w + h) - f(w - h)) / 2h` for each entry.
pub fn finite_differences(
    params: &ParamStore,
    entries: &[Entry],
    h: f64,
    mut eval: impl FnMut(&ParamStore) -> Result<f64>,
) -> Result<Vec<f64>> {
    entries
        .iter()
        .map(|(name, i)| {
            let base = params.get(name)?.to_vec();
            let mut shifted = |delta: f64| -> Result<f64> {
                let mut p = params.clone();
                let mut d = base.clone();
                d[*i] += delta;
                p.set_data(name, d)?;
                eval(&p)
            };
            let plus = shifted(h)?;
            let minus = shifted(-h)?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// Accumulated gradient values at `entries`; missing gradients read as 0.
pub fn analytic_gradients(params: &ParamStore, entries: &[Entry]) -> Result<Vec<f64>> {
    entries
        .iter()
        .map(|(name, i)| Ok(params.get(name)?.grad().map_or(0.0, |g| g[*i])))
        .collect()
}

/// `|a - b| / max(|a|, |b|)` over whole vectors; 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(b).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut b.iter().copied()));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
