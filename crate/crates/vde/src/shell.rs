use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, VdeError};

fn check_lengths(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(VdeError::Empty);
    }
    if y.len() != yhat.len() {
        return Err(VdeError::LengthMismatch(y.len(), yhat.len()));
    }
    Ok(())
}

/// Mean absolute percentage error, in percent.
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    if y.contains(&0.0) {
        return Err(VdeError::MapeZeroActual);
    }
    let sum: f64 = y.iter().zip(yhat).map(|(a, f)| ((a - f) / a).abs()).sum();
    Ok(100.0 * sum / y.len() as f64)
}

/// `sum |y - yhat| / sum |y|`.
pub fn wmape(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat)?;
    let denom: f64 = y.iter().map(|a| a.abs()).sum();
    if denom == 0.0 {
        return Err(VdeError::WmapeZeroTotal);
    }
    let num: f64 = y.iter().zip(yhat).map(|(a, f)| (a - f).abs()).sum();
    Ok(num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightKind {
    /// `w_i = N - i + 1`.
    Linear,
    /// `w_i = ln(N - i + 2)`, so the last segment keeps weight `ln 2`.
    Log,
}

impl WeightKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Log => "log",
        }
    }
}

impl fmt::Display for WeightKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WeightKind {
    type Err = VdeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Self::Linear),
            "log" => Ok(Self::Log),
            other => Err(VdeError::Config(format!("unknown weight kind {other:?}"))),
        }
    }
}

/// Weights `w_2..w_N` for `n` segments (1-based `i`).
pub fn weights(n: usize, kind: WeightKind) -> Vec<f64> {
    (2..=n)
        .map(|i| match kind {
            WeightKind::Linear => (n - i + 1) as f64,
            WeightKind::Log => ((n - i + 2) as f64).ln(),
        })
        .collect()
}

/// `Delta_i = (Q_i - Q_1) / Q_1` for `i = 2..N`. The reference must exceed
/// `guard`.
pub fn rate_of_change(q: &[f64], guard: f64) -> Result<Vec<f64>> {
    let &q1 = q.first().ok_or(VdeError::Empty)?;
    if q1.abs() <= guard {
        return Err(VdeError::ReferenceNearZero(q1));
    }
    if q1 < 0.0 {
        return Err(VdeError::NegativeReference(q1));
    }
    Ok(q[1..].iter().map(|qi| (qi - q1) / q1).collect())
}

/// `sum_i w_i |Delta_i|`. A series that never moves from `Q_1` has no
/// drift and scores 0 even when `Q_1` is 0 (a static video's motion).
pub fn vde(q: &[f64], kind: WeightKind, guard: f64) -> Result<f64> {
    if q.len() < 2 {
        return Err(VdeError::Config(format!("VDE needs at least 2 segments, got {}", q.len())));
    }
    if q.iter().all(|v| *v == q[0]) {
        return Ok(0.0);
    }
    let deltas = rate_of_change(q, guard)?;
    Ok(weights(q.len(), kind).iter().zip(&deltas).map(|(w, d)| w * d.abs()).sum())
}
