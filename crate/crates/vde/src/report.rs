use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Result, VdeError};
use crate::frames::FrameSequence;
use crate::scorers::{self, Plugins};
use crate::shell::{rate_of_change, vde, weights, WeightKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VdeConfig {
    pub n_segments: usize,
    pub weight_kind: WeightKind,
    /// Flow magnitude at or below which a background pixel counts as still.
    pub flow_tau: f64,
    pub epsilon_guard: f64,
}

impl Default for VdeConfig {
    fn default() -> Self {
        Self {
            n_segments: 5,
            weight_kind: WeightKind::Linear,
            flow_tau: 0.05,
            epsilon_guard: 1e-9,
        }
    }
}

impl VdeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_segments < 2 {
            return Err(VdeError::Config(format!("n_segments must be >= 2, got {}", self.n_segments)));
        }
        if !(self.flow_tau > 0.0 && self.flow_tau.is_finite()) {
            return Err(VdeError::Config(format!("flow_tau must be > 0, got {}", self.flow_tau)));
        }
        if !(self.epsilon_guard > 0.0 && self.epsilon_guard.is_finite()) {
            return Err(VdeError::Config(format!("epsilon_guard must be > 0, got {}", self.epsilon_guard)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MetricKind {
    Clarity,
    Motion,
    Aesthetic,
    Background,
    Subject,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        Self::Clarity,
        Self::Motion,
        Self::Aesthetic,
        Self::Background,
        Self::Subject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Clarity => "clarity",
            Self::Motion => "motion",
            Self::Aesthetic => "aesthetic",
            Self::Background => "background",
            Self::Subject => "subject",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub q: Vec<f64>,
    pub delta: Vec<f64>,
    pub weights: Vec<f64>,
    pub vde: f64,
}

/// A metric either yields a full report or the reason it could not, with
/// its segment scores when those were computed.
#[derive(Debug, Clone, PartialEq)]
pub enum MetricOutcome {
    Ok(MetricReport),
    Failed { q: Option<Vec<f64>>, reason: String },
}

impl MetricOutcome {
    pub fn report(&self) -> Option<&MetricReport> {
        match self {
            Self::Ok(r) => Some(r),
            Self::Failed { .. } => None,
        }
    }

    pub fn vde(&self) -> Option<f64> {
        self.report().map(|r| r.vde)
    }

    pub fn q(&self) -> Option<&[f64]> {
        match self {
            Self::Ok(r) => Some(&r.q),
            Self::Failed { q, .. } => q.as_deref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VdeReport {
    pub n_segments: usize,
    pub weight_kind: WeightKind,
    pub frames: usize,
    pub metrics: BTreeMap<MetricKind, MetricOutcome>,
}

fn outcome(q: std::result::Result<Vec<f64>, String>, cfg: &VdeConfig) -> MetricOutcome {
    let q = match q {
        Ok(q) => q,
        Err(reason) => return MetricOutcome::Failed { q: None, reason },
    };
    let g = cfg.epsilon_guard;
    let delta = if q.iter().all(|v| *v == q[0]) {
        Ok(vec![0.0; q.len() - 1])
    } else {
        rate_of_change(&q, g)
    };
    match delta.and_then(|d| Ok((d, vde(&q, cfg.weight_kind, g)?))) {
        Ok((delta, v)) => MetricOutcome::Ok(MetricReport {
            weights: weights(q.len(), cfg.weight_kind),
            q,
            delta,
            vde: v,
        }),
        Err(e) => MetricOutcome::Failed {
            q: Some(q),
            reason: e.to_string(),
        },
    }
}

/// Scores every segment on all five metrics and derives each metric's VDE.
/// Segments are scored in parallel; results keep segment order.
pub fn evaluate(video: &FrameSequence, cfg: &VdeConfig, plugins: &Plugins) -> Result<VdeReport> {
    cfg.validate()?;
    let segments = video.split_segments(cfg.n_segments)?;
    let reference = scorers::subject_reference(&segments[0], plugins);

    let reference = reference.map_err(|e| e.to_string());
    let rows: Vec<[std::result::Result<f64, String>; 5]> = segments
        .par_iter()
        .map(|seg| {
            let subject = match &reference {
                Ok(r) => scorers::subject_score(seg, plugins, r).map_err(|e| e.to_string()),
                Err(e) => Err(e.clone()),
            };
            [
                Ok(scorers::clarity_score(seg)),
                scorers::motion_score(seg, plugins).map_err(|e| e.to_string()),
                Ok(scorers::aesthetic_score(seg, plugins)),
                scorers::background_score(seg, plugins, cfg.flow_tau).map_err(|e| e.to_string()),
                subject,
            ]
        })
        .collect();

    let mut metrics = BTreeMap::new();
    for (m, kind) in MetricKind::ALL.into_iter().enumerate() {
        let series = rows.iter().map(|row| row[m].clone()).collect();
        metrics.insert(kind, outcome(series, cfg));
    }
    Ok(VdeReport {
        n_segments: cfg.n_segments,
        weight_kind: cfg.weight_kind,
        frames: video.len(),
        metrics,
    })
}

impl VdeReport {
    pub fn get(&self, kind: MetricKind) -> &MetricOutcome {
        &self.metrics[&kind]
    }

    pub fn to_json(&self) -> Value {
        let mut root = Map::new();
        for (kind, out) in &self.metrics {
            let v = match out {
                MetricOutcome::Ok(r) => json!({
                    "Q": r.q,
                    "delta": r.delta,
                    "weights": r.weights,
                    "vde": r.vde,
                }),
                MetricOutcome::Failed { q, reason } => match q {
                    Some(q) => json!({ "Q": q, "error": reason }),
                    None => json!({ "error": reason }),
                },
            };
            root.insert(kind.as_str().to_string(), v);
        }
        root.insert(
            "meta".into(),
            json!({
                "n_segments": self.n_segments,
                "weight_kind": self.weight_kind,
                "frames": self.frames,
            }),
        );
        Value::Object(root)
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let bad = |m: &str| VdeError::Format(format!("report JSON: {m}"));
        let root = v.as_object().ok_or_else(|| bad("not an object"))?;
        let meta = root.get("meta").ok_or_else(|| bad("missing meta"))?;
        let n_segments = meta["n_segments"].as_u64().ok_or_else(|| bad("meta.n_segments"))? as usize;
        let frames = meta["frames"].as_u64().ok_or_else(|| bad("meta.frames"))? as usize;
        let weight_kind: WeightKind = serde_json::from_value(meta["weight_kind"].clone())?;
        let floats = |v: &Value, what: &str| -> Result<Vec<f64>> {
            v.as_array()
                .ok_or_else(|| bad(what))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| bad(what)))
                .collect()
        };
        let mut metrics = BTreeMap::new();
        for (key, val) in root {
            if key == "meta" {
                continue;
            }
            let kind = MetricKind::parse(key).ok_or_else(|| bad(&format!("unknown metric {key:?}")))?;
            let out = if let Some(reason) = val.get("error") {
                MetricOutcome::Failed {
                    q: val.get("Q").map(|q| floats(q, "Q")).transpose()?,
                    reason: reason.as_str().ok_or_else(|| bad("error"))?.to_string(),
                }
            } else {
                MetricOutcome::Ok(MetricReport {
                    q: floats(&val["Q"], "Q")?,
                    delta: floats(&val["delta"], "delta")?,
                    weights: floats(&val["weights"], "weights")?,
                    vde: val["vde"].as_f64().ok_or_else(|| bad("vde"))?,
                })
            };
            metrics.insert(kind, out);
        }
        Ok(Self {
            n_segments,
            weight_kind,
            frames,
            metrics,
        })
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_json())?;
        Ok(())
    }

    /// Flat `metric,segment,Q` rows, segments numbered from 1.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["metric", "segment", "Q"])?;
        for (kind, o) in &self.metrics {
            if let Some(q) = o.q() {
                for (i, v) in q.iter().enumerate() {
                    out.write_record([kind.as_str().to_string(), (i + 1).to_string(), v.to_string()])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}
