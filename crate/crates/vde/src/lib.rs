//! Video drift error (VDE).
//!
//! A video is split into `N` contiguous segments and each segment gets a
//! quality score `Q_i` (clarity, motion, aesthetic, background staticness
//! or subject identity). VDE is the weighted sum of the absolute relative
//! changes `|Q_i - Q_1| / Q_1`, so a video whose quality holds steady
//! scores 0 and one that degrades over time scores high.

mod error;
mod frames;
pub mod io;
pub mod reference;
mod report;
pub mod scorers;
mod shell;

pub use error::{Result, VdeError};
pub use frames::{Frame, FrameSequence};
pub use report::{evaluate, MetricKind, MetricOutcome, MetricReport, VdeConfig, VdeReport};
pub use scorers::{FlowField, Plugins};
pub use shell::{mape, rate_of_change, vde, weights, wmape, WeightKind};
