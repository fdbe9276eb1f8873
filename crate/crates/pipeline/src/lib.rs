//! Run configuration, synthetic corpus and the end-to-end commands behind
//! the `lvdiff` and `vde-eval` binaries.

pub mod commands;
pub mod config;
pub mod corpus;
mod error;

pub use config::RunConfig;
pub use corpus::{synth_corpus, CorpusSpec, SceneKind, SynthVideo};
pub use error::{PipelineError, Result, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC};
