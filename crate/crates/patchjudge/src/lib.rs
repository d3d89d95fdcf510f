//! Patch correctness prediction for automated program repair.
//!
//! The pipeline ingests unified diffs, tokenizes buggy and patched
//! code into subword sequences, encodes both with a transformer,
//! fuses the two representations, and classifies the pair with a
//! bidirectional LSTM head. Training, cross-validated evaluation,
//! and ablation over fusion operators are driven by the `patchjudge`
//! binary or the functions in [`commands`].

pub mod classifier;
pub mod commands;
pub mod config;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod ingest;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod tokenizer;
pub mod training;

pub use error::{Error, Result};
