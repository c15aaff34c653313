//! Fairness auditing harness for code generation models.
//!
//! The pipeline builds adjective-conditioned code prompts ([`corpus`]), collects
//! completions from a backend ([`gateway`]), detects demographic mentions in the
//! generated code ([`analyzer`]), optionally scores completions with a learned
//! classifier ([`classifier`]) or reconciles human labels ([`annotations`]), and
//! aggregates bias metrics into reports ([`metrics`], [`report`]). [`runner`]
//! wires the stages into resumable end-to-end audits.

pub mod analyzer;
pub mod annotations;
pub mod classifier;
pub mod corpus;
pub mod error;
pub mod gateway;
pub mod jsonl;
pub mod metrics;
pub mod report;
pub mod runner;

#[cfg(feature = "testsupport")]
pub mod testsupport;

pub use error::{Error, Result};
