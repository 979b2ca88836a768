//! Knowledge-guided synthetic data generation for legal reasoning.
//!
//! The pipeline samples (document, seed problem) pairs from a legal knowledge
//! base, drafts question/answer/reasoning/reference records through an LLM
//! writer, repairs references and reasoning, verifies each record before it
//! enters the generated dataset, and expands verified records into paired
//! standard and reasoning training examples. A four-task evaluation harness
//! scores model outputs on the same task suite.
//!
//! Data-parallel sections run on a bounded rayon pool by default; build with
//! `--no-default-features` for the sequential fallback.

pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod expansion;
pub mod fixtures;
pub mod gateway;
pub mod generation;
pub mod jsonl;
pub mod orchestrator;
pub mod prompts;
pub mod refinement;
pub mod sampling;
pub mod text;

pub use error::{BackendError, CorpusError, EvalError, RejectionCategory, RunError};
pub use sampling::TaskId;
