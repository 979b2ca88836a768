//! Dataset expansion: each verified record becomes a standard
//! question-answer example and a reasoning example whose response carries
//! the thinking process ahead of a thinking tag.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::Executor;
use crate::refinement::VerifiedRecord;

pub const DEFAULT_THINKING_TAG: &str = "<DTK>";
pub const DEFAULT_REASONING_PREAMBLE: &str =
    "请你给出回复的时候，在<DTK>标签前给出你的思考过程后再作答。";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Standard,
    Reasoning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub prompt: String,
    pub response: String,
    pub variant: Variant,
    pub source_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpansionConfig {
    #[serde(default = "default_tag")]
    pub thinking_tag: String,
    #[serde(default = "default_preamble")]
    pub reasoning_preamble: String,
    /// When set, pairs are emitted record by record instead of grouped by
    /// variant.
    #[serde(default)]
    pub interleave: bool,
}

fn default_tag() -> String {
    DEFAULT_THINKING_TAG.to_string()
}

fn default_preamble() -> String {
    DEFAULT_REASONING_PREAMBLE.to_string()
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            thinking_tag: default_tag(),
            reasoning_preamble: default_preamble(),
            interleave: false,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.thinking_tag.is_empty() {
            return Err("thinking_tag must be non-empty".to_string());
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExpansionError {
    #[error("thinking tag collision in record {0}")]
    TagCollision(String),
    #[error("nothing to expand")]
    Empty,
    #[error("invalid expansion config: {0}")]
    InvalidConfig(String),
}

fn compose_prompt(preamble: &str, record: &VerifiedRecord) -> String {
    format!("{preamble}{}\n{}", record.instruction, record.question)
}

/// Standard variant: instruction and question, answer verbatim.
pub fn render_standard(record: &VerifiedRecord) -> TrainingExample {
    TrainingExample {
        prompt: compose_prompt("", record),
        response: record.answer.clone(),
        variant: Variant::Standard,
        source_id: record.record_id.clone(),
    }
}

/// Reasoning variant: preamble-prefixed prompt, response is the reasoning,
/// the tag, then the answer. Records whose reasoning or answer already
/// contain the tag are refused to keep the single-tag invariant.
pub fn render_reasoning(
    record: &VerifiedRecord,
    config: &ExpansionConfig,
) -> Result<TrainingExample, ExpansionError> {
    let tag = &config.thinking_tag;
    if record.reasoning.contains(tag.as_str()) || record.answer.contains(tag.as_str()) {
        return Err(ExpansionError::TagCollision(record.record_id.clone()));
    }
    Ok(TrainingExample {
        prompt: compose_prompt(&config.reasoning_preamble, record),
        response: format!("{}{}{}", record.reasoning, tag, record.answer),
        variant: Variant::Reasoning,
        source_id: record.record_id.clone(),
    })
}

#[derive(Debug)]
pub struct ExpansionOutput {
    pub examples: Vec<TrainingExample>,
    /// Records dropped for tag collisions; both variants are excluded.
    pub excluded: Vec<String>,
}

/// Render both variants for every record. A tag collision removes the whole
/// pair, keeping the dataset exactly two examples per surviving record.
pub fn expand_dataset(
    records: &[VerifiedRecord],
    config: &ExpansionConfig,
    executor: &Executor,
) -> Result<ExpansionOutput, ExpansionError> {
    if records.is_empty() {
        return Err(ExpansionError::Empty);
    }
    config.validate().map_err(ExpansionError::InvalidConfig)?;

    let pairs: Vec<Result<(TrainingExample, TrainingExample), String>> =
        executor.map(records, |record| {
            match render_reasoning(record, config) {
                Ok(reasoning) => Ok((render_standard(record), reasoning)),
                Err(_) => Err(record.record_id.clone()),
            }
        });

    let mut standard = Vec::with_capacity(records.len());
    let mut reasoning = Vec::with_capacity(records.len());
    let mut excluded = Vec::new();
    for pair in pairs {
        match pair {
            Ok((s, r)) => {
                standard.push(s);
                reasoning.push(r);
            }
            Err(id) => {
                log::warn!("excluding record {id}: thinking tag collision");
                excluded.push(id);
            }
        }
    }

    let examples = if config.interleave {
        standard
            .into_iter()
            .zip(reasoning)
            .flat_map(|(s, r)| [s, r])
            .collect()
    } else {
        standard.into_iter().chain(reasoning).collect()
    };
    Ok(ExpansionOutput { examples, excluded })
}
