//! The knowledge-guided writer: renders the generation prompt from a
//! (seed problem, document) pair, calls the backend, and extracts a
//! validated draft record from the reply.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{Domain, KnowledgeDocument};
use crate::error::{ExtractError, PromptError, RejectionCategory};
use crate::evaluation;
use crate::gateway::{ChatRequest, Gateway, Stage};
use crate::prompts::{PromptSet, PromptTemplate};
use crate::sampling::{canonical_seed_json, SampleDraw, TaskId};

/// Where a record came from: enough to replay or audit any draft.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub document_id: String,
    pub seed_id: String,
    pub task_id: TaskId,
    pub domain: Domain,
    pub draw_ordinal: u64,
    pub attempt: u32,
}

/// Unverified draft produced by the writer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DraftRecord {
    pub question: String,
    pub answer: String,
    pub reasoning: String,
    pub references: BTreeMap<String, String>,
    pub instruction: String,
    pub provenance: Provenance,
    pub raw_response: String,
}

/// Document rendering for the writer prompt's `{DOCS}` slot: labeled facts,
/// reasons, results and citation keys.
pub fn render_document(doc: &KnowledgeDocument) -> String {
    let laws = if doc.relevant_laws.is_empty() {
        "无".to_string()
    } else {
        doc.relevant_laws.join("、")
    };
    format!(
        "案件事实：{}\n裁判理由：{}\n裁判结果：{}\n相关法条：{}",
        doc.facts, doc.reasons, doc.results, laws
    )
}

pub fn build_writer_prompt(
    seed: &crate::sampling::SeedProblem,
    document: &KnowledgeDocument,
    template: &PromptTemplate,
) -> Result<String, PromptError> {
    template.render(&[
        ("JSON", &canonical_seed_json(seed)),
        ("DOCS", &render_document(document)),
    ])
}

/// First balanced JSON object in free text, skipping prose and code fences,
/// aware of strings and escapes.
pub fn find_json_object(text: &str) -> Option<&str> {
    let bytes = text.as_bytes();
    let start = bytes.iter().position(|&b| b == b'{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth = depth.saturating_sub(1);
                if depth == 0 {
                    return Some(&text[start..=i]);
                }
            }
            _ => {}
        }
    }
    None
}

/// The four fields the writer must return.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractedRecord {
    pub question: String,
    pub answer: String,
    pub reasoning: String,
    #[serde(rename = "reference")]
    pub references: BTreeMap<String, String>,
}

fn required_str(value: &Value, field: &'static str) -> Result<String, ExtractError> {
    match value.get(field) {
        None => Err(ExtractError::MissingField(field)),
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(ExtractError::IllTyped {
            field,
            expected: "string",
        }),
    }
}

/// Parse the first JSON object out of a writer reply and check the record
/// shape: `question`, `answer`, `reasoning` strings plus a `reference`
/// string-to-string map.
pub fn extract_record(response_text: &str) -> Result<ExtractedRecord, ExtractError> {
    let raw = find_json_object(response_text).ok_or(ExtractError::NoJson)?;
    let value: Value = serde_json::from_str(raw).map_err(|e| ExtractError::Parse(e.to_string()))?;
    let question = required_str(&value, "question")?;
    let answer = required_str(&value, "answer")?;
    let reasoning = required_str(&value, "reasoning")?;
    let references = match value.get("reference") {
        None => return Err(ExtractError::MissingField("reference")),
        Some(Value::Object(map)) => {
            let mut out = BTreeMap::new();
            for (k, v) in map {
                match v {
                    Value::String(s) => {
                        out.insert(k.clone(), s.clone());
                    }
                    _ => {
                        return Err(ExtractError::IllTyped {
                            field: "reference",
                            expected: "map of string to string",
                        })
                    }
                }
            }
            out
        }
        Some(_) => {
            return Err(ExtractError::IllTyped {
                field: "reference",
                expected: "map of string to string",
            })
        }
    };
    Ok(ExtractedRecord {
        question,
        answer,
        reasoning,
        references,
    })
}

static AMOUNT_ENVELOPE_RE: OnceLock<Regex> = OnceLock::new();

fn amount_envelope_re() -> &'static Regex {
    AMOUNT_ENVELOPE_RE
        .get_or_init(|| Regex::new(r"\[金额\][0-9０-９][0-9０-９,，.]*\s*元?\s*<eoa>").unwrap())
}

/// Per-task answer-format rules, enforced at draft time. Patterns can be
/// overridden through configuration.
#[derive(Debug, Clone, Default)]
pub struct AnswerRules {
    pub overrides: BTreeMap<TaskId, Regex>,
}

impl AnswerRules {
    pub fn check(&self, task: TaskId, answer: &str) -> Result<(), String> {
        if let Some(re) = self.overrides.get(&task) {
            return if re.is_match(answer) {
                Ok(())
            } else {
                Err(format!("answer does not match configured pattern {}", re.as_str()))
            };
        }
        match task.get() {
            4 => {
                if amount_envelope_re().is_match(answer) {
                    Ok(())
                } else {
                    Err("answer lacks the [金额]…<eoa> envelope".to_string())
                }
            }
            2 | 3 => {
                if evaluation::extract_term(answer).is_some() {
                    Ok(())
                } else {
                    Err("answer has no parsable prison-term expression".to_string())
                }
            }
            _ => {
                if answer.trim().is_empty() {
                    Err("answer must be non-empty prose".to_string())
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3 }
    }
}

/// A draw that failed to become a draft, with the last error. `auth` marks
/// credential failures so the run can abort instead of burning the stall
/// window.
#[derive(Debug, Clone)]
pub struct DraftRejection {
    pub category: RejectionCategory,
    pub message: String,
    pub attempts: u32,
    pub auth: bool,
}

/// Run the writer for one draw. Attempts are retried on parse, schema,
/// format and backend failures up to the policy bound; the rejection carries
/// the final attempt's error.
pub fn generate_draft(
    gateway: &Gateway,
    draw: &SampleDraw,
    templates: &PromptSet,
    rules: &AnswerRules,
    policy: RetryPolicy,
    temperature: f64,
) -> Result<DraftRecord, DraftRejection> {
    let prompt = build_writer_prompt(&draw.seed, &draw.document, &templates.writer)
        .map_err(|e| DraftRejection {
            category: RejectionCategory::SchemaFailure,
            message: e.to_string(),
            attempts: 0,
            auth: false,
        })?;
    let request = ChatRequest::new(Stage::Writer, prompt, temperature);
    let max_attempts = policy.max_attempts.max(1);
    let mut last: Option<(RejectionCategory, String)> = None;
    let mut auth = false;

    for attempt in 1..=max_attempts {
        let response = match gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                auth = auth || e.is_auth();
                last = Some((RejectionCategory::BackendFailure, e.to_string()));
                continue;
            }
        };
        let extracted = match extract_record(&response.text) {
            Ok(rec) => rec,
            Err(e) => {
                let category = match e {
                    ExtractError::NoJson | ExtractError::Parse(_) => {
                        RejectionCategory::ParseFailure
                    }
                    ExtractError::MissingField(_) | ExtractError::IllTyped { .. } => {
                        RejectionCategory::SchemaFailure
                    }
                };
                last = Some((category, e.to_string()));
                continue;
            }
        };
        if extracted.references.is_empty() {
            last = Some((
                RejectionCategory::SchemaFailure,
                "reference map may not be empty".to_string(),
            ));
            continue;
        }
        if extracted.question.trim().is_empty() || extracted.reasoning.trim().is_empty() {
            last = Some((
                RejectionCategory::SchemaFailure,
                "question and reasoning must be non-empty".to_string(),
            ));
            continue;
        }
        if let Err(msg) = rules.check(draw.seed.task_id, &extracted.answer) {
            last = Some((RejectionCategory::FormatFailure, msg));
            continue;
        }
        return Ok(DraftRecord {
            question: extracted.question,
            answer: extracted.answer,
            reasoning: extracted.reasoning,
            references: extracted.references,
            instruction: draw.seed.instruction.clone(),
            provenance: Provenance {
                document_id: draw.document.id.clone(),
                seed_id: draw.seed.id.clone(),
                task_id: draw.seed.task_id,
                domain: draw.cell.domain,
                draw_ordinal: draw.draw_ordinal,
                attempt,
            },
            raw_response: response.text,
        });
    }

    let (category, message) = last.expect("at least one attempt ran");
    Err(DraftRejection {
        category,
        message,
        attempts: max_attempts,
        auth,
    })
}
