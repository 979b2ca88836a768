//! Reference and reasoning repair followed by the verification gate. The
//! stage order is fixed: fix references, fix reasoning, verify, gate. No
//! record enters the generated dataset by any other path, and `question`
//! and `instruction` are immutable throughout.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::StatuteIndex;
use crate::error::RejectionCategory;
use crate::gateway::{ChatRequest, Gateway, Stage};
use crate::generation::{find_json_object, DraftRecord, Provenance};
use crate::prompts::PromptTemplate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefFixMode {
    Local,
    Llm,
}

/// What the fixers changed on one record.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixReport {
    pub references_changed: Vec<String>,
    pub reasoning_changed: bool,
    pub answer_changed: bool,
}

impl FixReport {
    pub fn is_noop(&self) -> bool {
        self.references_changed.is_empty() && !self.reasoning_changed && !self.answer_changed
    }
}

/// Verifier outcome. `message` is non-empty whenever `passed` is false.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub passed: bool,
    pub message: String,
}

/// A record admitted through the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedRecord {
    pub record_id: String,
    pub question: String,
    pub answer: String,
    pub reasoning: String,
    pub references: BTreeMap<String, String>,
    pub instruction: String,
    pub provenance: Provenance,
    pub fix_report: FixReport,
}

/// A record thrown out during refinement, with the failing stage.
#[derive(Debug, Clone)]
pub struct RefineRejection {
    pub stage: Stage,
    pub category: RejectionCategory,
    pub message: String,
}

impl RefineRejection {
    fn unfixable(stage: Stage, message: impl Into<String>) -> Self {
        RefineRejection {
            stage,
            category: RejectionCategory::Unfixable,
            message: message.into(),
        }
    }
}

/// Serialization of a draft for the fixer and verifier `{JSON}` slots. The
/// wire field is `reference`, matching the writer's output vocabulary.
pub fn draft_prompt_json(draft: &DraftRecord) -> String {
    #[derive(Serialize)]
    struct View<'a> {
        instruction: &'a str,
        question: &'a str,
        answer: &'a str,
        reference: &'a BTreeMap<String, String>,
        reasoning: &'a str,
    }
    serde_json::to_string(&View {
        instruction: &draft.instruction,
        question: &draft.question,
        answer: &draft.answer,
        reference: &draft.references,
        reasoning: &draft.reasoning,
    })
    .expect("draft serialization cannot fail")
}

/// A stage reply that failed validation. Retryable failures (unparseable or
/// wrong-shaped replies) are re-requested up to the attempt bound; fatal
/// ones (contract violations) reject the record immediately.
enum ReplyError {
    Retry(String),
    Fatal(String),
}

/// Call a JSON-replying stage until `parse` accepts the reply or attempts
/// run out.
fn call_json_stage<T>(
    gateway: &Gateway,
    stage: Stage,
    prompt: String,
    temperature: f64,
    max_attempts: u32,
    parse: impl Fn(&Value) -> Result<T, ReplyError>,
) -> Result<T, ReplyError> {
    let request = ChatRequest::new(stage, prompt, temperature);
    let mut last = String::new();
    for _ in 0..max_attempts.max(1) {
        let response = match gateway.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                last = e.to_string();
                continue;
            }
        };
        let parsed = find_json_object(&response.text)
            .ok_or_else(|| "no JSON object in reply".to_string())
            .and_then(|raw| serde_json::from_str::<Value>(raw).map_err(|e| e.to_string()));
        match parsed {
            Ok(value) => match parse(&value) {
                Ok(out) => return Ok(out),
                Err(ReplyError::Fatal(e)) => return Err(ReplyError::Fatal(e)),
                Err(ReplyError::Retry(e)) => last = e,
            },
            Err(e) => last = e,
        }
    }
    Err(ReplyError::Retry(last))
}

/// Correct reference contents. Local mode replaces each value found in the
/// statute index and leaves unknown keys untouched; LLM mode sends the whole
/// map to the fixer and requires the reply to preserve the key set.
pub fn fix_references(
    draft: DraftRecord,
    mode: RefFixMode,
    statutes: Option<&StatuteIndex>,
    gateway: &Gateway,
    template: &PromptTemplate,
    temperature: f64,
    max_attempts: u32,
) -> Result<(DraftRecord, Vec<String>), RefineRejection> {
    match mode {
        RefFixMode::Local => {
            let statutes = statutes.ok_or_else(|| {
                RefineRejection::unfixable(Stage::RefFixer, "local mode requires a statute index")
            })?;
            let mut draft = draft;
            let mut changed = Vec::new();
            for (key, value) in draft.references.iter_mut() {
                if let Some(content) = statutes.lookup(key) {
                    if value != content {
                        changed.push(key.clone());
                        *value = content.to_string();
                    }
                }
            }
            Ok((draft, changed))
        }
        RefFixMode::Llm => {
            let json = serde_json::to_string(&draft.references)
                .expect("reference map serialization cannot fail");
            let prompt = template.render(&[("JSON", &json)]).map_err(|e| {
                RefineRejection::unfixable(Stage::RefFixer, e.to_string())
            })?;
            let old_keys: BTreeSet<String> = draft.references.keys().cloned().collect();
            let fixed = call_json_stage(
                gateway,
                Stage::RefFixer,
                prompt,
                temperature,
                max_attempts,
                |value| {
                    let map: BTreeMap<String, String> = serde_json::from_value(value.clone())
                        .map_err(|e| ReplyError::Retry(format!("reply shape: {e}")))?;
                    let new_keys: BTreeSet<String> = map.keys().cloned().collect();
                    if new_keys != old_keys {
                        return Err(ReplyError::Fatal(
                            "reference reply changed the key set".to_string(),
                        ));
                    }
                    Ok(map)
                },
            )
            .map_err(|e| match e {
                ReplyError::Retry(msg) => RefineRejection::unfixable(
                    Stage::RefFixer,
                    format!("reference reply unparseable: {msg}"),
                ),
                ReplyError::Fatal(msg) => RefineRejection::unfixable(Stage::RefFixer, msg),
            })?;
            let mut draft = draft;
            let changed: Vec<String> = draft
                .references
                .iter()
                .filter(|(k, v)| fixed.get(*k) != Some(v))
                .map(|(k, _)| k.clone())
                .collect();
            draft.references = fixed;
            Ok((draft, changed))
        }
    }
}

fn str_field<'a>(value: &'a Value, field: &str) -> Option<&'a str> {
    value.get(field).and_then(Value::as_str)
}

/// Send the full draft to the reasoning corrector. Only `reasoning` and
/// `answer` may change; an edit to any other field rejects the record, while
/// replies with missing or ill-typed fields are retried like any other
/// unparseable reply.
pub fn fix_reasoning(
    draft: DraftRecord,
    gateway: &Gateway,
    template: &PromptTemplate,
    temperature: f64,
    max_attempts: u32,
) -> Result<(DraftRecord, bool, bool), RefineRejection> {
    let prompt = template
        .render(&[("JSON", &draft_prompt_json(&draft))])
        .map_err(|e| RefineRejection::unfixable(Stage::ReasonFixer, e.to_string()))?;

    let parsed = call_json_stage(
        gateway,
        Stage::ReasonFixer,
        prompt,
        temperature,
        max_attempts,
        |value| {
            for immutable in ["instruction", "question"] {
                let original = match immutable {
                    "instruction" => &draft.instruction,
                    _ => &draft.question,
                };
                match str_field(value, immutable) {
                    Some(echoed) if echoed == original => {}
                    Some(_) => {
                        return Err(ReplyError::Fatal(format!(
                            "fixer modified immutable field: {immutable}"
                        )))
                    }
                    None => {
                        return Err(ReplyError::Retry(format!(
                            "fixer dropped field: {immutable}"
                        )))
                    }
                }
            }
            match value.get("reference") {
                Some(refs) => {
                    let echoed: Result<BTreeMap<String, String>, _> =
                        serde_json::from_value(refs.clone());
                    match echoed {
                        Ok(map) if map == draft.references => {}
                        Ok(_) => {
                            return Err(ReplyError::Fatal(
                                "fixer modified immutable field: reference".to_string(),
                            ))
                        }
                        Err(e) => {
                            return Err(ReplyError::Retry(format!(
                                "reference field shape: {e}"
                            )))
                        }
                    }
                }
                None => {
                    return Err(ReplyError::Retry(
                        "fixer dropped field: reference".to_string(),
                    ))
                }
            }
            let reasoning = str_field(value, "reasoning")
                .ok_or_else(|| ReplyError::Retry("fixer dropped field: reasoning".to_string()))?;
            let answer = str_field(value, "answer")
                .ok_or_else(|| ReplyError::Retry("fixer dropped field: answer".to_string()))?;
            Ok((reasoning.to_string(), answer.to_string()))
        },
    );
    let (new_reasoning, new_answer) = parsed.map_err(|e| match e {
        ReplyError::Retry(msg) => RefineRejection::unfixable(
            Stage::ReasonFixer,
            format!("reasoning reply unparseable: {msg}"),
        ),
        ReplyError::Fatal(msg) => RefineRejection::unfixable(Stage::ReasonFixer, msg),
    })?;

    let reasoning_changed = new_reasoning != draft.reasoning;
    let answer_changed = new_answer != draft.answer;
    let mut draft = draft;
    if reasoning_changed {
        draft.reasoning = new_reasoning;
    }
    if answer_changed {
        draft.answer = new_answer;
    }
    Ok((draft, reasoning_changed, answer_changed))
}

/// Mechanical re-check for damages-calculation records: the amounts listed
/// in the reasoning ahead of its 总和为 claim must sum to the claim, and the
/// enveloped answer must equal it. Other tasks and free-form reasoning pass
/// through.
pub fn arithmetic_check(draft: &DraftRecord) -> Result<(), String> {
    if draft.provenance.task_id.get() != 4 {
        return Ok(());
    }
    let Some(claim_pos) = draft.reasoning.find("总和为") else {
        return Ok(());
    };
    let components = amounts_in(&draft.reasoning[..claim_pos]);
    let Some(stated) = amounts_in(&draft.reasoning[claim_pos..]).first().copied() else {
        return Ok(());
    };
    let answer = crate::evaluation::extract_amount(&draft.answer);
    let expected: f64 = if components.is_empty() {
        stated
    } else {
        components.iter().sum()
    };
    if stated != expected {
        return Err(format!(
            "reasoning claims a total of {stated} but its amounts sum to {expected}"
        ));
    }
    if answer != Some(expected) {
        return Err(format!(
            "answer amount {answer:?} does not equal the reasoning total {expected}"
        ));
    }
    Ok(())
}

fn amounts_in(text: &str) -> Vec<f64> {
    static RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();
    let re = RE.get_or_init(|| regex::Regex::new(r"([0-9][0-9,，]*)元").unwrap());
    re.captures_iter(text)
        .filter_map(|c| {
            let digits: String = c[1].chars().filter(char::is_ascii_digit).collect();
            digits.parse().ok()
        })
        .collect()
}

/// Ask the verifier whether the answer follows from the question through the
/// corrected references and reasoning. Unparseable replies fail closed.
pub fn verify(
    record: &DraftRecord,
    gateway: &Gateway,
    template: &PromptTemplate,
    accept_values: &BTreeSet<String>,
    temperature: f64,
    max_attempts: u32,
) -> Verdict {
    let prompt = match template.render(&[("JSON", &draft_prompt_json(record))]) {
        Ok(p) => p,
        Err(e) => {
            return Verdict {
                passed: false,
                message: format!("verifier prompt: {e}"),
            }
        }
    };
    let parsed = call_json_stage(
        gateway,
        Stage::Verifier,
        prompt,
        temperature,
        max_attempts,
        |value| {
            let verify_field = str_field(value, "verify")
                .ok_or_else(|| ReplyError::Retry("missing verify field".to_string()))?;
            let message = str_field(value, "message").map(str::to_string);
            Ok((verify_field.to_string(), message))
        },
    );
    match parsed {
        Ok((verify_field, message)) => {
            let passed = accept_values.contains(&verify_field);
            let message = match message {
                Some(m) if !m.trim().is_empty() => m,
                _ if passed => String::new(),
                _ => "missing verifier message".to_string(),
            };
            Verdict { passed, message }
        }
        Err(_) => Verdict {
            passed: false,
            message: "verifier unparseable".to_string(),
        },
    }
}

/// Admit a record that passed verification; content is unchanged from the
/// post-fix draft.
pub fn gate(
    record: DraftRecord,
    verdict: &Verdict,
    fix_report: FixReport,
) -> Result<VerifiedRecord, RefineRejection> {
    if !verdict.passed {
        return Err(RefineRejection {
            stage: Stage::Verifier,
            category: RejectionCategory::VerifyFailed,
            message: verdict.message.clone(),
        });
    }
    Ok(VerifiedRecord {
        record_id: format!("gen-{:06}", record.provenance.draw_ordinal),
        question: record.question,
        answer: record.answer,
        reasoning: record.reasoning,
        references: record.references,
        instruction: record.instruction,
        provenance: record.provenance,
        fix_report,
    })
}

/// Everything the refinement stage needs besides the record itself. The
/// three stages can point at independently configured gateways.
pub struct RefineContext<'a> {
    pub mode: RefFixMode,
    pub statutes: Option<&'a StatuteIndex>,
    pub ref_fixer_gateway: &'a Gateway,
    pub reason_fixer_gateway: &'a Gateway,
    pub verifier_gateway: &'a Gateway,
    pub ref_fixer_template: &'a PromptTemplate,
    pub reason_fixer_template: &'a PromptTemplate,
    pub verifier_template: &'a PromptTemplate,
    pub accept_values: &'a BTreeSet<String>,
    pub fixer_temperature: f64,
    pub verifier_temperature: f64,
    pub max_attempts: u32,
}

/// Fixed-order refinement of one draft: references, reasoning, arithmetic
/// re-check, verification, gate.
pub fn refine(
    draft: DraftRecord,
    ctx: &RefineContext<'_>,
) -> Result<VerifiedRecord, RefineRejection> {
    let (draft, references_changed) = fix_references(
        draft,
        ctx.mode,
        ctx.statutes,
        ctx.ref_fixer_gateway,
        ctx.ref_fixer_template,
        ctx.fixer_temperature,
        ctx.max_attempts,
    )?;
    let (draft, reasoning_changed, answer_changed) = fix_reasoning(
        draft,
        ctx.reason_fixer_gateway,
        ctx.reason_fixer_template,
        ctx.fixer_temperature,
        ctx.max_attempts,
    )?;
    if let Err(msg) = arithmetic_check(&draft) {
        return Err(RefineRejection {
            stage: Stage::ReasonFixer,
            category: RejectionCategory::ArithmeticMismatch,
            message: msg,
        });
    }
    let verdict = verify(
        &draft,
        ctx.verifier_gateway,
        ctx.verifier_template,
        ctx.accept_values,
        ctx.verifier_temperature,
        ctx.max_attempts,
    );
    gate(
        draft,
        &verdict,
        FixReport {
            references_changed,
            reasoning_changed,
            answer_changed,
        },
    )
}

pub fn default_accept_values() -> BTreeSet<String> {
    BTreeSet::from(["正确".to_string()])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Domain;
    use crate::gateway::{canonical_statute_text, MockBackend, MockScript};
    use crate::prompts::PromptSet;
    use crate::sampling::TaskId;
    use std::sync::Arc;

    fn draft(task: u8) -> DraftRecord {
        let references = BTreeMap::from([(
            "刑法第133条".to_string(),
            canonical_statute_text("刑法第133条"),
        )]);
        DraftRecord {
            question: "文书：案情描述。".to_string(),
            answer: if task == 4 {
                "[金额]300元<eoa>".to_string()
            } else {
                "有期徒刑2年".to_string()
            },
            reasoning: if task == 4 {
                "金额分别为100元、200元。这些费用总和为300元。".to_string()
            } else {
                "应当判处有期徒刑2年。".to_string()
            },
            references,
            instruction: "指令".to_string(),
            provenance: Provenance {
                document_id: "doc-1".to_string(),
                seed_id: "s-1".to_string(),
                task_id: TaskId::new(task).unwrap(),
                domain: Domain::Criminal,
                draw_ordinal: 7,
                attempt: 1,
            },
            raw_response: String::new(),
        }
    }

    fn gateway(script: MockScript) -> Gateway {
        Gateway::new(Arc::new(MockBackend::new(script).unwrap()), 4)
    }

    fn ctx<'a>(
        gateway: &'a Gateway,
        templates: &'a PromptSet,
        statutes: Option<&'a StatuteIndex>,
        accept: &'a BTreeSet<String>,
    ) -> RefineContext<'a> {
        RefineContext {
            mode: if statutes.is_some() {
                RefFixMode::Local
            } else {
                RefFixMode::Llm
            },
            statutes,
            ref_fixer_gateway: gateway,
            reason_fixer_gateway: gateway,
            verifier_gateway: gateway,
            ref_fixer_template: &templates.ref_fixer,
            reason_fixer_template: &templates.reason_fixer,
            verifier_template: &templates.verifier,
            accept_values: accept,
            fixer_temperature: 0.0,
            verifier_temperature: 0.0,
            max_attempts: 3,
        }
    }

    #[test]
    fn local_fix_replaces_known_keys_and_reports_them() {
        let statutes = StatuteIndex::from_entries(vec![(
            "刑法第133条".to_string(),
            "正确的法条内容。".to_string(),
        )]);
        let mut d = draft(4);
        d.references
            .insert("刑法第133条".to_string(), "错误内容".to_string());
        let gw = gateway(MockScript::clean(1));
        let templates = PromptSet::builtin();
        let (fixed, changed) = fix_references(
            d,
            RefFixMode::Local,
            Some(&statutes),
            &gw,
            &templates.ref_fixer,
            0.0,
            3,
        )
        .unwrap();
        assert_eq!(fixed.references["刑法第133条"], "正确的法条内容。");
        assert_eq!(changed, vec!["刑法第133条".to_string()]);
    }

    #[test]
    fn local_fix_leaves_unknown_keys_untouched() {
        let statutes = StatuteIndex::from_entries(vec![]);
        let d = draft(4);
        let original = d.references.clone();
        let gw = gateway(MockScript::clean(1));
        let templates = PromptSet::builtin();
        let (fixed, changed) = fix_references(
            d,
            RefFixMode::Local,
            Some(&statutes),
            &gw,
            &templates.ref_fixer,
            0.0,
            3,
        )
        .unwrap();
        assert_eq!(fixed.references, original);
        assert!(changed.is_empty());
    }

    #[test]
    fn local_fix_is_idempotent() {
        let statutes = StatuteIndex::from_entries(vec![(
            "刑法第133条".to_string(),
            "正确的法条内容。".to_string(),
        )]);
        let gw = gateway(MockScript::clean(1));
        let templates = PromptSet::builtin();
        let mut d = draft(4);
        d.references
            .insert("刑法第133条".to_string(), "错误内容".to_string());
        let (once, _) = fix_references(
            d,
            RefFixMode::Local,
            Some(&statutes),
            &gw,
            &templates.ref_fixer,
            0.0,
            3,
        )
        .unwrap();
        let (twice, changed) = fix_references(
            once.clone(),
            RefFixMode::Local,
            Some(&statutes),
            &gw,
            &templates.ref_fixer,
            0.0,
            3,
        )
        .unwrap();
        assert_eq!(once, twice);
        assert!(changed.is_empty());
    }

    #[test]
    fn llm_fix_restores_canonical_content() {
        let mut d = draft(4);
        d.references
            .insert("刑法第133条".to_string(), "坏掉的内容".to_string());
        let gw = gateway(MockScript::clean(5));
        let templates = PromptSet::builtin();
        let (fixed, changed) = fix_references(
            d,
            RefFixMode::Llm,
            None,
            &gw,
            &templates.ref_fixer,
            0.0,
            3,
        )
        .unwrap();
        assert_eq!(
            fixed.references["刑法第133条"],
            canonical_statute_text("刑法第133条")
        );
        assert_eq!(changed, vec!["刑法第133条".to_string()]);
    }

    #[test]
    fn reason_fixer_noop_on_clean_draft() {
        let gw = gateway(MockScript::clean(2));
        let templates = PromptSet::builtin();
        let (fixed, reasoning_changed, answer_changed) =
            fix_reasoning(draft(4), &gw, &templates.reason_fixer, 0.0, 3).unwrap();
        assert!(!reasoning_changed);
        assert!(!answer_changed);
        assert_eq!(fixed.answer, "[金额]300元<eoa>");
    }

    #[test]
    fn reason_fixer_corrects_wrong_sum() {
        let gw = gateway(MockScript::clean(2));
        let templates = PromptSet::builtin();
        let mut d = draft(4);
        d.answer = "[金额]999元<eoa>".to_string();
        d.reasoning = "金额分别为100元、200元。这些费用总和为999元。".to_string();
        let (fixed, reasoning_changed, answer_changed) =
            fix_reasoning(d, &gw, &templates.reason_fixer, 0.0, 3).unwrap();
        assert!(reasoning_changed);
        assert!(answer_changed);
        assert_eq!(fixed.answer, "[金额]300元<eoa>");
        assert!(fixed.reasoning.contains("总和为300元"));
    }

    #[test]
    fn mutated_immutable_field_rejects() {
        struct Mutator;
        impl crate::gateway::Backend for Mutator {
            fn complete(
                &self,
                request: &ChatRequest,
            ) -> Result<crate::gateway::ChatResponse, crate::error::BackendError> {
                let mut value: Value =
                    serde_json::from_str(find_json_object(&request.prompt).unwrap()).unwrap();
                value["question"] = Value::String("改写过的问题".to_string());
                Ok(crate::gateway::ChatResponse {
                    text: value.to_string(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    latency_ms: 0,
                })
            }
        }
        let gw = Gateway::new(Arc::new(Mutator), 1);
        let templates = PromptSet::builtin();
        let err = fix_reasoning(draft(4), &gw, &templates.reason_fixer, 0.0, 3).unwrap_err();
        assert_eq!(err.category, RejectionCategory::Unfixable);
        assert!(err.message.contains("question"), "{}", err.message);
    }

    #[test]
    fn llm_key_set_mismatch_rejects() {
        struct KeyDropper;
        impl crate::gateway::Backend for KeyDropper {
            fn complete(
                &self,
                _request: &ChatRequest,
            ) -> Result<crate::gateway::ChatResponse, crate::error::BackendError> {
                Ok(crate::gateway::ChatResponse {
                    text: "{}".to_string(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    latency_ms: 0,
                })
            }
        }
        let gw = Gateway::new(Arc::new(KeyDropper), 1);
        let templates = PromptSet::builtin();
        let err = fix_references(
            draft(4),
            RefFixMode::Llm,
            None,
            &gw,
            &templates.ref_fixer,
            0.0,
            3,
        )
        .unwrap_err();
        assert_eq!(err.category, RejectionCategory::Unfixable);
        assert!(err.message.contains("key set"));
    }

    #[test]
    fn verify_parses_both_verdicts() {
        let gw = gateway(MockScript::clean(3));
        let templates = PromptSet::builtin();
        let accept = default_accept_values();
        let verdict = verify(&draft(4), &gw, &templates.verifier, &accept, 0.0, 3);
        assert!(verdict.passed);

        let failing = gateway(MockScript {
            seed: 3,
            p_verify_fail: 1.0,
            ..MockScript::default()
        });
        let verdict = verify(&draft(4), &failing, &templates.verifier, &accept, 0.0, 3);
        assert!(!verdict.passed);
        assert_eq!(verdict.message, "推理与法条不符");
    }

    #[test]
    fn verify_missing_message_synthesizes_one() {
        struct NoMessage;
        impl crate::gateway::Backend for NoMessage {
            fn complete(
                &self,
                _request: &ChatRequest,
            ) -> Result<crate::gateway::ChatResponse, crate::error::BackendError> {
                Ok(crate::gateway::ChatResponse {
                    text: r#"{"verify": "错误"}"#.to_string(),
                    prompt_tokens: 0,
                    completion_tokens: 0,
                    latency_ms: 0,
                })
            }
        }
        let gw = Gateway::new(Arc::new(NoMessage), 1);
        let templates = PromptSet::builtin();
        let verdict = verify(
            &draft(4),
            &gw,
            &templates.verifier,
            &default_accept_values(),
            0.0,
            3,
        );
        assert!(!verdict.passed);
        assert_eq!(verdict.message, "missing verifier message");
    }

    #[test]
    fn gate_keeps_content_identical_on_accept() {
        let d = draft(4);
        let verified = gate(
            d.clone(),
            &Verdict {
                passed: true,
                message: String::new(),
            },
            FixReport::default(),
        )
        .unwrap();
        assert_eq!(verified.question, d.question);
        assert_eq!(verified.answer, d.answer);
        assert_eq!(verified.reasoning, d.reasoning);
        assert_eq!(verified.references, d.references);
        assert_eq!(verified.instruction, d.instruction);
    }

    #[test]
    fn gate_carries_the_verifier_message_on_reject() {
        let err = gate(
            draft(4),
            &Verdict {
                passed: false,
                message: "推理与法条不符".to_string(),
            },
            FixReport::default(),
        )
        .unwrap_err();
        assert_eq!(err.category, RejectionCategory::VerifyFailed);
        assert_eq!(err.message, "推理与法条不符");
    }

    #[test]
    fn seeded_verify_failures_gate_exactly_per_schedule() {
        let script = MockScript {
            seed: 99,
            p_verify_fail: 0.3,
            ..MockScript::default()
        };
        let mock = MockBackend::new(script.clone()).unwrap();
        let gw = Gateway::new(Arc::new(MockBackend::new(script).unwrap()), 8);
        let templates = PromptSet::builtin();
        let accept = default_accept_values();
        let mut accepted = 0usize;
        let mut expected = 0usize;
        for i in 0..1000 {
            let mut d = draft(4);
            d.question = format!("文书：编号{i}的案情。");
            let prompt = templates
                .verifier
                .render(&[("JSON", &draft_prompt_json(&d))])
                .unwrap();
            if !mock.verify_fault(&prompt) {
                expected += 1;
            }
            let verdict = verify(&d, &gw, &templates.verifier, &accept, 0.0, 3);
            if gate(d, &verdict, FixReport::default()).is_ok() {
                accepted += 1;
            }
        }
        assert_eq!(accepted, expected);
        // sanity: the injector actually fired near its configured rate
        assert!((1000 - expected) > 200 && (1000 - expected) < 400);
    }

    #[test]
    fn clean_path_full_refinement_is_a_noop() {
        let statutes = StatuteIndex::from_entries(
            [("刑法第133条", canonical_statute_text("刑法第133条"))]
                .map(|(k, v)| (k.to_string(), v)),
        );
        let gw = gateway(MockScript::clean(8));
        let templates = PromptSet::builtin();
        let accept = default_accept_values();
        let context = ctx(&gw, &templates, Some(&statutes), &accept);
        let d = draft(4);
        let verified = refine(d.clone(), &context).unwrap();
        assert!(verified.fix_report.is_noop());
        assert_eq!(verified.question, d.question);
        assert_eq!(verified.instruction, d.instruction);
    }

    #[test]
    fn arithmetic_mismatch_rejects_without_sum_fixer() {
        let mut d = draft(4);
        d.answer = "[金额]999元<eoa>".to_string();
        d.reasoning = "金额分别为100元、200元。这些费用总和为999元。".to_string();
        assert!(arithmetic_check(&d).is_err());
        // non-amount tasks are out of the tool's scope
        assert!(arithmetic_check(&draft(2)).is_ok());
        // free-form reasoning without a claimed total passes through
        let mut free = draft(4);
        free.reasoning = "综合考虑后得出结论。".to_string();
        assert!(arithmetic_check(&free).is_ok());
    }
}
