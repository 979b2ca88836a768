//! Deterministic fault-injecting mock backend.
//!
//! Replies are pure functions of the script seed, the stage, the prompt, and
//! a per-(stage, prompt) invocation counter; re-running an identical call
//! sequence reproduces the byte-identical response sequence. The mock parses
//! the content it needs out of each prompt (the embedded seed problem and
//! document text) and fabricates schema-valid stage output from it, so the
//! whole pipeline can run offline with known ground truth.
//!
//! Fault injection:
//! - `p_transport_error` drops a request with a transport error; the decision
//!   depends only on the prompt, so a retry of the same prompt fails again.
//! - `p_malformed` corrupts a reply; the decision also depends on the
//!   invocation counter, so retries can recover.
//! - `p_wrong_reference` corrupts statute contents in writer replies,
//!   per key, leaving repair work for the reference fixer.
//! - `p_verify_fail` makes the verifier reject; prompt-pure like transport.

use std::collections::{BTreeMap, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, ChatRequest, ChatResponse, Stage};
use crate::error::BackendError;
use crate::text::{fnv1a64, to_chinese_numeral};

fn default_p() -> f64 {
    0.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MockScript {
    pub seed: u64,
    #[serde(default = "default_p")]
    pub p_malformed: f64,
    #[serde(default = "default_p")]
    pub p_wrong_reference: f64,
    #[serde(default = "default_p")]
    pub p_verify_fail: f64,
    #[serde(default = "default_p")]
    pub p_transport_error: f64,
}

impl Default for MockScript {
    fn default() -> Self {
        MockScript {
            seed: 0,
            p_malformed: 0.0,
            p_wrong_reference: 0.0,
            p_verify_fail: 0.0,
            p_transport_error: 0.0,
        }
    }
}

impl MockScript {
    pub fn clean(seed: u64) -> Self {
        MockScript {
            seed,
            ..MockScript::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [
            ("p_malformed", self.p_malformed),
            ("p_wrong_reference", self.p_wrong_reference),
            ("p_verify_fail", self.p_verify_fail),
            ("p_transport_error", self.p_transport_error),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} must be within [0, 1], got {p}"));
            }
        }
        Ok(())
    }
}

/// The shape a malformed reply takes. Which shape fires is part of the
/// deterministic schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedKind {
    /// Prose with no JSON object at all.
    Prose,
    /// JSON missing a required field for the stage.
    MissingField,
    /// Schema-valid JSON whose answer violates the task format.
    BadAnswerFormat,
    /// Reference fixer reply that drops a key.
    KeyDrop,
    /// Reasoning fixer reply that edits an immutable field.
    MutateImmutable,
    /// Sampling reply with a document type outside the allowed vocabulary.
    UnknownType,
}

/// The canonical statute text the mock treats as ground truth for a citation
/// key. Fixture statute indexes are built from the same function, so local
/// and LLM reference fixing converge on identical content.
pub fn canonical_statute_text(key: &str) -> String {
    format!("{key}规定：行为人造成他人损害的，依法承担相应法律责任；情节严重的，从重处理。")
}

const SALT_TRANSPORT: u64 = 0xA1;
const SALT_MALFORMED: u64 = 0xB2;
const SALT_KIND: u64 = 0xB7;
const SALT_WRONG_REF: u64 = 0xC3;
const SALT_VERIFY: u64 = 0xD4;

fn hash01(seed: u64, salt: u64, stage: u64, prompt_hash: u64, k: u64) -> f64 {
    let mut bytes = Vec::with_capacity(40);
    bytes.extend_from_slice(&seed.to_le_bytes());
    bytes.extend_from_slice(&salt.to_le_bytes());
    bytes.extend_from_slice(&stage.to_le_bytes());
    bytes.extend_from_slice(&prompt_hash.to_le_bytes());
    bytes.extend_from_slice(&k.to_le_bytes());
    let h = fnv1a64(&bytes);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn stage_id(stage: Stage) -> u64 {
    match stage {
        Stage::Sampling => 1,
        Stage::Writer => 2,
        Stage::RefFixer => 3,
        Stage::ReasonFixer => 4,
        Stage::Verifier => 5,
    }
}

pub struct MockBackend {
    script: MockScript,
    counters: Mutex<HashMap<(u64, u64), u64>>,
}

impl MockBackend {
    pub fn new(script: MockScript) -> Result<Self, BackendError> {
        script.validate().map_err(BackendError::InvalidRequest)?;
        Ok(MockBackend {
            script,
            counters: Mutex::new(HashMap::new()),
        })
    }

    pub fn script(&self) -> &MockScript {
        &self.script
    }

    fn next_invocation(&self, stage: Stage, prompt_hash: u64) -> u64 {
        let mut counters = self.counters.lock().unwrap();
        let slot = counters.entry((stage_id(stage), prompt_hash)).or_insert(0);
        let k = *slot;
        *slot += 1;
        k
    }

    /// Whether a request on this prompt is dropped with a transport error.
    /// Pure in the prompt: retrying does not help.
    pub fn transport_fault(&self, stage: Stage, prompt: &str) -> bool {
        self.script.p_transport_error > 0.0
            && hash01(
                self.script.seed,
                SALT_TRANSPORT,
                stage_id(stage),
                fnv1a64(prompt.as_bytes()),
                0,
            ) < self.script.p_transport_error
    }

    /// The malformed-reply decision for invocation `k` of this prompt.
    pub fn malformed_fault(&self, stage: Stage, prompt: &str, k: u64) -> Option<MalformedKind> {
        if self.script.p_malformed <= 0.0 {
            return None;
        }
        let ph = fnv1a64(prompt.as_bytes());
        let sid = stage_id(stage);
        if hash01(self.script.seed, SALT_MALFORMED, sid, ph, k) >= self.script.p_malformed {
            return None;
        }
        let pick = (hash01(self.script.seed, SALT_KIND, sid, ph, k) * 1e6) as u64;
        Some(match stage {
            Stage::Sampling => [MalformedKind::Prose, MalformedKind::UnknownType][(pick % 2) as usize],
            Stage::Writer => [
                MalformedKind::Prose,
                MalformedKind::MissingField,
                MalformedKind::BadAnswerFormat,
            ][(pick % 3) as usize],
            Stage::RefFixer => [MalformedKind::Prose, MalformedKind::KeyDrop][(pick % 2) as usize],
            Stage::ReasonFixer => {
                [MalformedKind::Prose, MalformedKind::MutateImmutable][(pick % 2) as usize]
            }
            Stage::Verifier => [MalformedKind::Prose, MalformedKind::MissingField][(pick % 2) as usize],
        })
    }

    /// The malformed schedule for the first `attempts` invocations of a
    /// prompt, from a fresh counter. Test oracle.
    pub fn malformed_schedule(
        &self,
        stage: Stage,
        prompt: &str,
        attempts: u64,
    ) -> Vec<Option<MalformedKind>> {
        (0..attempts)
            .map(|k| self.malformed_fault(stage, prompt, k))
            .collect()
    }

    fn wrong_reference(&self, prompt_hash: u64, key_index: u64) -> bool {
        self.script.p_wrong_reference > 0.0
            && hash01(
                self.script.seed,
                SALT_WRONG_REF,
                stage_id(Stage::Writer),
                prompt_hash,
                key_index,
            ) < self.script.p_wrong_reference
    }

    /// Whether the verifier rejects this prompt. Pure in the prompt.
    pub fn verify_fault(&self, prompt: &str) -> bool {
        self.script.p_verify_fail > 0.0
            && hash01(
                self.script.seed,
                SALT_VERIFY,
                stage_id(Stage::Verifier),
                fnv1a64(prompt.as_bytes()),
                0,
            ) < self.script.p_verify_fail
    }

    fn respond(&self, stage: Stage, prompt: &str) -> Result<String, BackendError> {
        if self.transport_fault(stage, prompt) {
            return Err(BackendError::Transport(
                "injected: connection reset by peer".to_string(),
            ));
        }
        let k = self.next_invocation(stage, fnv1a64(prompt.as_bytes()));
        let malformed = self.malformed_fault(stage, prompt, k);
        Ok(match stage {
            Stage::Sampling => self.sampling_reply(prompt, malformed),
            Stage::Writer => self.writer_reply(prompt, malformed),
            Stage::RefFixer => self.ref_fixer_reply(prompt, malformed),
            Stage::ReasonFixer => self.reason_fixer_reply(prompt, malformed),
            Stage::Verifier => self.verifier_reply(prompt, malformed),
        })
    }

    fn sampling_reply(&self, prompt: &str, malformed: Option<MalformedKind>) -> String {
        match malformed {
            Some(MalformedKind::Prose) => PROSE_REPLY.to_string(),
            Some(MalformedKind::UnknownType) => r#"{"type": "行政法律文书"}"#.to_string(),
            _ => {
                if looks_criminal(prompt) {
                    r#"{"type": "刑事法律文书"}"#.to_string()
                } else {
                    r#"{"type": "民事法律文书"}"#.to_string()
                }
            }
        }
    }

    fn writer_reply(&self, prompt: &str, malformed: Option<MalformedKind>) -> String {
        if malformed == Some(MalformedKind::Prose) {
            return PROSE_REPLY.to_string();
        }
        let prompt_hash = fnv1a64(prompt.as_bytes());
        let seed = parse_seed_problem(prompt);
        let doc = parse_document_section(prompt);
        let task = detect_task(&seed.instruction);
        let doc_hash = fnv1a64(doc.facts.as_bytes());

        let mut references = BTreeMap::new();
        for (i, key) in doc.laws.iter().enumerate() {
            let content = if self.wrong_reference(prompt_hash, i as u64) {
                format!("{key}的内容此处表述有误，需要核实修正。")
            } else {
                canonical_statute_text(key)
            };
            references.insert(key.clone(), content);
        }

        let laws_clause = if doc.laws.is_empty() {
            "相关法律规定".to_string()
        } else {
            doc.laws.join("、")
        };

        // The writer is instructed to rewrite names and paraphrase rather
        // than copy the document. Model that with a deterministic surname
        // cipher and opening variant keyed off the whole prompt, so the same
        // document drafted against different seeds yields distinct
        // questions, while an identical (document, seed) pair reproduces
        // byte-identical output.
        let question = format!(
            "{}文书：{}",
            task_question_prefix(task),
            privacy_rewrite(&doc.facts, prompt_hash)
        );
        let (mut answer, reasoning) = match task {
            MockTask::Amount => {
                let mut components = amounts_in(&doc.facts);
                if components.is_empty() {
                    components = vec![
                        1000 + (doc_hash % 40) * 250,
                        500 + ((doc_hash >> 8) % 30) * 200,
                    ];
                }
                let total: u64 = components.iter().sum();
                let listed = components
                    .iter()
                    .map(|a| format!("{a}元"))
                    .collect::<Vec<_>>()
                    .join("、");
                (
                    format!("[金额]{total}元<eoa>"),
                    format!(
                        "经查，本案涉及的金额分别为{listed}。这些费用总和为{total}元。依据{laws_clause}，犯罪金额应当以实际损失合计认定。"
                    ),
                )
            }
            MockTask::Term => {
                let months = 6 + doc_hash % 115;
                let term = render_term(months, doc_hash & 1 == 0);
                (
                    term.clone(),
                    format!(
                        "被告人的行为触犯{laws_clause}，综合犯罪情节、认罪态度与社会危害程度，依法应当判处{term}。"
                    ),
                )
            }
            MockTask::Article => {
                let key = doc
                    .laws
                    .first()
                    .cloned()
                    .unwrap_or_else(|| "相关法律".to_string());
                let content = canonical_statute_text(&key);
                (
                    format!("本案应当适用{key}：{content}"),
                    format!("本案事实与{key}的构成要件相符，应当适用该条认定法律责任。"),
                )
            }
        };

        if malformed == Some(MalformedKind::BadAnswerFormat) {
            answer = match task {
                MockTask::Amount => answer.replace("<eoa>", ""),
                MockTask::Term => "免予刑事处罚".to_string(),
                MockTask::Article => String::new(),
            };
        }

        let mut body = json!({
            "instruction": seed.instruction,
            "question": question,
            "answer": answer,
            "reasoning": reasoning,
            "reference": references,
        });
        if malformed == Some(MalformedKind::MissingField) {
            body.as_object_mut().unwrap().remove("reasoning");
        }
        format!("好的，以下是按照要求生成的数据：\n```json\n{body}\n```\n希望符合格式要求。")
    }

    fn ref_fixer_reply(&self, prompt: &str, malformed: Option<MalformedKind>) -> String {
        if malformed == Some(MalformedKind::Prose) {
            return PROSE_REPLY.to_string();
        }
        let map = first_json_object(prompt)
            .and_then(|raw| serde_json::from_str::<BTreeMap<String, Value>>(raw).ok())
            .unwrap_or_default();
        let mut fixed: BTreeMap<String, String> = map
            .keys()
            .map(|key| (key.clone(), canonical_statute_text(key)))
            .collect();
        if malformed == Some(MalformedKind::KeyDrop) {
            if let Some(first) = fixed.keys().next().cloned() {
                fixed.remove(&first);
            }
        }
        serde_json::to_string(&fixed).unwrap()
    }

    fn reason_fixer_reply(&self, prompt: &str, malformed: Option<MalformedKind>) -> String {
        if malformed == Some(MalformedKind::Prose) {
            return PROSE_REPLY.to_string();
        }
        let Some(mut draft) = first_json_object(prompt)
            .and_then(|raw| serde_json::from_str::<Value>(raw).ok())
        else {
            return PROSE_REPLY.to_string();
        };
        if malformed == Some(MalformedKind::MutateImmutable) {
            if let Some(q) = draft.get("question").and_then(Value::as_str) {
                let mutated = format!("{q}（补充说明）");
                draft["question"] = Value::String(mutated);
            }
            return draft.to_string();
        }
        let reasoning = draft
            .get("reasoning")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        let answer = draft
            .get("answer")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        if let Some(correct) = sum_claim_correction(&reasoning, &answer) {
            draft["reasoning"] = Value::String(correct.reasoning);
            draft["answer"] = Value::String(correct.answer);
        }
        draft.to_string()
    }

    fn verifier_reply(&self, prompt: &str, malformed: Option<MalformedKind>) -> String {
        match malformed {
            Some(MalformedKind::Prose) => return PROSE_REPLY.to_string(),
            Some(MalformedKind::MissingField) => {
                return r#"{"message": "数据看起来基本合理。"}"#.to_string()
            }
            _ => {}
        }
        if self.verify_fault(prompt) {
            return r#"{"verify": "错误", "message": "推理与法条不符"}"#.to_string();
        }
        let draft = first_json_object(prompt).and_then(|raw| serde_json::from_str::<Value>(raw).ok());
        if let Some(draft) = draft {
            let reasoning = draft
                .get("reasoning")
                .and_then(Value::as_str)
                .unwrap_or_default();
            let answer = draft.get("answer").and_then(Value::as_str).unwrap_or_default();
            if sum_claim_correction(reasoning, answer).is_some() {
                return r#"{"verify": "错误", "message": "推理中的金额合计与答案不一致"}"#
                    .to_string();
            }
        }
        r#"{"verify": "正确", "message": "推理过程、引用法条与答案一致。"}"#.to_string()
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let stage = request.stage().ok_or_else(|| {
            BackendError::InvalidRequest(format!("unknown request tag {:?}", request.request_tag))
        })?;
        let text = self.respond(stage, &request.prompt)?;
        Ok(ChatResponse {
            prompt_tokens: (request.prompt.chars().count() / 4) as u64,
            completion_tokens: (text.chars().count() / 4) as u64,
            latency_ms: 0,
            text,
        })
    }
}

const PROSE_REPLY: &str = "抱歉，我目前无法按要求生成这份内容，请稍后再试。";

fn looks_criminal(prompt: &str) -> bool {
    ["[金额]", "有期徒刑", "刑期", "犯罪", "被告人"]
        .iter()
        .any(|marker| prompt.contains(marker))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MockTask {
    Amount,
    Term,
    Article,
}

fn detect_task(instruction: &str) -> MockTask {
    if instruction.contains("[金额]") {
        MockTask::Amount
    } else if instruction.contains("刑期") || instruction.contains("有期徒刑") {
        MockTask::Term
    } else {
        MockTask::Article
    }
}

fn task_question_prefix(task: MockTask) -> &'static str {
    match task {
        MockTask::Amount => "请计算下列文书涉及的总金额。",
        MockTask::Term => "请预测下列文书中被告人的刑期。",
        MockTask::Article => "请判断下列文书应适用的法条。",
    }
}

const COMMON_SURNAMES: [char; 10] = ['张', '李', '王', '赵', '刘', '陈', '杨', '黄', '周', '吴'];

const OPENING_VARIANTS: [&str; 6] = [
    "经审理查明",
    "经本院审理查明",
    "本院经审理查明",
    "经开庭审理查明",
    "经依法审理查明",
    "案经审理查明",
];

/// Deterministic stand-in for the prompt's privacy instruction: rotate
/// common surnames by a prompt-keyed shift and vary the boilerplate opening.
fn privacy_rewrite(facts: &str, prompt_hash: u64) -> String {
    let shift = (prompt_hash % 9 + 1) as usize;
    let rewritten: String = facts
        .chars()
        .map(|c| match COMMON_SURNAMES.iter().position(|&s| s == c) {
            Some(i) => COMMON_SURNAMES[(i + shift) % COMMON_SURNAMES.len()],
            None => c,
        })
        .collect();
    let opening = OPENING_VARIANTS[((prompt_hash >> 8) % 6) as usize];
    match rewritten.strip_prefix("经审理查明") {
        Some(rest) => format!("{opening}{rest}"),
        None => rewritten,
    }
}

struct SeedView {
    instruction: String,
}

fn parse_seed_problem(prompt: &str) -> SeedView {
    let instruction = first_json_object(prompt)
        .and_then(|raw| serde_json::from_str::<Value>(raw).ok())
        .and_then(|v| v.get("instruction").and_then(Value::as_str).map(String::from))
        .unwrap_or_default();
    SeedView { instruction }
}

struct DocView {
    facts: String,
    laws: Vec<String>,
}

const DOC_LABELS: [&str; 4] = ["案件事实：", "裁判理由：", "裁判结果：", "相关法条："];

fn parse_document_section(prompt: &str) -> DocView {
    let facts = doc_section(prompt, "案件事实：").unwrap_or_default();
    let laws = doc_section(prompt, "相关法条：")
        .map(|s| {
            s.split('、')
                .map(str::trim)
                .filter(|k| !k.is_empty() && *k != "无")
                .map(String::from)
                .collect()
        })
        .unwrap_or_default();
    DocView { facts, laws }
}

fn doc_section(prompt: &str, label: &str) -> Option<String> {
    let start = prompt.find(label)? + label.len();
    let rest = &prompt[start..];
    let end = DOC_LABELS
        .iter()
        .filter_map(|other| rest.find(other))
        .min()
        .unwrap_or(rest.len());
    Some(rest[..end].trim().to_string())
}

use crate::generation::find_json_object as first_json_object;

static AMOUNT_RE: std::sync::OnceLock<regex::Regex> = std::sync::OnceLock::new();

fn amount_re() -> &'static regex::Regex {
    AMOUNT_RE.get_or_init(|| regex::Regex::new(r"([0-9][0-9,，]*)元").unwrap())
}

/// Every integral amount written as `N元` in the text, in order.
fn amounts_in(text: &str) -> Vec<u64> {
    amount_re()
        .captures_iter(text)
        .filter_map(|c| {
            let digits: String = c[1].chars().filter(|ch| ch.is_ascii_digit()).collect();
            digits.parse().ok()
        })
        .collect()
}

struct SumCorrection {
    reasoning: String,
    answer: String,
}

/// Consistency rule shared by the mock fixer and verifier: the amounts
/// listed before the first 总和为 claim must add up to the claimed total,
/// and the enveloped answer must equal it. Returns the corrected fields
/// when the rule is violated, `None` when consistent or not applicable.
fn sum_claim_correction(reasoning: &str, answer: &str) -> Option<SumCorrection> {
    let claim_pos = reasoning.find("总和为")?;
    let components = amounts_in(&reasoning[..claim_pos]);
    let stated = amounts_in(&reasoning[claim_pos..]).into_iter().next()?;
    let answer_amount = amounts_in(answer).into_iter().next();
    let expected: u64 = if components.is_empty() {
        stated
    } else {
        components.iter().sum()
    };
    let consistent = stated == expected && answer_amount == Some(expected);
    if consistent {
        return None;
    }
    let reasoning = reasoning.replacen(
        &format!("总和为{stated}元"),
        &format!("总和为{expected}元"),
        1,
    );
    Some(SumCorrection {
        reasoning,
        answer: format!("[金额]{expected}元<eoa>"),
    })
}

fn render_term(months: u64, arabic: bool) -> String {
    let years = months / 12;
    let rest = months % 12;
    let num = |v: u64| {
        if arabic {
            v.to_string()
        } else {
            to_chinese_numeral(v)
        }
    };
    match (years, rest) {
        (0, m) => format!("有期徒刑{}个月", num(m)),
        (y, 0) => format!("有期徒刑{}年", num(y)),
        (y, m) => format!("有期徒刑{}年{}个月", num(y), num(m)),
    }
}
