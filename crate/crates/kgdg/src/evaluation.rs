//! Scoring for the four legal-reasoning tasks: ROUGE-L for article
//! prediction, normalized log-distance for prison terms, extraction accuracy
//! for damages amounts, and the four-task average.
//!
//! Tokenization for ROUGE-L is deterministic: NFC-normalize, one token per
//! CJK ideograph, one token per maximal ASCII alphanumeric run, everything
//! else dropped.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::EvalError;
use crate::exec::Executor;
use crate::sampling::TaskId;
use crate::text;

pub const DEFAULT_CAP_MONTHS: f64 = 600.0;

/// Gold label, typed per task: text for task 1, months for tasks 2 and 3,
/// an amount for task 4.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gold {
    Number(f64),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub task_id: TaskId,
    pub prediction: String,
    pub gold: Gold,
}

impl EvalItem {
    fn gold_text(&self) -> Result<&str, EvalError> {
        match &self.gold {
            Gold::Text(s) => Ok(s),
            Gold::Number(_) => Err(EvalError::MalformedLine {
                line: 0,
                reason: "task 1 gold must be text".to_string(),
            }),
        }
    }

    fn gold_number(&self) -> Result<f64, EvalError> {
        match &self.gold {
            Gold::Number(n) => Ok(*n),
            Gold::Text(_) => Err(EvalError::MalformedLine {
                line: 0,
                reason: format!("task {} gold must be a number", self.task_id),
            }),
        }
    }
}

/// Load `eval_input.jsonl` and type-check each gold label against its task.
pub fn load_items(path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    let lines: Vec<(usize, Value)> = crate::jsonl::read_lines(
        path,
        |source| EvalError::Io {
            path: path.to_path_buf(),
            source,
        },
        |line, reason| EvalError::MalformedLine { line, reason },
    )?;
    let mut items = Vec::with_capacity(lines.len());
    for (line, value) in lines {
        let item: EvalItem =
            serde_json::from_value(value).map_err(|e| EvalError::MalformedLine {
                line,
                reason: e.to_string(),
            })?;
        let well_typed = match (item.task_id.get(), &item.gold) {
            (1, Gold::Text(_)) => true,
            (2..=4, Gold::Number(n)) => *n >= 0.0,
            _ => false,
        };
        if !well_typed {
            return Err(EvalError::MalformedLine {
                line,
                reason: format!("gold is not well-typed for task {}", item.task_id),
            });
        }
        items.push(item);
    }
    Ok(items)
}

/// ROUGE tokens: CJK ideographs one-by-one, ASCII alphanumeric runs as
/// single tokens, the rest dropped.
pub fn tokenize(input: &str) -> Vec<String> {
    let normalized = text::nfc(input);
    let mut tokens = Vec::new();
    let mut run = String::new();
    for c in normalized.chars() {
        if c.is_ascii_alphanumeric() {
            run.push(c);
        } else {
            if !run.is_empty() {
                tokens.push(std::mem::take(&mut run));
            }
            if text::is_cjk(c) {
                tokens.push(c.to_string());
            }
        }
    }
    if !run.is_empty() {
        tokens.push(run);
    }
    tokens
}

/// Longest common subsequence length, two-row dynamic program.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut curr = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            curr[j + 1] = if x == y {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// ROUGE-L F-measure: `2PR / (P + R)` with precision and recall both taken
/// over the LCS. Zero when either side has no tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let cand = tokenize(candidate);
    let refr = tokenize(reference);
    rouge_l_tokens(&cand, &refr)
}

pub fn rouge_l_tokens(cand: &[String], refr: &[String]) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let lcs = lcs_len(cand, refr) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let precision = lcs / cand.len() as f64;
    let recall = lcs / refr.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Bounded score for prison-term predictions: 1 at equality, decreasing in
/// log-space distance, 0 at or beyond the cap. Unparsable predictions score 0.
pub fn normalized_log_distance(pred_months: Option<f64>, gold_months: f64, cap_months: f64) -> f64 {
    let Some(pred) = pred_months else {
        return 0.0;
    };
    if !(pred.is_finite() && pred >= 0.0) {
        return 0.0;
    }
    let distance = ((pred + 1.0).ln() - (gold_months + 1.0).ln()).abs();
    let normalizer = (cap_months + 1.0).ln();
    1.0 - (distance / normalizer).min(1.0)
}

static AMOUNT_MARK: &str = "[金额]";
static AMOUNT_END: &str = "<eoa>";

/// Pull the damages amount out of the `[金额]…<eoa>` envelope: take the
/// substring between the last `[金额]` and the following `<eoa>`, strip the
/// 元 unit, whitespace and digit-group separators, then parse a non-negative
/// decimal (Chinese numerals accepted).
pub fn extract_amount(prediction: &str) -> Option<f64> {
    let start = prediction.rfind(AMOUNT_MARK)? + AMOUNT_MARK.len();
    let rest = &prediction[start..];
    let end = rest.find(AMOUNT_END)?;
    let inner: String = rest[..end]
        .chars()
        .filter(|c| !c.is_whitespace() && *c != ',' && *c != '，')
        .collect();
    let inner = inner.strip_suffix('元').unwrap_or(&inner);
    if inner.is_empty() {
        return None;
    }
    if inner.chars().all(|c| c.is_ascii_digit() || c == '.') {
        let value: f64 = inner.parse().ok()?;
        return (value >= 0.0).then_some(value);
    }
    text::parse_chinese_numeral(inner).map(|v| v as f64)
}

static TERM_RE: OnceLock<Regex> = OnceLock::new();

fn term_re() -> &'static Regex {
    TERM_RE.get_or_init(|| {
        Regex::new(
            r"(?:([0-9零一二三四五六七八九十百千万]+)年(?:([0-9零一二三四五六七八九十百千万]+)个月)?)|(?:([0-9零一二三四五六七八九十百千万]+)个月)",
        )
        .unwrap()
    })
}

const ANSWER_MARKERS: [&str; 4] = ["答案是", "答案为", "答案：", "答案:"];

/// Parse a prison term in months from `X年Y个月`, `X年` or `Y个月`, taking
/// the first match after the last answer marker (or from the start when no
/// marker is present). Arabic and Chinese numerals both parse.
pub fn extract_term(prediction: &str) -> Option<f64> {
    let start = ANSWER_MARKERS
        .iter()
        .filter_map(|m| prediction.rfind(m).map(|i| i + m.len()))
        .max()
        .unwrap_or(0);
    let region = &prediction[start..];
    let caps = term_re().captures(region)?;
    if let Some(months_only) = caps.get(3) {
        let months = text::parse_integer_token(months_only.as_str())?;
        return Some(months as f64);
    }
    let years = text::parse_integer_token(caps.get(1)?.as_str())?;
    let months = match caps.get(2) {
        Some(m) => text::parse_integer_token(m.as_str())?,
        None => 0,
    };
    Some((years * 12 + months) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task_id: TaskId,
    /// 100 × mean of per-item scores in [0, 1].
    pub score: f64,
    pub n_items: usize,
    pub n_unparsed: usize,
}

/// Score one task's items. All items must share a task id; per-item scoring
/// is parallelized and reduced in input order.
pub fn score_task(
    items: &[EvalItem],
    cap_months: f64,
    executor: &Executor,
) -> Result<TaskScore, EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    let task = items[0].task_id;
    if let Some(other) = items.iter().find(|i| i.task_id != task) {
        return Err(EvalError::MixedTasks(task.get(), other.task_id.get()));
    }
    for item in items {
        match task.get() {
            1 => {
                item.gold_text()?;
            }
            _ => {
                item.gold_number()?;
            }
        }
    }

    let scored: Vec<(f64, bool)> = executor.map(items, |item| match task.get() {
        1 => (
            rouge_l(&item.prediction, item.gold_text().expect("checked above")),
            false,
        ),
        2 | 3 => {
            let pred = extract_term(&item.prediction);
            (
                normalized_log_distance(pred, item.gold_number().expect("checked above"), cap_months),
                pred.is_none(),
            )
        }
        _ => {
            let pred = extract_amount(&item.prediction);
            let gold = item.gold_number().expect("checked above");
            (
                if pred == Some(gold) { 1.0 } else { 0.0 },
                pred.is_none(),
            )
        }
    });

    let sum: f64 = scored.iter().map(|(s, _)| s).sum();
    let n_unparsed = scored.iter().filter(|(_, unparsed)| *unparsed).count();
    Ok(TaskScore {
        task_id: task,
        score: 100.0 * sum / items.len() as f64,
        n_items: items.len(),
        n_unparsed,
    })
}

/// Half-up rounding to one decimal, the display convention for reports.
/// Scores are non-negative; `floor(10x + 0.5)` keeps decimal halves going up
/// where binary `round` would waver.
pub fn round1(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    (x * 10.0 + 0.5).floor() / 10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub per_task: BTreeMap<TaskId, TaskScore>,
    pub average: f64,
}

/// Combine the four task scores into a report. All four tasks must be
/// present; the average is their arithmetic mean.
pub fn aggregate(scores: impl IntoIterator<Item = TaskScore>) -> Result<Report, EvalError> {
    let mut per_task = BTreeMap::new();
    for score in scores {
        per_task.insert(score.task_id, score);
    }
    for task in TaskId::ALL {
        if !per_task.contains_key(&task) {
            return Err(EvalError::MissingTask(task.get()));
        }
    }
    let average = per_task.values().map(|s| s.score).sum::<f64>() / per_task.len() as f64;
    Ok(Report { per_task, average })
}

impl Report {
    pub fn to_json(&self) -> Value {
        let per_task: serde_json::Map<String, Value> = self
            .per_task
            .iter()
            .map(|(task, score)| {
                (
                    format!("task_{task}"),
                    serde_json::json!({
                        "score": round1(score.score),
                        "n_items": score.n_items,
                        "n_unparsed": score.n_unparsed,
                    }),
                )
            })
            .collect();
        serde_json::json!({
            "per_task": per_task,
            "average": round1(self.average),
        })
    }

    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str("task    score   items  unparsed\n");
        for (task, score) in &self.per_task {
            out.push_str(&format!(
                "#{:<6} {:>6.1} {:>6} {:>9}\n",
                task,
                round1(score.score),
                score.n_items,
                score.n_unparsed
            ));
        }
        out.push_str(&format!("average {:>6.1}\n", round1(self.average)));
        out
    }
}

/// Score a full mixed-task input file and aggregate it.
pub fn evaluate_items(
    items: &[EvalItem],
    cap_months: f64,
    executor: &Executor,
) -> Result<Report, EvalError> {
    let mut by_task: BTreeMap<TaskId, Vec<EvalItem>> = BTreeMap::new();
    for item in items {
        by_task.entry(item.task_id).or_default().push(item.clone());
    }
    let mut scores = Vec::new();
    for (_, task_items) in by_task {
        scores.push(score_task(&task_items, cap_months, executor)?);
    }
    aggregate(scores)
}
