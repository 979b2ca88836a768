//! Two-step sampling: an LLM picks the document type that matches a seed
//! problem's shape, while balance-seeking Monte Carlo draws spread accepted
//! records across (task, domain) cells.
//!
//! Cell weights are inverse excess counts, `1 / (1 + n_c - min_c n_c)`: cells
//! at the current minimum keep weight 1 and cells that have pulled ahead are
//! damped, which drives per-cell accepted counts toward uniformity while
//! every draw stays randomized.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Domain, KnowledgeDocument};
use crate::error::{BackendError, CorpusError, PromptError};
use crate::gateway::{ChatRequest, Gateway, Stage};
use crate::generation::find_json_object;
use crate::jsonl;
use crate::prompts::PromptTemplate;

/// Task identifier, 1 through 4.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct TaskId(u8);

impl TaskId {
    pub const ALL: [TaskId; 4] = [TaskId(1), TaskId(2), TaskId(3), TaskId(4)];

    pub fn new(value: u8) -> Result<Self, String> {
        if (1..=4).contains(&value) {
            Ok(TaskId(value))
        } else {
            Err(format!("task_id must be 1..=4, got {value}"))
        }
    }

    pub fn get(&self) -> u8 {
        self.0
    }
}

impl TryFrom<u8> for TaskId {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        TaskId::new(value)
    }
}

impl From<TaskId> for u8 {
    fn from(value: TaskId) -> Self {
        value.0
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Format exemplar for one task. Demonstration only, never emitted as
/// training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedProblem {
    pub id: String,
    pub task_id: TaskId,
    pub instruction: String,
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, Default)]
pub struct SeedSet {
    by_task: BTreeMap<TaskId, Vec<SeedProblem>>,
}

impl SeedSet {
    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        let lines: Vec<(usize, SeedProblem)> = jsonl::read_lines(
            path,
            |source| CorpusError::Io {
                path: path.to_path_buf(),
                source,
            },
            |line, reason| CorpusError::MalformedLine { line, reason },
        )?;
        let mut set = SeedSet::default();
        for (lineno, seed) in lines {
            for (field, value) in [
                ("instruction", &seed.instruction),
                ("question", &seed.question),
                ("answer", &seed.answer),
            ] {
                if value.trim().is_empty() {
                    return Err(CorpusError::MalformedLine {
                        line: lineno,
                        reason: format!("field {field}: must be non-empty (seed {:?})", seed.id),
                    });
                }
            }
            set.by_task.entry(seed.task_id).or_default().push(seed);
        }
        Ok(set)
    }

    pub fn from_seeds(seeds: Vec<SeedProblem>) -> Self {
        let mut set = SeedSet::default();
        for seed in seeds {
            set.by_task.entry(seed.task_id).or_default().push(seed);
        }
        set
    }

    pub fn for_task(&self, task: TaskId) -> &[SeedProblem] {
        self.by_task.get(&task).map_or(&[], Vec::as_slice)
    }

    pub fn tasks(&self) -> impl Iterator<Item = TaskId> + '_ {
        self.by_task.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.by_task.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_task.is_empty()
    }

    pub fn has_all_tasks(&self) -> bool {
        TaskId::ALL.iter().all(|t| !self.for_task(*t).is_empty())
    }
}

/// One balance bucket: a (task, document domain) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub task: TaskId,
    pub domain: Domain,
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "task{}/{}", self.task, self.domain)
    }
}

/// Accepted-record counts per cell. Mutated only on the orchestrator's
/// accept path; counts never decrease.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SamplerState {
    counts: BTreeMap<Cell, u64>,
    total: u64,
}

impl SamplerState {
    pub fn new() -> Self {
        SamplerState::default()
    }

    pub fn count(&self, cell: Cell) -> u64 {
        self.counts.get(&cell).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn update_counts(&mut self, cell: Cell) {
        *self.counts.entry(cell).or_insert(0) += 1;
        self.total += 1;
    }

    pub fn entries(&self) -> Vec<(Cell, u64)> {
        self.counts.iter().map(|(c, n)| (*c, *n)).collect()
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (Cell, u64)>) -> Self {
        let mut state = SamplerState::new();
        for (cell, n) in entries {
            if n > 0 {
                state.counts.insert(cell, n);
                state.total += n;
            }
        }
        state
    }
}

/// Cells that can actually produce a draw: the task has seeds and the
/// domain partition has documents. Sorted, so iteration is deterministic.
pub fn eligible_cells(corpus: &Corpus, seeds: &SeedSet) -> Vec<Cell> {
    let mut cells = Vec::new();
    for task in seeds.tasks() {
        for domain in Domain::ALL {
            if corpus.domain_count(domain) > 0 {
                cells.push(Cell { task, domain });
            }
        }
    }
    cells
}

/// Normalized selection weights over cells, inverse in each cell's count
/// excess over the minimum.
pub fn cell_weights(cells: &[Cell], count_of: impl Fn(Cell) -> u64) -> Vec<f64> {
    let min = cells.iter().map(|&c| count_of(c)).min().unwrap_or(0);
    let raw: Vec<f64> = cells
        .iter()
        .map(|&c| 1.0 / (1.0 + (count_of(c) - min) as f64))
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

fn choose_cell<R: Rng + ?Sized>(cells: &[Cell], weights: &[f64], rng: &mut R) -> Cell {
    debug_assert_eq!(cells.len(), weights.len());
    let roll: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (cell, w) in cells.iter().zip(weights) {
        cumulative += w;
        if roll < cumulative {
            return *cell;
        }
    }
    *cells.last().expect("at least one eligible cell")
}

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("no eligible (task, domain) cells: check seeds and corpus partitions")]
    NoEligibleCells,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("unknown document type {0:?}")]
    UnknownType(String),
    #[error("domain reply unparseable after {attempts} attempts: {last}")]
    Unparseable { attempts: u32, last: String },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Canonical serialization of a seed problem for `{JSON}` slots:
/// instruction, question, answer, in that key order.
pub fn canonical_seed_json(seed: &SeedProblem) -> String {
    #[derive(Serialize)]
    struct View<'a> {
        instruction: &'a str,
        question: &'a str,
        answer: &'a str,
    }
    serde_json::to_string(&View {
        instruction: &seed.instruction,
        question: &seed.question,
        answer: &seed.answer,
    })
    .expect("seed serialization cannot fail")
}

pub fn build_sampling_prompt(
    seed: &SeedProblem,
    template: &PromptTemplate,
) -> Result<String, PromptError> {
    template.render(&[("JSON", &canonical_seed_json(seed))])
}

/// Map a sampling reply onto a domain. The reply must be a JSON record with
/// a `type` field holding one of the two allowed document types.
pub fn parse_domain_reply(text: &str) -> Result<Domain, SampleError> {
    let raw = find_json_object(text).ok_or_else(|| SampleError::Unparseable {
        attempts: 1,
        last: "no JSON object in reply".to_string(),
    })?;
    let value: serde_json::Value =
        serde_json::from_str(raw).map_err(|e| SampleError::Unparseable {
            attempts: 1,
            last: e.to_string(),
        })?;
    let kind = value
        .get("type")
        .and_then(serde_json::Value::as_str)
        .ok_or_else(|| SampleError::Unparseable {
            attempts: 1,
            last: "missing type field".to_string(),
        })?;
    match kind {
        "刑事法律文书" => Ok(Domain::Criminal),
        "民事法律文书" => Ok(Domain::Civil),
        other => Err(SampleError::UnknownType(other.to_string())),
    }
}

/// Ask the backend which document type fits the exemplar. Unparseable
/// replies are retried up to `max_attempts`; an out-of-vocabulary type is a
/// hard error.
pub fn select_domain(
    gateway: &Gateway,
    seed: &SeedProblem,
    template: &PromptTemplate,
    temperature: f64,
    max_attempts: u32,
) -> Result<Domain, SampleError> {
    let prompt = build_sampling_prompt(seed, template)?;
    let request = ChatRequest::new(Stage::Sampling, prompt, temperature);
    let mut last = String::new();
    for attempt in 1..=max_attempts.max(1) {
        let response = gateway.complete(&request)?;
        match parse_domain_reply(&response.text) {
            Ok(domain) => return Ok(domain),
            Err(SampleError::UnknownType(t)) => return Err(SampleError::UnknownType(t)),
            Err(SampleError::Unparseable { last: err, .. }) => {
                log::debug!("sampling reply attempt {attempt} unparseable: {err}");
                last = err;
            }
            Err(other) => return Err(other),
        }
    }
    Err(SampleError::Unparseable {
        attempts: max_attempts.max(1),
        last,
    })
}

/// Per-run cache of the LLM domain choice, keyed by task. With caching
/// enabled the backend is consulted once per task; disabled, once per draw.
#[derive(Debug, Clone, Default)]
pub struct DomainChoiceCache {
    enabled: bool,
    choices: BTreeMap<TaskId, Domain>,
}

impl DomainChoiceCache {
    pub fn new(enabled: bool) -> Self {
        DomainChoiceCache {
            enabled,
            choices: BTreeMap::new(),
        }
    }

    pub fn entries(&self) -> Vec<(TaskId, Domain)> {
        self.choices.iter().map(|(t, d)| (*t, *d)).collect()
    }

    pub fn restore(&mut self, entries: impl IntoIterator<Item = (TaskId, Domain)>) {
        self.choices.extend(entries);
    }

    fn get_or_fetch(
        &mut self,
        task: TaskId,
        fetch: impl FnOnce() -> Result<Domain, SampleError>,
    ) -> Result<Domain, SampleError> {
        if self.enabled {
            if let Some(d) = self.choices.get(&task) {
                return Ok(*d);
            }
        }
        let domain = fetch()?;
        if self.enabled {
            self.choices.insert(task, domain);
        }
        Ok(domain)
    }
}

/// An immutable draw handed to a pipeline worker.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    pub document: KnowledgeDocument,
    pub seed: SeedProblem,
    pub cell: Cell,
    pub draw_ordinal: u64,
    /// Domain the LLM proposed for this task's exemplar shape. Recorded for
    /// the audit trail; the balance rule fixes the sampled domain.
    pub llm_domain: Option<Domain>,
}

pub struct DrawContext<'a> {
    pub corpus: &'a Corpus,
    pub seeds: &'a SeedSet,
    pub state: &'a SamplerState,
    /// Draws dispatched but not yet resolved, by cell. Folded into the
    /// weights so one batch does not pile onto a single cell.
    pub pending: &'a BTreeMap<Cell, u64>,
    pub gateway: Option<&'a Gateway>,
    pub sampling_template: &'a PromptTemplate,
    pub domain_cache: &'a mut DomainChoiceCache,
    pub sampling_temperature: f64,
    pub max_attempts: u32,
    pub draw_ordinal: u64,
}

/// Draw one (document, seed) pair: pick the cell by the balance rule, the
/// seed uniformly within the task, consult (or reuse) the LLM domain choice,
/// then sample the document from the cell's domain partition.
pub fn draw_sample<R: Rng + ?Sized>(
    ctx: &mut DrawContext<'_>,
    rng: &mut R,
) -> Result<SampleDraw, SampleError> {
    let cells = eligible_cells(ctx.corpus, ctx.seeds);
    if cells.is_empty() {
        return Err(SampleError::NoEligibleCells);
    }
    let pending = ctx.pending;
    let state = ctx.state;
    let weights = cell_weights(&cells, |c| {
        state.count(c) + pending.get(&c).copied().unwrap_or(0)
    });
    let cell = choose_cell(&cells, &weights, rng);

    let task_seeds = ctx.seeds.for_task(cell.task);
    debug_assert!(!task_seeds.is_empty());
    let seed = task_seeds[rng.gen_range(0..task_seeds.len())].clone();

    let llm_domain = match ctx.gateway {
        Some(gateway) => Some(ctx.domain_cache.get_or_fetch(cell.task, || {
            select_domain(
                gateway,
                &seed,
                ctx.sampling_template,
                ctx.sampling_temperature,
                ctx.max_attempts,
            )
        })?),
        None => None,
    };
    if let Some(proposed) = llm_domain {
        if proposed != cell.domain {
            log::debug!(
                "task {} exemplar: llm proposed {proposed}, balance rule drew {}",
                cell.task,
                cell.domain
            );
        }
    }

    let document = ctx.corpus.sample_document(cell.domain, rng)?.clone();
    Ok(SampleDraw {
        document,
        seed,
        cell,
        draw_ordinal: ctx.draw_ordinal,
        llm_domain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::KnowledgeDocument;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seed_problem(id: &str, task: u8) -> SeedProblem {
        SeedProblem {
            id: id.to_string(),
            task_id: TaskId::new(task).unwrap(),
            instruction: format!("task {task} instruction"),
            question: "q".to_string(),
            answer: "a".to_string(),
        }
    }

    fn doc(id: &str, domain: Domain) -> KnowledgeDocument {
        KnowledgeDocument {
            id: id.to_string(),
            domain,
            facts: format!("facts {id}"),
            reasons: "r".to_string(),
            results: "s".to_string(),
            relevant_laws: vec![],
        }
    }

    fn full_setup() -> (Corpus, SeedSet) {
        let mut docs = Vec::new();
        for i in 0..20 {
            docs.push(doc(&format!("c{i}"), Domain::Criminal));
            docs.push(doc(&format!("v{i}"), Domain::Civil));
        }
        let corpus = Corpus::from_documents(docs).unwrap();
        let seeds = SeedSet::from_seeds(
            (1..=4)
                .flat_map(|t| (0..3).map(move |i| seed_problem(&format!("s{t}-{i}"), t)))
                .collect(),
        );
        (corpus, seeds)
    }

    fn cell(task: u8, domain: Domain) -> Cell {
        Cell {
            task: TaskId::new(task).unwrap(),
            domain,
        }
    }

    #[test]
    fn update_counts_increments_once() {
        let mut state = SamplerState::new();
        let c = cell(1, Domain::Criminal);
        state.update_counts(c);
        assert_eq!(state.count(c), 1);
        assert_eq!(state.total(), 1);
    }

    #[test]
    fn total_tracks_sum_of_counts() {
        let mut state = SamplerState::new();
        for _ in 0..41 {
            state.update_counts(cell(2, Domain::Civil));
        }
        assert_eq!(state.total(), 41);
        state.update_counts(cell(3, Domain::Criminal));
        assert_eq!(state.total(), 42);
        assert_eq!(
            state.total(),
            state.entries().iter().map(|(_, n)| n).sum::<u64>()
        );
    }

    #[test]
    fn updates_on_distinct_cells_commute() {
        let a = cell(1, Domain::Criminal);
        let b = cell(4, Domain::Civil);
        let mut s1 = SamplerState::new();
        s1.update_counts(a);
        s1.update_counts(b);
        let mut s2 = SamplerState::new();
        s2.update_counts(b);
        s2.update_counts(a);
        assert_eq!(s1, s2);
    }

    #[test]
    fn fresh_state_weights_are_uniform() {
        let cells: Vec<Cell> = (1..=4)
            .flat_map(|t| Domain::ALL.map(|d| cell(t, d)))
            .collect();
        let weights = cell_weights(&cells, |_| 0);
        assert_eq!(weights.len(), 8);
        for w in weights {
            assert!((w - 0.125).abs() < 1e-12);
        }
    }

    #[test]
    fn lopsided_state_follows_inverse_excess_weights() {
        // two cells, counts {9, 0}: the lagging cell gets 10/11.
        let cells = vec![cell(1, Domain::Criminal), cell(1, Domain::Civil)];
        let counts =
            |c: Cell| if c == cell(1, Domain::Criminal) { 9 } else { 0 };
        let weights = cell_weights(&cells, counts);
        assert!((weights[0] - 1.0 / 11.0).abs() < 1e-12);
        assert!((weights[1] - 10.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn selection_frequency_matches_weights() {
        let cells: Vec<Cell> = (1..=4)
            .flat_map(|t| Domain::ALL.map(|d| cell(t, d)))
            .collect();
        let state = SamplerState::from_entries(vec![
            (cells[0], 3),
            (cells[1], 1),
            (cells[2], 0),
            (cells[3], 5),
        ]);
        let weights = cell_weights(&cells, |c| state.count(c));
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let draws = 20_000usize;
        let mut counts = BTreeMap::new();
        for _ in 0..draws {
            let c = choose_cell(&cells, &weights, &mut rng);
            *counts.entry(c).or_insert(0usize) += 1;
        }
        for (c, w) in cells.iter().zip(&weights) {
            let freq = counts.get(c).copied().unwrap_or(0) as f64 / draws as f64;
            assert!(
                (freq - w).abs() < 0.01,
                "cell {c}: frequency {freq}, weight {w}"
            );
        }
    }

    #[test]
    fn draws_stay_balanced_over_a_long_run() {
        let (corpus, seeds) = full_setup();
        let mut state = SamplerState::new();
        let pending = BTreeMap::new();
        let mut cache = DomainChoiceCache::new(false);
        let template = crate::prompts::PromptSet::builtin().sampling;
        let mut rng = ChaCha8Rng::seed_from_u64(4242);
        for ordinal in 0..800 {
            let mut ctx = DrawContext {
                corpus: &corpus,
                seeds: &seeds,
                state: &state,
                pending: &pending,
                gateway: None,
                sampling_template: &template,
                domain_cache: &mut cache,
                sampling_temperature: 0.0,
                max_attempts: 3,
                draw_ordinal: ordinal,
            };
            let draw = draw_sample(&mut ctx, &mut rng).unwrap();
            assert_eq!(draw.document.domain, draw.cell.domain);
            assert_eq!(draw.seed.task_id, draw.cell.task);
            state.update_counts(draw.cell);
        }
        let counts: Vec<u64> = state.entries().iter().map(|(_, n)| *n).collect();
        assert_eq!(counts.len(), 8);
        let max = *counts.iter().max().unwrap() as f64;
        let min = *counts.iter().min().unwrap() as f64;
        let mean = state.total() as f64 / counts.len() as f64;
        assert!(
            max - min <= 0.15 * mean,
            "spread {} exceeds 0.15 × mean {mean} (counts {counts:?})",
            max - min
        );
    }

    #[test]
    fn domain_reply_parses_both_allowed_types() {
        assert_eq!(
            parse_domain_reply(r#"{"type": "刑事法律文书"}"#).unwrap(),
            Domain::Criminal
        );
        assert_eq!(
            parse_domain_reply(r#"{"type": "民事法律文书"}"#).unwrap(),
            Domain::Civil
        );
    }

    #[test]
    fn out_of_vocabulary_type_is_an_error() {
        match parse_domain_reply(r#"{"type": "行政法律文书"}"#) {
            Err(SampleError::UnknownType(t)) => assert_eq!(t, "行政法律文书"),
            other => panic!("expected unknown type, got {other:?}"),
        }
    }

    #[test]
    fn reply_without_json_is_unparseable() {
        assert!(matches!(
            parse_domain_reply("我选择刑事法律文书"),
            Err(SampleError::Unparseable { .. })
        ));
    }

    #[test]
    fn domain_cache_consults_once_per_task() {
        let mut cache = DomainChoiceCache::new(true);
        let mut calls = 0;
        for _ in 0..5 {
            let d = cache
                .get_or_fetch(TaskId::new(2).unwrap(), || {
                    calls += 1;
                    Ok(Domain::Criminal)
                })
                .unwrap();
            assert_eq!(d, Domain::Criminal);
        }
        assert_eq!(calls, 1);

        let mut uncached = DomainChoiceCache::new(false);
        let mut calls = 0;
        for _ in 0..5 {
            uncached
                .get_or_fetch(TaskId::new(2).unwrap(), || {
                    calls += 1;
                    Ok(Domain::Civil)
                })
                .unwrap();
        }
        assert_eq!(calls, 5);
    }

    #[test]
    fn task_id_bounds() {
        assert!(TaskId::new(0).is_err());
        assert!(TaskId::new(5).is_err());
        assert_eq!(TaskId::new(4).unwrap().get(), 4);
        let parsed: TaskId = serde_json::from_str("3").unwrap();
        assert_eq!(parsed.get(), 3);
        assert!(serde_json::from_str::<TaskId>("9").is_err());
    }
}
