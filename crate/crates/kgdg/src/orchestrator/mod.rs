//! End-to-end pipeline loop: sample, write, fix, verify, accept, until the
//! verified dataset reaches the target size. One coordinator owns the
//! sampler state, the dedup set and all file appends; a bounded worker pool
//! processes independent records and hands results back in submission order.

pub mod checkpoint;
pub mod events;
pub mod stats;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Seek, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::PipelineConfig;
use crate::corpus::{Corpus, StatuteIndex};
use crate::error::{RejectionCategory, RunError};
use crate::exec::Executor;
use crate::expansion::{self, TrainingExample};
use crate::gateway::{build_backend, Gateway, MockBackend, Stage};
use crate::generation::{self, AnswerRules, DraftRecord, Provenance, RetryPolicy};
use crate::jsonl;
use crate::prompts::PromptSet;
use crate::refinement::{self, RefineContext, VerifiedRecord};
use crate::sampling::{
    draw_sample, Cell, DomainChoiceCache, DrawContext, SampleDraw, SampleError, SamplerState,
    SeedSet,
};
use crate::text;

use checkpoint::{Checkpoint, FileOffsets};
use events::EventLog;
use stats::RunStats;

/// Output directory layout.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub output_dir: PathBuf,
    pub drafts: PathBuf,
    pub verified: PathBuf,
    pub rejected: PathBuf,
    pub spillover: PathBuf,
    pub train: PathBuf,
    pub checkpoint: PathBuf,
    pub stats: PathBuf,
    pub log: PathBuf,
}

impl RunPaths {
    pub fn new(output_dir: &Path) -> Self {
        RunPaths {
            output_dir: output_dir.to_path_buf(),
            drafts: output_dir.join("drafts.jsonl"),
            verified: output_dir.join("verified.jsonl"),
            rejected: output_dir.join("rejected.jsonl"),
            spillover: output_dir.join("spillover.jsonl"),
            train: output_dir.join("train.jsonl"),
            checkpoint: output_dir.join("checkpoint"),
            stats: output_dir.join("stats.json"),
            log: output_dir.join("run.log"),
        }
    }

    fn partial(path: &Path) -> PathBuf {
        let mut name = path.file_name().unwrap_or_default().to_os_string();
        name.push(".partial");
        path.with_file_name(name)
    }
}

/// Append-only output file with byte accounting for checkpoint truncation.
struct AppendLog {
    writer: BufWriter<File>,
    bytes: u64,
}

impl AppendLog {
    fn open(path: &Path, truncate_to: Option<u64>) -> Result<Self, RunError> {
        // existing bytes up to the checkpoint offset are kept; set_len below
        // trims anything past it
        let file = std::fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path)
            .map_err(RunError::io(format!("opening {}", path.display())))?;
        if let Some(len) = truncate_to {
            file.set_len(len)
                .map_err(RunError::io(format!("truncating {}", path.display())))?;
        }
        let mut file = file;
        let bytes = file
            .seek(std::io::SeekFrom::End(0))
            .map_err(RunError::io(format!("seeking {}", path.display())))?;
        Ok(AppendLog {
            writer: BufWriter::new(file),
            bytes,
        })
    }

    fn write_line(&mut self, line: &str) -> Result<(), RunError> {
        self.writer
            .write_all(line.as_bytes())
            .map_err(RunError::io("appending output line"))?;
        self.bytes += line.len() as u64;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), RunError> {
        self.writer.flush().map_err(RunError::io("flushing output"))
    }
}

/// Rejection audit line: `rejected.jsonl` schema. `stage` is the stage tag
/// that threw the record out ("writer", "ref_fixer", "reason_fixer",
/// "verifier" or "dedup").
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RejectedLine {
    pub provenance: Provenance,
    pub stage: String,
    pub category: RejectionCategory,
    pub message: String,
}

struct StageGateways {
    by_stage: BTreeMap<Stage, Arc<Gateway>>,
    unique: Vec<Arc<Gateway>>,
}

impl StageGateways {
    fn build(config: &PipelineConfig) -> Result<Self, RunError> {
        // All mock-kind stages share one backend instance so its
        // deterministic per-prompt counters are coherent across stages.
        let script = config.mock_script();
        let shared_mock: Arc<MockBackend> = Arc::new(
            MockBackend::new(script.clone()).map_err(|e| RunError::Config(e.to_string()))?,
        );

        let mut by_key: HashMap<String, Arc<Gateway>> = HashMap::new();
        let mut by_stage = BTreeMap::new();
        let mut unique = Vec::new();
        for stage in [
            Stage::Sampling,
            Stage::Writer,
            Stage::RefFixer,
            Stage::ReasonFixer,
            Stage::Verifier,
        ] {
            let backend_config = config.backend_for(stage);
            let key = serde_json::to_string(backend_config).expect("config serializes");
            let gateway = match by_key.get(&key) {
                Some(g) => g.clone(),
                None => {
                    let backend: Arc<dyn crate::gateway::Backend> = match backend_config.kind {
                        crate::gateway::BackendKind::Mock => shared_mock.clone(),
                        crate::gateway::BackendKind::Http => {
                            build_backend(backend_config, &script)
                                .map_err(|e| RunError::Config(e.to_string()))?
                        }
                    };
                    let gateway = Arc::new(Gateway::new(backend, backend_config.max_in_flight));
                    by_key.insert(key, gateway.clone());
                    unique.push(gateway.clone());
                    gateway
                }
            };
            by_stage.insert(stage, gateway);
        }
        Ok(StageGateways { by_stage, unique })
    }

    fn get(&self, stage: Stage) -> &Gateway {
        self.by_stage.get(&stage).expect("all stages mapped")
    }

    fn usage(&self) -> (u64, u64, u64, u64) {
        let mut totals = (0, 0, 0, 0);
        for gateway in &self.unique {
            let snap = gateway.snapshot();
            totals.0 += snap.calls;
            totals.1 += snap.errors;
            totals.2 += snap.prompt_tokens;
            totals.3 += snap.completion_tokens;
        }
        totals
    }
}

/// Question fingerprint for exact-duplicate detection: 64-bit FNV-1a over
/// the NFC-normalized, whitespace-collapsed question text.
pub fn question_fingerprint(question: &str) -> u64 {
    text::fnv1a64(text::collapse_whitespace(&text::nfc(question)).as_bytes())
}

/// Duplicate check against the accepted-question fingerprint set.
pub fn dedup_check(question: &str, seen: &HashSet<u64>) -> Result<u64, RejectionCategory> {
    let fp = question_fingerprint(question);
    if seen.contains(&fp) {
        Err(RejectionCategory::Duplicate)
    } else {
        Ok(fp)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Completed,
    /// Stopped by the crash-simulation hook; checkpoint and partial files
    /// remain on disk.
    Aborted,
}

#[derive(Debug)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub stats: RunStats,
    pub paths: RunPaths,
}

struct OutcomeRejection {
    provenance: Provenance,
    stage: Stage,
    category: RejectionCategory,
    message: String,
    auth: bool,
}

struct WorkOutcome {
    cell: Cell,
    draft_line: Option<String>,
    result: Result<VerifiedRecord, OutcomeRejection>,
}

struct LoadedInputs {
    corpus: Corpus,
    seeds: SeedSet,
    statutes: Option<StatuteIndex>,
    templates: PromptSet,
}

fn load_inputs(config: &PipelineConfig) -> Result<LoadedInputs, RunError> {
    let corpus = Corpus::load(&config.paths.corpus)
        .map_err(|e| RunError::Config(format!("corpus: {e}")))?;
    let seeds = SeedSet::load(&config.paths.seeds)
        .map_err(|e| RunError::Config(format!("seeds: {e}")))?;
    if !seeds.has_all_tasks() {
        return Err(RunError::Config(
            "seed set must contain at least one seed per task".into(),
        ));
    }
    let statutes = match &config.paths.statutes {
        Some(path) => Some(
            StatuteIndex::load(path).map_err(|e| RunError::Config(format!("statutes: {e}")))?,
        ),
        None => None,
    };
    let templates = match &config.paths.prompts {
        Some(dir) => PromptSet::load_dir(dir)
            .map_err(|e| RunError::Config(format!("prompts: {e}")))?,
        None => PromptSet::builtin(),
    };
    Ok(LoadedInputs {
        corpus,
        seeds,
        statutes,
        templates,
    })
}

/// Drive the generation loop until `target_count` verified records are
/// written (or the stall guard trips). Resumes automatically from a
/// checkpoint left by a previous interrupted run.
pub fn run_generate(config: &PipelineConfig) -> Result<RunSummary, RunError> {
    let started = Instant::now();
    config.validate()?;
    let inputs = load_inputs(config)?;
    let paths = RunPaths::new(&config.paths.output_dir);

    if paths.verified.exists() {
        return Err(RunError::Config(format!(
            "output {} already exists; generation is complete (use a fresh output_dir)",
            paths.verified.display()
        )));
    }
    std::fs::create_dir_all(&paths.output_dir)
        .map_err(RunError::io("creating output directory"))?;

    let resume = paths.checkpoint.exists().then(|| Checkpoint::load(&paths.checkpoint)).transpose()?;
    let offsets = resume
        .as_ref()
        .map(|c| c.file_offsets.clone())
        .unwrap_or_default();

    let gateways = StageGateways::build(config)?;
    let executor = Executor::new(config.batch_size);
    let mut log = EventLog::open(&paths.log).map_err(RunError::io("opening run.log"))?;

    let mut drafts_out = AppendLog::open(&RunPaths::partial(&paths.drafts), Some(offsets.drafts))?;
    let mut verified_out =
        AppendLog::open(&RunPaths::partial(&paths.verified), Some(offsets.verified))?;
    let mut rejected_out =
        AppendLog::open(&RunPaths::partial(&paths.rejected), Some(offsets.rejected))?;
    let mut spillover_out =
        AppendLog::open(&RunPaths::partial(&paths.spillover), Some(offsets.spillover))?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = SamplerState::new();
    let mut domain_cache = DomainChoiceCache::new(config.cache_domain_choice);
    let mut dedup_seen: HashSet<u64> = HashSet::new();
    let mut stats = RunStats::default();
    let mut accepted: u64 = 0;
    let mut next_ordinal: u64 = 0;
    let mut consecutive_rejects: u64 = 0;
    // usage totals carried over from before a resume
    let mut usage_base = (0u64, 0u64, 0u64, 0u64);

    if let Some(checkpoint) = &resume {
        if checkpoint.rng_seed != config.seed {
            return Err(RunError::Config(format!(
                "checkpoint was written with seed {}, config says {}",
                checkpoint.rng_seed, config.seed
            )));
        }
        rng.set_word_pos(checkpoint.rng_word_pos);
        state = checkpoint.sampler_state();
        domain_cache = checkpoint.domain_cache(config.cache_domain_choice);
        dedup_seen = checkpoint.dedup_fingerprints.iter().copied().collect();
        stats = checkpoint.stats.clone();
        accepted = checkpoint.accepted_count;
        next_ordinal = checkpoint.next_draw_ordinal;
        consecutive_rejects = checkpoint.consecutive_rejects;
        usage_base = (
            stats.backend_calls,
            stats.backend_errors,
            stats.prompt_tokens,
            stats.completion_tokens,
        );
        log.emit(
            "resumed",
            json!({"accepted": accepted, "draw_ordinal": next_ordinal}),
        );
    } else {
        log.emit(
            "run_started",
            json!({
                "seed": config.seed,
                "target_count": config.target_count,
                "batch_size": config.batch_size,
            }),
        );
    }

    let accept_values: BTreeSet<String> =
        config.refinement.accept_values.iter().cloned().collect();
    let answer_rules = AnswerRules::default();
    let retry_policy = RetryPolicy {
        max_attempts: config.max_attempts_per_draft,
    };
    let refine_ctx = RefineContext {
        mode: config.ref_fix_mode(),
        statutes: inputs.statutes.as_ref(),
        ref_fixer_gateway: gateways.get(Stage::RefFixer),
        reason_fixer_gateway: gateways.get(Stage::ReasonFixer),
        verifier_gateway: gateways.get(Stage::Verifier),
        ref_fixer_template: &inputs.templates.ref_fixer,
        reason_fixer_template: &inputs.templates.reason_fixer,
        verifier_template: &inputs.templates.verifier,
        accept_values: &accept_values,
        fixer_temperature: config.temperatures.fixer,
        verifier_temperature: config.temperatures.verifier,
        max_attempts: config.max_attempts_per_draft,
    };
    let writer_gateway = gateways.get(Stage::Writer);
    let writer_temperature = config.temperatures.writer;
    let templates = &inputs.templates;

    let process = |draw: &SampleDraw| -> WorkOutcome {
        let cell = draw.cell;
        match generation::generate_draft(
            writer_gateway,
            draw,
            templates,
            &answer_rules,
            retry_policy,
            writer_temperature,
        ) {
            Err(rejection) => WorkOutcome {
                cell,
                draft_line: None,
                result: Err(OutcomeRejection {
                    provenance: Provenance {
                        document_id: draw.document.id.clone(),
                        seed_id: draw.seed.id.clone(),
                        task_id: draw.seed.task_id,
                        domain: draw.cell.domain,
                        draw_ordinal: draw.draw_ordinal,
                        attempt: rejection.attempts,
                    },
                    stage: Stage::Writer,
                    category: rejection.category,
                    message: rejection.message,
                    auth: rejection.auth,
                }),
            },
            Ok(draft) => {
                let draft_line = jsonl::to_line(&draft);
                let provenance = draft.provenance.clone();
                let result = refinement::refine(draft, &refine_ctx).map_err(|rejection| {
                    OutcomeRejection {
                        provenance,
                        stage: rejection.stage,
                        category: rejection.category,
                        message: rejection.message,
                        auth: false,
                    }
                });
                WorkOutcome {
                    cell,
                    draft_line: Some(draft_line),
                    result,
                }
            }
        }
    };

    let mut aborted = false;
    'outer: while accepted < config.target_count {
        // Draw the batch on the coordinator; pending counts keep the weights
        // aware of in-flight work so batch size does not change the draws.
        let mut pending: BTreeMap<Cell, u64> = BTreeMap::new();
        let mut draws: Vec<SampleDraw> = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let mut ctx = DrawContext {
                corpus: &inputs.corpus,
                seeds: &inputs.seeds,
                state: &state,
                pending: &pending,
                gateway: Some(gateways.get(Stage::Sampling)),
                sampling_template: &inputs.templates.sampling,
                domain_cache: &mut domain_cache,
                sampling_temperature: config.temperatures.sampling,
                max_attempts: config.max_attempts_per_draft,
                draw_ordinal: next_ordinal,
            };
            match draw_sample(&mut ctx, &mut rng) {
                Ok(draw) => {
                    next_ordinal += 1;
                    *pending.entry(draw.cell).or_insert(0) += 1;
                    draws.push(draw);
                }
                Err(SampleError::Backend(e)) if e.is_auth() => {
                    return Err(RunError::Auth(e.to_string()));
                }
                Err(e) => {
                    next_ordinal += 1;
                    stats.sampling_skips += 1;
                    consecutive_rejects += 1;
                    log.emit(
                        "draw_skipped",
                        json!({"stage": "sampling", "message": e.to_string()}),
                    );
                    if consecutive_rejects >= config.stall_window {
                        return Err(stall(&mut log, &mut stats, &paths, config, e.to_string()));
                    }
                }
            }
        }

        let outcomes = executor.map(&draws, |draw| process(draw));

        for outcome in outcomes {
            if let Some(line) = &outcome.draft_line {
                drafts_out.write_line(line)?;
            }
            match outcome.result {
                Ok(verified) => {
                    if accepted >= config.target_count {
                        spillover_out.write_line(&jsonl::to_line(&verified))?;
                        stats.record_spillover();
                        log.emit_record(
                            "spillover",
                            "gate",
                            &verified.provenance,
                            json!({}),
                        );
                        continue;
                    }
                    let fingerprint = if config.dedup {
                        match dedup_check(&verified.question, &dedup_seen) {
                            Ok(fp) => Some(fp),
                            Err(category) => {
                                let line = RejectedLine {
                                    provenance: verified.provenance.clone(),
                                    stage: "dedup".to_string(),
                                    category,
                                    message: "duplicate question fingerprint".to_string(),
                                };
                                rejected_out.write_line(&jsonl::to_line(&line))?;
                                stats.record_rejection(category);
                                consecutive_rejects += 1;
                                log.emit_record(
                                    "rejected",
                                    "dedup",
                                    &verified.provenance,
                                    json!({"category": category.as_str()}),
                                );
                                if consecutive_rejects >= config.stall_window {
                                    return Err(stall(
                                        &mut log,
                                        &mut stats,
                                        &paths,
                                        config,
                                        "duplicates only".to_string(),
                                    ));
                                }
                                continue;
                            }
                        }
                    } else {
                        None
                    };
                    verified_out.write_line(&jsonl::to_line(&verified))?;
                    if let Some(fp) = fingerprint {
                        dedup_seen.insert(fp);
                    }
                    state.update_counts(outcome.cell);
                    accepted += 1;
                    consecutive_rejects = 0;
                    stats.record_accept(outcome.cell);
                    log.emit_record(
                        "accepted",
                        "gate",
                        &verified.provenance,
                        json!({"record_id": verified.record_id, "accepted": accepted}),
                    );
                    if let Some(limit) = config.abort_after_accepted {
                        if accepted >= limit && accepted < config.target_count {
                            // Simulated crash: flush data files, skip the
                            // checkpoint, leave partials in place.
                            drafts_out.flush()?;
                            verified_out.flush()?;
                            rejected_out.flush()?;
                            spillover_out.flush()?;
                            log.emit("aborted_by_hook", json!({"accepted": accepted}));
                            log.flush();
                            aborted = true;
                            break 'outer;
                        }
                    }
                }
                Err(rejection) => {
                    if rejection.auth {
                        return Err(RunError::Auth(rejection.message));
                    }
                    let line = RejectedLine {
                        provenance: rejection.provenance.clone(),
                        stage: rejection.stage.tag().to_string(),
                        category: rejection.category,
                        message: rejection.message.clone(),
                    };
                    rejected_out.write_line(&jsonl::to_line(&line))?;
                    stats.record_rejection(rejection.category);
                    consecutive_rejects += 1;
                    log.emit_record(
                        "rejected",
                        rejection.stage.tag(),
                        &rejection.provenance,
                        json!({
                            "category": rejection.category.as_str(),
                            "message": rejection.message.clone(),
                        }),
                    );
                    if consecutive_rejects >= config.stall_window {
                        return Err(stall(&mut log, &mut stats, &paths, config, rejection.message));
                    }
                }
            }
        }

        drafts_out.flush()?;
        verified_out.flush()?;
        rejected_out.flush()?;
        spillover_out.flush()?;

        let usage = gateways.usage();
        stats.backend_calls = usage_base.0 + usage.0;
        stats.backend_errors = usage_base.1 + usage.1;
        stats.prompt_tokens = usage_base.2 + usage.2;
        stats.completion_tokens = usage_base.3 + usage.3;
        stats.wall_time_ms = started.elapsed().as_millis() as u64;

        let mut fingerprints: Vec<u64> = dedup_seen.iter().copied().collect();
        fingerprints.sort_unstable();
        let mut checkpoint = Checkpoint {
            accepted_count: accepted,
            next_draw_ordinal: next_ordinal,
            consecutive_rejects,
            rng_seed: config.seed,
            rng_word_pos: rng.get_word_pos(),
            sampler_counts: vec![],
            domain_choices: domain_cache
                .entries()
                .into_iter()
                .map(|(t, d)| (t.get(), d))
                .collect(),
            dedup_fingerprints: fingerprints,
            file_offsets: FileOffsets {
                drafts: drafts_out.bytes,
                verified: verified_out.bytes,
                rejected: rejected_out.bytes,
                spillover: spillover_out.bytes,
            },
            stats: stats.clone(),
        };
        checkpoint.set_sampler_state(&state);
        checkpoint.save(&paths.checkpoint)?;
        log.flush();
    }

    if aborted {
        return Ok(RunSummary {
            outcome: RunOutcome::Aborted,
            stats,
            paths,
        });
    }

    // Finalize: promote partials with atomic renames, drop the checkpoint.
    for (partial_source, target) in [
        (RunPaths::partial(&paths.drafts), &paths.drafts),
        (RunPaths::partial(&paths.verified), &paths.verified),
        (RunPaths::partial(&paths.rejected), &paths.rejected),
        (RunPaths::partial(&paths.spillover), &paths.spillover),
    ] {
        std::fs::rename(&partial_source, target).map_err(RunError::io(format!(
            "finalizing {}",
            target.display()
        )))?;
    }
    std::fs::remove_file(&paths.checkpoint).ok();

    stats.wall_time_ms = started.elapsed().as_millis() as u64;
    let body = serde_json::to_vec_pretty(&stats).expect("stats serialize");
    std::fs::write(&paths.stats, body).map_err(RunError::io("writing stats.json"))?;
    log.emit(
        "finalized",
        json!({"accepted": accepted, "drafts_attempted": stats.drafts_attempted}),
    );
    log.flush();

    debug_assert!(stats.identity_holds());
    debug_assert_eq!(state.total(), accepted);
    Ok(RunSummary {
        outcome: RunOutcome::Completed,
        stats,
        paths,
    })
}

fn stall(
    log: &mut EventLog,
    stats: &mut RunStats,
    paths: &RunPaths,
    config: &PipelineConfig,
    last: String,
) -> RunError {
    log.emit(
        "stall",
        json!({"window": config.stall_window, "last_error": last}),
    );
    log.flush();
    let body = serde_json::to_vec_pretty(stats).expect("stats serialize");
    let _ = std::fs::write(&paths.stats, body);
    RunError::Stall {
        window: config.stall_window,
        last,
    }
}

/// Read a finished run's verified records.
pub fn load_verified(path: &Path) -> Result<Vec<VerifiedRecord>, RunError> {
    let lines: Vec<(usize, VerifiedRecord)> = jsonl::read_lines(
        path,
        |source| RunError::Io {
            context: format!("reading {}", path.display()),
            source,
        },
        |line, reason| RunError::Config(format!("{} line {line}: {reason}", path.display())),
    )?;
    Ok(lines.into_iter().map(|(_, record)| record).collect())
}

/// Expand a finished run's verified records into the training file.
pub fn run_expand(config: &PipelineConfig) -> Result<(PathBuf, Vec<TrainingExample>), RunError> {
    let paths = RunPaths::new(&config.paths.output_dir);
    if !paths.verified.exists() {
        return Err(RunError::Io {
            context: format!("expand input {}", paths.verified.display()),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no verified.jsonl"),
        });
    }
    let records = load_verified(&paths.verified)?;
    if records.is_empty() {
        return Err(RunError::Config("nothing to expand".into()));
    }
    let executor = Executor::new(config.batch_size);
    let output = expansion::expand_dataset(&records, &config.expansion, &executor)
        .map_err(|e| RunError::Config(e.to_string()))?;
    jsonl::write_all(&paths.train, &output.examples)
        .map_err(RunError::io("writing train.jsonl"))?;
    Ok((paths.train.clone(), output.examples))
}

/// Load a finished run's statistics.
pub fn run_stats(output_dir: &Path) -> Result<RunStats, RunError> {
    let path = RunPaths::new(output_dir).stats;
    let raw = std::fs::read_to_string(&path).map_err(RunError::io(format!(
        "reading {} (did the run finish?)",
        path.display()
    )))?;
    serde_json::from_str(&raw).map_err(|e| RunError::Config(format!("corrupt stats: {e}")))
}

/// Re-run the fix and verify stages over an existing draft file, writing
/// fresh `verified.jsonl` / `rejected.jsonl` into the output directory.
pub fn verify_only(config: &PipelineConfig, drafts_path: &Path) -> Result<RunStats, RunError> {
    config.validate()?;
    let inputs = load_inputs(config)?;
    let gateways = StageGateways::build(config)?;
    let executor = Executor::new(config.batch_size);
    let paths = RunPaths::new(&config.paths.output_dir);
    std::fs::create_dir_all(&paths.output_dir)
        .map_err(RunError::io("creating output directory"))?;

    let drafts: Vec<DraftRecord> = jsonl::read_lines(
        drafts_path,
        |source| RunError::Io {
            context: format!("reading {}", drafts_path.display()),
            source,
        },
        |line, reason| {
            RunError::Config(format!("{} line {line}: {reason}", drafts_path.display()))
        },
    )?
    .into_iter()
    .map(|(_, d)| d)
    .collect();
    if drafts.is_empty() {
        return Err(RunError::Config("no drafts to verify".into()));
    }

    let accept_values: BTreeSet<String> =
        config.refinement.accept_values.iter().cloned().collect();
    let refine_ctx = RefineContext {
        mode: config.ref_fix_mode(),
        statutes: inputs.statutes.as_ref(),
        ref_fixer_gateway: gateways.get(Stage::RefFixer),
        reason_fixer_gateway: gateways.get(Stage::ReasonFixer),
        verifier_gateway: gateways.get(Stage::Verifier),
        ref_fixer_template: &inputs.templates.ref_fixer,
        reason_fixer_template: &inputs.templates.reason_fixer,
        verifier_template: &inputs.templates.verifier,
        accept_values: &accept_values,
        fixer_temperature: config.temperatures.fixer,
        verifier_temperature: config.temperatures.verifier,
        max_attempts: config.max_attempts_per_draft,
    };

    let results = executor.map(&drafts, |draft| {
        refinement::refine(draft.clone(), &refine_ctx).map_err(|rejection| RejectedLine {
            provenance: draft.provenance.clone(),
            stage: rejection.stage.tag().to_string(),
            category: rejection.category,
            message: rejection.message,
        })
    });

    let mut stats = RunStats::default();
    let mut verified = Vec::new();
    let mut rejected = Vec::new();
    for (draft, result) in drafts.iter().zip(results) {
        match result {
            Ok(record) => {
                stats.record_accept(Cell {
                    task: draft.provenance.task_id,
                    domain: draft.provenance.domain,
                });
                verified.push(record);
            }
            Err(line) => {
                stats.record_rejection(line.category);
                rejected.push(line);
            }
        }
    }
    jsonl::write_all(&paths.verified, &verified).map_err(RunError::io("writing verified.jsonl"))?;
    jsonl::write_all(&paths.rejected, &rejected).map_err(RunError::io("writing rejected.jsonl"))?;
    let usage = gateways.usage();
    stats.backend_calls = usage.0;
    stats.backend_errors = usage.1;
    stats.prompt_tokens = usage.2;
    stats.completion_tokens = usage.3;
    let body = serde_json::to_vec_pretty(&stats).expect("stats serialize");
    std::fs::write(&paths.stats, body).map_err(RunError::io("writing stats.json"))?;
    Ok(stats)
}
