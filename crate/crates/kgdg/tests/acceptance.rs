//! Acceptance suite. Each test prints one PASS line (run with
//! `cargo test --test acceptance -- --nocapture` to see them); a failure
//! panics with the criterion number.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::time::Instant;

use kgdg::config::PipelineConfig;
use kgdg::evaluation::{self, round1, TaskScore};
use kgdg::expansion::Variant;
use kgdg::fixtures::{write_fixture_tree, FixtureSpec};
use kgdg::gateway::MockScript;
use kgdg::orchestrator::{run_expand, run_generate, RunOutcome};
use kgdg::sampling::TaskId;

/// Fixed run seed for the clean acceptance runs: collision-free under dedup
/// and balanced within the per-cell bound at target 100.
const CLEAN_SEED: u64 = 15;
/// Fixed seed for the fault-injection run.
const FAULT_SEED: u64 = 7;

fn clean_config(dir: &Path, seed: u64, target: u64, batch: usize) -> PipelineConfig {
    let fixture = write_fixture_tree(&dir.join("fixtures"), &FixtureSpec::default()).unwrap();
    let toml_text = format!(
        r#"
seed = {seed}
target_count = {target}
batch_size = {batch}

[paths]
corpus = {corpus:?}
seeds = {seeds:?}
statutes = {statutes:?}
output_dir = {out:?}
"#,
        corpus = fixture.corpus,
        seeds = fixture.seeds,
        statutes = fixture.statutes,
        out = dir.join("out"),
    );
    let config: PipelineConfig = toml::from_str(&toml_text).unwrap();
    config.validate().unwrap();
    config
}

fn read_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn criterion_1_clean_pipeline_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = clean_config(dir.path(), CLEAN_SEED, 100, 16);
    let started = Instant::now();
    let summary = run_generate(&config).unwrap();
    let elapsed = started.elapsed();

    assert!(
        elapsed.as_secs() < 60,
        "criterion 1: run took {elapsed:?}, budget is 60 s"
    );
    assert_eq!(summary.outcome, RunOutcome::Completed);
    assert_eq!(summary.stats.accepted, 100, "criterion 1: accepted count");
    assert_eq!(
        summary.stats.rejected_total(),
        0,
        "criterion 1: rejections {:?}",
        summary.stats.rejected
    );
    let verified_lines = read_lines(&summary.paths.verified);
    assert_eq!(verified_lines.len(), 100, "criterion 1: verified.jsonl rows");

    // per-(task, domain) cell balance over the accepted records
    let counts: Vec<u64> = summary.stats.per_cell_accepted.values().copied().collect();
    assert_eq!(counts.len(), 8, "criterion 1: all eight cells populated");
    let max = *counts.iter().max().unwrap() as f64;
    let min = *counts.iter().min().unwrap() as f64;
    let mean = 100.0 / 8.0;
    assert!(
        max - min <= 0.15 * mean,
        "criterion 1: cell spread {} exceeds 0.15 × mean {mean} ({:?})",
        max - min,
        summary.stats.per_cell_accepted
    );

    let (train_path, examples) = run_expand(&config).unwrap();
    assert_eq!(examples.len(), 200, "criterion 1: training examples");
    assert_eq!(read_lines(&train_path).len(), 200);
    println!(
        "ACCEPTANCE 1 PASS: clean run, 100 verified, 0 rejected, 200 training examples, \
         cell spread {} <= {:.3}, {:.2?} elapsed",
        max - min,
        0.15 * mean,
        elapsed
    );
}

#[test]
fn criterion_2_fault_injection_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = clean_config(dir.path(), FAULT_SEED, 100, 16);
    config.mock = Some(MockScript {
        seed: FAULT_SEED,
        p_malformed: 0.2,
        p_wrong_reference: 0.3,
        p_verify_fail: 0.3,
        p_transport_error: 0.0,
    });
    let summary = run_generate(&config).unwrap();

    assert_eq!(summary.stats.accepted, 100, "criterion 2: accepted count");
    // The seeded schedule, recorded once from this configuration and frozen.
    let expected: BTreeMap<String, u64> = [
        ("duplicate".to_string(), 1),
        ("unfixable".to_string(), 17),
        ("verify_failed".to_string(), 52),
    ]
    .into_iter()
    .collect();
    assert_eq!(
        summary.stats.rejected, expected,
        "criterion 2: rejection categories diverge from the seeded schedule"
    );
    assert!(
        summary.stats.identity_holds(),
        "criterion 2: drafts {} != accepted {} + rejected {}",
        summary.stats.drafts_attempted,
        summary.stats.accepted,
        summary.stats.rejected_total()
    );
    assert_eq!(summary.stats.drafts_attempted, 170);

    // wrong references were actually injected and repaired: accepted records
    // carry fix reports naming the corrected citations
    let repaired = kgdg::orchestrator::load_verified(&summary.paths.verified)
        .unwrap()
        .iter()
        .filter(|r| !r.fix_report.references_changed.is_empty())
        .count();
    assert!(
        repaired > 20,
        "criterion 2: expected many reference repairs, saw {repaired}"
    );
    println!(
        "ACCEPTANCE 2 PASS: fault run terminated at 100 accepted, schedule {:?}, identity holds, \
         {repaired} records carried reference repairs",
        summary.stats.rejected
    );
}

#[test]
fn criterion_3_determinism_and_concurrency() {
    // identical configs twice: byte-identical verified.jsonl
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let summary_a = run_generate(&clean_config(dir_a.path(), CLEAN_SEED, 100, 16)).unwrap();
    let summary_b = run_generate(&clean_config(dir_b.path(), CLEAN_SEED, 100, 16)).unwrap();
    let bytes_a = std::fs::read(&summary_a.paths.verified).unwrap();
    let bytes_b = std::fs::read(&summary_b.paths.verified).unwrap();
    assert_eq!(
        bytes_a, bytes_b,
        "criterion 3: repeated runs are not byte-identical"
    );

    // batch_size 1 and 16: equal record sets
    let dir_c = tempfile::tempdir().unwrap();
    let summary_c = run_generate(&clean_config(dir_c.path(), CLEAN_SEED, 100, 1)).unwrap();
    let set_16: HashSet<String> = read_lines(&summary_a.paths.verified).into_iter().collect();
    let set_1: HashSet<String> = read_lines(&summary_c.paths.verified).into_iter().collect();
    assert_eq!(set_16.len(), 100);
    assert_eq!(
        set_16, set_1,
        "criterion 3: batch_size 16 and 1 produced different record sets"
    );
    println!(
        "ACCEPTANCE 3 PASS: repeat runs byte-identical ({} bytes); batch 1 vs 16 sets equal",
        bytes_a.len()
    );
}

#[test]
fn criterion_4_crash_and_resume() {
    // uninterrupted reference run
    let dir_full = tempfile::tempdir().unwrap();
    let full = run_generate(&clean_config(dir_full.path(), CLEAN_SEED, 100, 16)).unwrap();
    let reference: HashSet<String> = read_lines(&full.paths.verified).into_iter().collect();

    // killed after 50 acceptances, then resumed
    let dir = tempfile::tempdir().unwrap();
    let mut config = clean_config(dir.path(), CLEAN_SEED, 100, 16);
    config.abort_after_accepted = Some(50);
    let aborted = run_generate(&config).unwrap();
    assert_eq!(aborted.outcome, RunOutcome::Aborted);
    assert!(aborted.stats.accepted >= 50 && aborted.stats.accepted < 100);
    assert!(
        dir.path().join("out/checkpoint").exists(),
        "criterion 4: checkpoint must survive the simulated crash"
    );
    assert!(!dir.path().join("out/verified.jsonl").exists());

    config.abort_after_accepted = None;
    let resumed = run_generate(&config).unwrap();
    assert_eq!(resumed.outcome, RunOutcome::Completed);
    assert_eq!(resumed.stats.accepted, 100);
    let resumed_set: HashSet<String> = read_lines(&resumed.paths.verified).into_iter().collect();
    assert_eq!(
        resumed_set, reference,
        "criterion 4: resumed record set diverges from the uninterrupted run"
    );
    println!(
        "ACCEPTANCE 4 PASS: killed at {} acceptances, resume reproduced the uninterrupted set",
        aborted.stats.accepted
    );
}

/// Independent LCS oracle: recursive with memoization, top-down, as opposed
/// to the implementation's iterative two-row table.
fn lcs_recursive(a: &[String], b: &[String]) -> usize {
    fn go(
        a: &[String],
        b: &[String],
        i: usize,
        j: usize,
        memo: &mut Vec<Vec<Option<usize>>>,
    ) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

fn oracle_rouge(cand: &[String], refr: &[String]) -> f64 {
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let lcs = lcs_recursive(cand, refr) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / cand.len() as f64;
    let r = lcs / refr.len() as f64;
    2.0 * p * r / (p + r)
}

#[test]
fn criterion_5_metric_oracles() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(501);
    let alphabet = ["法", "院", "认", "定", "赔", "偿", "责", "任", "a", "b"];
    for case in 0..1000 {
        let len_a = rng.gen_range(0..=20);
        let len_b = rng.gen_range(0..=20);
        let a: Vec<String> = (0..len_a)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
            .collect();
        let b: Vec<String> = (0..len_b)
            .map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string())
            .collect();
        let got = evaluation::rouge_l_tokens(&a, &b);
        let want = oracle_rouge(&a, &b);
        assert_eq!(got, want, "criterion 5: rouge mismatch on case {case}: {a:?} vs {b:?}");
    }

    assert_eq!(
        evaluation::normalized_log_distance(Some(36.0), 36.0, 600.0),
        1.0,
        "criterion 5: equality must score exactly 1"
    );
    let spot = evaluation::normalized_log_distance(Some(12.0), 36.0, 600.0);
    assert!(
        (spot - 0.8365).abs() <= 0.0005,
        "criterion 5: (12, 36, 600) gave {spot}, want 0.8365 ± 0.0005"
    );

    let reasoning_answer = "虽然张某某已经支付了15000元的医疗费用，但总犯罪金额仍为25000元，\
                            因为犯罪金额的计算是基于受害人实际遭受的损失。<DTK>[金额]25000元<eoa>";
    assert_eq!(
        evaluation::extract_amount(reasoning_answer),
        Some(25000.0),
        "criterion 5: enveloped amount extraction"
    );
    println!(
        "ACCEPTANCE 5 PASS: rouge matches the recursive-LCS oracle on 1000 pairs exactly; \
         log-distance spot values hold; amount extraction returns 25000"
    );
}

#[test]
fn criterion_6_aggregation_reproduces_published_rows() {
    fn score(task: u8, value: f64) -> TaskScore {
        TaskScore {
            task_id: TaskId::new(task).unwrap(),
            score: value,
            n_items: 100,
            n_unparsed: 0,
        }
    }
    fn average(t1: f64, t2: f64, t3: f64, t4: f64) -> f64 {
        evaluation::aggregate([score(1, t1), score(2, t2), score(3, t3), score(4, t4)])
            .unwrap()
            .average
    }

    // base-versus-tuned table rows plus the tuned rows repeated in the
    // model-comparison table
    let rows = [
        (27.9, 81.2, 80.1, 45.0, 58.6, "base 0.5B"),
        (33.1, 86.8, 86.6, 62.0, 67.1, "tuned 0.5B"),
        (29.9, 82.4, 82.3, 49.0, 60.9, "base 1.5B"),
        (35.7, 87.4, 87.3, 68.0, 69.6, "tuned 1.5B"),
        (28.7, 81.7, 79.9, 56.0, 61.6, "base 3B"),
        (37.7, 88.2, 88.0, 73.2, 71.8, "tuned 3B"),
    ];
    for (t1, t2, t3, t4, published, label) in rows {
        let computed = average(t1, t2, t3, t4);
        assert!(
            (computed - published).abs() <= 0.05 + 1e-9,
            "criterion 6: {label}: computed {computed} vs published {published}"
        );
    }

    // The 0.5B delta row: the printed 9.5 does not follow from its own cells;
    // the cell-derived value is 8.5.
    let tuned = round1(average(33.1, 86.8, 86.6, 62.0));
    let base = round1(average(27.9, 81.2, 80.1, 45.0));
    let delta = round1(tuned - base);
    assert_eq!(delta, 8.5, "criterion 6: cell-derived 0.5B delta");
    assert_ne!(delta, 9.5, "criterion 6: printed delta is not reproducible");
    println!(
        "ACCEPTANCE 6 PASS: all six averages within ±0.05; 0.5B delta asserted as cell-derived \
         8.5 (printed 9.5 not derivable from the row)"
    );
}

#[test]
fn criterion_7_expansion_structure() {
    let dir = tempfile::tempdir().unwrap();
    let config = clean_config(dir.path(), CLEAN_SEED, 100, 16);
    let summary = run_generate(&config).unwrap();
    let (_, examples) = run_expand(&config).unwrap();

    assert_eq!(
        examples.len(),
        2 * summary.stats.accepted as usize,
        "criterion 7: |train| = 2 × |verified|"
    );
    let mut standard: BTreeMap<&str, &str> = BTreeMap::new();
    let mut reasoning: BTreeMap<&str, &str> = BTreeMap::new();
    for example in &examples {
        match example.variant {
            Variant::Standard => {
                assert!(
                    !example.response.contains("<DTK>"),
                    "criterion 7: tag leaked into a standard response"
                );
                standard.insert(&example.source_id, &example.response);
            }
            Variant::Reasoning => {
                assert_eq!(
                    example.response.matches("<DTK>").count(),
                    1,
                    "criterion 7: reasoning response must contain exactly one tag"
                );
                reasoning.insert(&example.source_id, &example.response);
            }
        }
    }
    assert_eq!(standard.len(), 100);
    assert_eq!(reasoning.len(), 100);
    for (source_id, response) in &reasoning {
        let (_, suffix) = response.split_once("<DTK>").unwrap();
        assert_eq!(
            &suffix,
            standard.get(source_id).unwrap(),
            "criterion 7: suffix after the tag differs from the standard response ({source_id})"
        );
    }
    println!(
        "ACCEPTANCE 7 PASS: 200 examples, one tag per reasoning response, suffixes equal the \
         standard responses byte-for-byte"
    );
}

#[test]
fn criterion_8_prompt_fidelity() {
    use kgdg::generation::{build_writer_prompt, DraftRecord, Provenance};
    use kgdg::prompts::PromptSet;
    use kgdg::refinement::draft_prompt_json;
    use kgdg::sampling::build_sampling_prompt;

    let spec = FixtureSpec::default();
    let corpus = kgdg::fixtures::build_corpus(&spec);
    let seeds = kgdg::fixtures::build_seeds(&spec);
    let templates = PromptSet::builtin();
    let seed = &seeds.for_task(TaskId::new(4).unwrap())[0];
    let document = &corpus.documents()[0];

    let draft = DraftRecord {
        question: "请计算下列文书涉及的总金额。文书：示例案情，损失100元与200元。".to_string(),
        answer: "[金额]300元<eoa>".to_string(),
        reasoning: "金额分别为100元、200元。这些费用总和为300元。".to_string(),
        references: [(
            "刑法第133条".to_string(),
            kgdg::gateway::canonical_statute_text("刑法第133条"),
        )]
        .into_iter()
        .collect(),
        instruction: seed.instruction.clone(),
        provenance: Provenance {
            document_id: document.id.clone(),
            seed_id: seed.id.clone(),
            task_id: seed.task_id,
            domain: document.domain,
            draw_ordinal: 0,
            attempt: 1,
        },
        raw_response: String::new(),
    };

    let rendered = [
        (
            "sampling_prompt.txt",
            build_sampling_prompt(seed, &templates.sampling).unwrap(),
        ),
        (
            "writer_prompt.txt",
            build_writer_prompt(seed, document, &templates.writer).unwrap(),
        ),
        (
            "ref_fixer_prompt.txt",
            templates
                .ref_fixer
                .render(&[(
                    "JSON",
                    serde_json::to_string(&draft.references).unwrap().as_str(),
                )])
                .unwrap(),
        ),
        (
            "reason_fixer_prompt.txt",
            templates
                .reason_fixer
                .render(&[("JSON", draft_prompt_json(&draft).as_str())])
                .unwrap(),
        ),
        (
            "verifier_prompt.txt",
            templates
                .verifier
                .render(&[("JSON", draft_prompt_json(&draft).as_str())])
                .unwrap(),
        ),
    ];

    let golden_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for (name, prompt) in &rendered {
        // template text must survive verbatim around the substitutions
        let template_name = name.trim_end_matches("_prompt.txt");
        let template = match template_name {
            "sampling" => &templates.sampling,
            "writer" => &templates.writer,
            "ref_fixer" => &templates.ref_fixer,
            "reason_fixer" => &templates.reason_fixer,
            _ => &templates.verifier,
        };
        let mut cursor = 0usize;
        for chunk in template
            .body
            .split(['{', '}'])
            .filter(|s| !s.is_empty() && *s != "JSON" && *s != "DOCS")
        {
            let found = prompt[cursor..]
                .find(chunk)
                .unwrap_or_else(|| panic!("criterion 8: {name} lost template text {chunk:?}"));
            cursor += found + chunk.len();
        }
        assert!(!prompt.contains("{JSON}") && !prompt.contains("{DOCS}"));

        let golden_path = golden_dir.join(name);
        let golden = std::fs::read_to_string(&golden_path)
            .unwrap_or_else(|e| panic!("criterion 8: missing golden file {name}: {e}"));
        assert_eq!(
            prompt.as_str(),
            golden.as_str(),
            "criterion 8: {name} diverges from its golden file"
        );
    }
    println!("ACCEPTANCE 8 PASS: all five rendered prompts match their golden files verbatim");
}
