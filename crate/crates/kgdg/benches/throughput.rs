//! Parallel-versus-sequential throughput comparisons for the data-parallel
//! sections: batch dispatch through the mock backend, full pipeline batches,
//! evaluation scoring and dataset expansion.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use kgdg::evaluation::{self, EvalItem, Gold};
use kgdg::exec::{map_sequential, Executor};
use kgdg::expansion::{expand_dataset, ExpansionConfig};
use kgdg::fixtures::{self, FixtureSpec};
use kgdg::gateway::{ChatRequest, Gateway, MockBackend, MockScript, Stage};
use kgdg::sampling::TaskId;
use std::sync::Arc;

fn eval_items(n: usize) -> Vec<EvalItem> {
    let clause = |k: usize| {
        format!(
            "行为人违反第{}项义务造成他人损害的，应当依法承担相应的赔偿责任并接受处罚；",
            k % 17
        )
    };
    (0..n)
        .map(|i| {
            let prediction: String = (0..6).map(|k| clause(i + k)).collect();
            let gold: String = (0..6).map(|k| clause(i + k + 1)).collect();
            EvalItem {
                task_id: TaskId::new(1).unwrap(),
                prediction: format!("本案应当适用刑法第{}条：{prediction}", 100 + i % 50),
                gold: Gold::Text(format!("刑法第{}条：{gold}", 100 + i % 40)),
            }
        })
        .collect()
}

fn bench_eval_scoring(c: &mut Criterion) {
    let items = eval_items(500);
    let mut group = c.benchmark_group("eval_scoring");
    for workers in [1usize, 8] {
        let executor = Executor::new(workers);
        group.bench_with_input(
            BenchmarkId::new("executor", workers),
            &executor,
            |b, executor| {
                b.iter(|| {
                    evaluation::score_task(black_box(&items), 600.0, executor).unwrap()
                })
            },
        );
    }
    group.bench_function("sequential_map", |b| {
        b.iter(|| {
            let scores = map_sequential(black_box(&items), |item| {
                evaluation::rouge_l(&item.prediction, match &item.gold {
                    Gold::Text(t) => t,
                    Gold::Number(_) => unreachable!(),
                })
            });
            black_box(scores)
        })
    });
    group.finish();
}

fn bench_batch_dispatch(c: &mut Criterion) {
    let spec = FixtureSpec::default();
    let corpus = fixtures::build_corpus(&spec);
    let seeds = fixtures::build_seeds(&spec);
    let templates = kgdg::prompts::PromptSet::builtin();
    let doc = &corpus.documents()[0];
    let requests: Vec<ChatRequest> = seeds
        .for_task(TaskId::new(4).unwrap())
        .iter()
        .cycle()
        .take(64)
        .map(|seed| {
            let prompt =
                kgdg::generation::build_writer_prompt(seed, doc, &templates.writer).unwrap();
            ChatRequest::new(Stage::Writer, prompt, 0.8)
        })
        .collect();

    let mut group = c.benchmark_group("mock_batch_dispatch");
    for max_in_flight in [1usize, 16] {
        group.bench_with_input(
            BenchmarkId::new("max_in_flight", max_in_flight),
            &max_in_flight,
            |b, &max_in_flight| {
                let gateway = Gateway::new(
                    Arc::new(MockBackend::new(MockScript::clean(7)).unwrap()),
                    max_in_flight,
                );
                b.iter(|| black_box(gateway.complete_batch(&requests)))
            },
        );
    }
    group.finish();
}

fn bench_expansion(c: &mut Criterion) {
    use kgdg::corpus::Domain;
    use kgdg::generation::Provenance;
    use kgdg::refinement::{FixReport, VerifiedRecord};
    use std::collections::BTreeMap;

    let records: Vec<VerifiedRecord> = (0..2000u64)
        .map(|i| VerifiedRecord {
            record_id: format!("gen-{i:06}"),
            question: format!("文书：第{i}号案情，损失若干。"),
            answer: format!("[金额]{}元<eoa>", 1000 + i),
            reasoning: format!("经查损失为{}元。合计认定。", 1000 + i),
            references: BTreeMap::new(),
            instruction: "请计算犯罪总金额。".to_string(),
            provenance: Provenance {
                document_id: format!("doc-{i}"),
                seed_id: "s4-0".to_string(),
                task_id: TaskId::new(4).unwrap(),
                domain: Domain::Criminal,
                draw_ordinal: i,
                attempt: 1,
            },
            fix_report: FixReport::default(),
        })
        .collect();
    let config = ExpansionConfig::default();

    let mut group = c.benchmark_group("expansion");
    for workers in [1usize, 8] {
        let executor = Executor::new(workers);
        group.bench_with_input(
            BenchmarkId::new("workers", workers),
            &executor,
            |b, executor| b.iter(|| black_box(expand_dataset(&records, &config, executor).unwrap())),
        );
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_eval_scoring,
    bench_batch_dispatch,
    bench_expansion
);
criterion_main!(benches);
