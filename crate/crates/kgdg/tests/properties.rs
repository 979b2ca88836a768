//! Property tests for the metric and expansion invariants.

use std::collections::BTreeMap;

use proptest::prelude::*;

use kgdg::corpus::Domain;
use kgdg::evaluation::{self, lcs_len, normalized_log_distance, rouge_l_tokens};
use kgdg::exec::Executor;
use kgdg::expansion::{expand_dataset, render_reasoning, render_standard, ExpansionConfig};
use kgdg::generation::{extract_record, ExtractedRecord, Provenance};
use kgdg::orchestrator::question_fingerprint;
use kgdg::refinement::{FixReport, VerifiedRecord};
use kgdg::sampling::TaskId;

fn token_seq() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::sample::select(vec![
            "法".to_string(),
            "院".to_string(),
            "判".to_string(),
            "决".to_string(),
            "赔".to_string(),
            "偿".to_string(),
            "x1".to_string(),
            "y2".to_string(),
        ]),
        0..20,
    )
}

fn cjk_text() -> impl Strategy<Value = String> {
    "[一-龥a-z0-9，。 ]{0,40}"
}

proptest! {
    #[test]
    fn lcs_is_symmetric_and_bounded(a in token_seq(), b in token_seq()) {
        let forward = lcs_len(&a, &b);
        let backward = lcs_len(&b, &a);
        prop_assert_eq!(forward, backward);
        prop_assert!(forward <= a.len().min(b.len()));
    }

    #[test]
    fn rouge_stays_in_unit_interval(a in token_seq(), b in token_seq()) {
        let f = rouge_l_tokens(&a, &b);
        prop_assert!((0.0..=1.0).contains(&f));
        if !a.is_empty() {
            prop_assert_eq!(rouge_l_tokens(&a, &a), 1.0);
        }
    }

    #[test]
    fn log_distance_stays_in_unit_interval(
        pred in prop::option::of(0.0f64..2000.0),
        gold in 0.0f64..600.0,
    ) {
        let score = normalized_log_distance(pred, gold, 600.0);
        prop_assert!((0.0..=1.0).contains(&score));
        if pred == Some(gold) {
            prop_assert_eq!(score, 1.0);
        }
    }

    #[test]
    fn extraction_round_trips_its_own_output(
        question in cjk_text(),
        answer in cjk_text(),
        reasoning in cjk_text(),
    ) {
        prop_assume!(!question.is_empty() && !answer.is_empty() && !reasoning.is_empty());
        let record = ExtractedRecord {
            question,
            answer,
            reasoning,
            references: BTreeMap::from([("刑法第1条".to_string(), "内容。".to_string())]),
        };
        let serialized = serde_json::to_string(&record).unwrap();
        let wrapped = format!("前缀说明 {serialized} 后缀");
        let extracted = extract_record(&wrapped).unwrap();
        prop_assert_eq!(extracted, record);
    }

    #[test]
    fn fingerprints_ignore_whitespace_runs(
        left in "[一-龥]{1,12}",
        right in "[一-龥]{1,12}",
        spaces in 1usize..5,
    ) {
        let single = format!("{left} {right}");
        let multi = format!("{left}{}{right}", " ".repeat(spaces));
        prop_assert_eq!(question_fingerprint(&single), question_fingerprint(&multi));
        prop_assert_ne!(
            question_fingerprint(&single),
            question_fingerprint(&format!("{left}{right}"))
        );
    }

    #[test]
    fn expansion_pairs_are_consistent(
        questions in prop::collection::vec("[一-龥]{4,20}", 1..20),
        answers in prop::collection::vec("[一-龥0-9]{1,12}", 1..20),
    ) {
        let records: Vec<VerifiedRecord> = questions
            .iter()
            .zip(answers.iter().cycle())
            .enumerate()
            .map(|(i, (q, a))| VerifiedRecord {
                record_id: format!("gen-{i:06}"),
                question: q.clone(),
                answer: a.clone(),
                reasoning: format!("推理过程{i}。"),
                references: BTreeMap::new(),
                instruction: "指令".to_string(),
                provenance: Provenance {
                    document_id: format!("doc-{i}"),
                    seed_id: "s1-0".to_string(),
                    task_id: TaskId::new(1).unwrap(),
                    domain: Domain::Criminal,
                    draw_ordinal: i as u64,
                    attempt: 1,
                },
                fix_report: FixReport::default(),
            })
            .collect();
        let config = ExpansionConfig::default();
        let out = expand_dataset(&records, &config, &Executor::new(4)).unwrap();
        prop_assert_eq!(out.examples.len(), 2 * records.len());
        for record in &records {
            let standard = render_standard(record);
            let reasoning = render_reasoning(record, &config).unwrap();
            prop_assert_eq!(reasoning.response.matches("<DTK>").count(), 1);
            prop_assert_eq!(standard.response.matches("<DTK>").count(), 0);
            let (_, suffix) = reasoning.response.split_once("<DTK>").unwrap();
            prop_assert_eq!(suffix, standard.response.as_str());
        }
    }

    #[test]
    fn task_scores_stay_on_scale(golds in prop::collection::vec(0.0f64..500.0, 1..30)) {
        let items: Vec<evaluation::EvalItem> = golds
            .iter()
            .enumerate()
            .map(|(i, g)| evaluation::EvalItem {
                task_id: TaskId::new(2).unwrap(),
                prediction: if i % 3 == 0 {
                    "免予刑事处罚".to_string()
                } else {
                    format!("有期徒刑{}个月", (i % 40) + 1)
                },
                gold: evaluation::Gold::Number(*g),
            })
            .collect();
        let score = evaluation::score_task(&items, 600.0, &Executor::new(2)).unwrap();
        prop_assert!((0.0..=100.0).contains(&score.score));
        prop_assert!(score.n_unparsed <= score.n_items);
    }
}
