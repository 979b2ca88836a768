//! Deterministic synthetic fixtures: a small two-domain document corpus, a
//! statute index, and ten seed problems per task. Used by the test suite and
//! benchmarks, and handy for offline smoke runs against the mock backend.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, Domain, KnowledgeDocument, StatuteIndex};
use crate::gateway::canonical_statute_text;
use crate::jsonl;
use crate::sampling::{SeedProblem, SeedSet, TaskId};

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub criminal_docs: usize,
    pub civil_docs: usize,
    pub seeds_per_task: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            criminal_docs: 120,
            civil_docs: 120,
            seeds_per_task: 10,
            seed: 917,
        }
    }
}

const CRIMINAL_LAWS: [&str; 12] = [
    "刑法第128条",
    "刑法第133条",
    "刑法第141条",
    "刑法第170条",
    "刑法第196条",
    "刑法第224条",
    "刑法第232条",
    "刑法第234条",
    "刑法第264条",
    "刑法第266条",
    "刑法第293条",
    "刑法第347条",
];

const CIVIL_LAWS: [&str; 10] = [
    "民法典第577条",
    "民法典第584条",
    "民法典第657条",
    "民法典第667条",
    "民法典第679条",
    "民法典第995条",
    "民法典第1165条",
    "民法典第1179条",
    "民法典第1184条",
    "民法典第1198条",
];

const SURNAMES: [&str; 10] = ["张", "李", "王", "赵", "刘", "陈", "杨", "黄", "周", "吴"];
const CITIES: [&str; 8] = ["临江", "桂阳", "宁州", "海川", "东平", "西陵", "南湖", "北原"];

const CRIMINAL_ACTS: [(&str, &str); 6] = [
    ("酒后驾驶机动车发生交通事故", "交通肇事"),
    ("入户盗窃他人财物", "盗窃"),
    ("持械故意伤害他人身体", "故意伤害"),
    ("虚构事实骗取他人钱款", "诈骗"),
    ("未经许可经营专营物品", "非法经营"),
    ("在公共场所起哄闹事", "寻衅滋事"),
];

const CIVIL_CONTRACTS: [&str; 6] = ["房屋租赁", "货物买卖", "民间借贷", "装饰装修", "货物运输", "劳务服务"];

const FEE_KINDS: [&str; 5] = ["医疗费", "误工费", "护理费", "交通费", "营养费"];

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

fn amount(rng: &mut ChaCha8Rng) -> u64 {
    (rng.gen_range(5..500u64)) * 100
}

fn criminal_document(rng: &mut ChaCha8Rng, index: usize) -> KnowledgeDocument {
    let name = pick(rng, &SURNAMES);
    let victim = pick(rng, &SURNAMES);
    let city = pick(rng, &CITIES);
    let (act, crime) = *pick(rng, &CRIMINAL_ACTS);
    let year = 2015 + rng.gen_range(0..9);
    let month = 1 + rng.gen_range(0..12u32);
    let n_fees = 2 + rng.gen_range(0..3usize);
    let fees: Vec<String> = (0..n_fees)
        .map(|k| format!("{}为{}元", FEE_KINDS[k], amount(rng)))
        .collect();
    let n_laws = 1 + rng.gen_range(0..2usize);
    let mut laws: Vec<String> = Vec::new();
    while laws.len() < n_laws {
        let law = pick(rng, &CRIMINAL_LAWS).to_string();
        if !laws.contains(&law) {
            laws.push(law);
        }
    }
    let term_years = 1 + rng.gen_range(0..9u64);
    let fine = amount(rng);
    KnowledgeDocument {
        id: format!("crim-{index:04}"),
        domain: Domain::Criminal,
        facts: format!(
            "经审理查明，{year}年{month}月，被告人{name}某在{city}市{act}，致被害人{victim}某受到损害。经鉴定，{}。{name}某到案后如实供述了自己的罪行。",
            fees.join("，")
        ),
        reasons: format!(
            "本院认为，被告人{name}某的行为已构成{crime}罪，依照{}之规定，应当追究刑事责任。",
            laws.join("、")
        ),
        results: format!(
            "判处被告人{name}某有期徒刑{term_years}年，并处罚金人民币{fine}元。"
        ),
        relevant_laws: laws,
    }
}

fn civil_document(rng: &mut ChaCha8Rng, index: usize) -> KnowledgeDocument {
    let plaintiff = pick(rng, &SURNAMES);
    let defendant = pick(rng, &SURNAMES);
    let city = pick(rng, &CITIES);
    let contract = pick(rng, &CIVIL_CONTRACTS);
    let year = 2016 + rng.gen_range(0..8);
    let month = 1 + rng.gen_range(0..12u32);
    let principal = amount(rng);
    let loss = amount(rng);
    let penalty = amount(rng) / 2;
    let n_laws = 1 + rng.gen_range(0..2usize);
    let mut laws: Vec<String> = Vec::new();
    while laws.len() < n_laws {
        let law = pick(rng, &CIVIL_LAWS).to_string();
        if !laws.contains(&law) {
            laws.push(law);
        }
    }
    KnowledgeDocument {
        id: format!("civ-{index:04}"),
        domain: Domain::Civil,
        facts: format!(
            "经审理查明，{year}年{month}月，原告{plaintiff}某与被告{defendant}某在{city}市签订{contract}合同，约定金额为{principal}元。被告未按约定履行义务，给原告造成损失{loss}元，另有违约金{penalty}元。"
        ),
        reasons: format!(
            "本院认为，被告{defendant}某未履行合同义务构成违约，依照{}之规定，应当承担违约责任。",
            laws.join("、")
        ),
        results: format!(
            "判决被告{defendant}某赔偿原告{plaintiff}某各项损失共计{}元。",
            loss + penalty
        ),
        relevant_laws: laws,
    }
}

/// Build the in-memory fixture corpus.
pub fn build_corpus(spec: &FixtureSpec) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut docs = Vec::with_capacity(spec.criminal_docs + spec.civil_docs);
    for i in 0..spec.criminal_docs {
        docs.push(criminal_document(&mut rng, i));
    }
    for i in 0..spec.civil_docs {
        docs.push(civil_document(&mut rng, i));
    }
    Corpus::from_documents(docs).expect("fixture corpus is well-formed")
}

/// Statute index covering every citation key the fixture pools use, with
/// the canonical content the mock backend treats as ground truth.
pub fn build_statutes() -> StatuteIndex {
    StatuteIndex::from_entries(
        CRIMINAL_LAWS
            .iter()
            .chain(CIVIL_LAWS.iter())
            .map(|key| ((*key).to_string(), canonical_statute_text(key))),
    )
}

fn seed_problem(task: TaskId, index: usize, rng: &mut ChaCha8Rng) -> SeedProblem {
    let a1 = amount(rng);
    let a2 = amount(rng);
    let name = pick(rng, &SURNAMES);
    let law = pick(rng, &CRIMINAL_LAWS);
    let (instruction, question, answer) = match task.get() {
        1 => (
            "请你根据案情描述，预测本案应当适用的法律条文，直接给出法条的具体内容。".to_string(),
            format!("文书：{name}某与他人发生纠纷，示例案情编号{index}。"),
            format!("本案应当适用{law}：{}", canonical_statute_text(law)),
        ),
        2 => (
            "请你根据案情描述预测被告人的刑期。不需要给出分析过程，直接给出刑期结论。".to_string(),
            format!("文书：被告人{name}某因示例案由{index}被提起公诉。"),
            "有期徒刑三年六个月".to_string(),
        ),
        3 => (
            "请你结合下面给出的法条内容预测被告人的刑期。不需要给出分析过程，直接给出刑期结论。".to_string(),
            format!(
                "文书：被告人{name}某因示例案由{index}被提起公诉。可参考的法条：{}",
                canonical_statute_text(law)
            ),
            format!("有期徒刑{}年{}个月", 1 + index % 5, 1 + index % 11),
        ),
        _ => (
            "请你仔细计算文书中涉及的犯罪总金额。无需给出计算过程，只需要给出最终金额，将答案写在[金额]与<eoa>之间，例如[金额]2000元<eoa>。".to_string(),
            format!("文书：经审理查明，示例案件{index}中损失{a1}元，另有费用{a2}元。"),
            format!("[金额]{}元<eoa>", a1 + a2),
        ),
    };
    SeedProblem {
        id: format!("s{}-{index}", task.get()),
        task_id: task,
        instruction,
        question,
        answer,
    }
}

/// Ten (by default) hand-shaped exemplars per task. Demonstration only.
pub fn build_seeds(spec: &FixtureSpec) -> SeedSet {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    let mut seeds = Vec::new();
    for task in TaskId::ALL {
        for index in 0..spec.seeds_per_task {
            seeds.push(seed_problem(task, index, &mut rng));
        }
    }
    SeedSet::from_seeds(seeds)
}

#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub corpus: PathBuf,
    pub statutes: PathBuf,
    pub seeds: PathBuf,
}

/// Write `corpus.jsonl`, `statutes.jsonl` and `seeds.jsonl` under a
/// directory.
pub fn write_fixture_tree(dir: &Path, spec: &FixtureSpec) -> std::io::Result<FixturePaths> {
    std::fs::create_dir_all(dir)?;
    let corpus = build_corpus(spec);
    let paths = FixturePaths {
        corpus: dir.join("corpus.jsonl"),
        statutes: dir.join("statutes.jsonl"),
        seeds: dir.join("seeds.jsonl"),
    };
    jsonl::write_all(&paths.corpus, corpus.documents())?;

    #[derive(serde::Serialize)]
    struct StatuteLine<'a> {
        citation: &'a str,
        content: String,
    }
    let statutes: Vec<StatuteLine> = CRIMINAL_LAWS
        .iter()
        .chain(CIVIL_LAWS.iter())
        .map(|key| StatuteLine {
            citation: key,
            content: canonical_statute_text(key),
        })
        .collect();
    jsonl::write_all(&paths.statutes, &statutes)?;

    let seed_set = build_seeds(spec);
    let all_seeds: Vec<SeedProblem> = TaskId::ALL
        .iter()
        .flat_map(|t| seed_set.for_task(*t).to_vec())
        .collect();
    jsonl::write_all(&paths.seeds, &all_seeds)?;
    Ok(paths)
}
