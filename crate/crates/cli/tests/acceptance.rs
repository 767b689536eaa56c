//! End-to-end acceptance checks. Each test prints one `PASS` or `FAIL`
//! line to stderr (uncaptured) before asserting.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use common::metric_oracle::{self, hand_corpus};
use common::{enumerate_sequences, random_cond, random_model, tiny_config};
use ivqa_core::evaluation::*;
use ivqa_core::microworld::{generate_dataset, SceneIndex, WorldConfig, WorldData};
use ivqa_core::model::{Model, ModelConfig, Variant};
use ivqa_core::textdata::{build_vocabulary, tokenize};
use ivqa_core::training::{gradient_check, prepare, train, Example, TrainConfig};
use sha2::{Digest, Sha256};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {id:>2} {tag}  {name}: {detail}");
}

// 1

#[test]
fn c01_gradient_fidelity() {
    let started = Instant::now();
    let config = tiny_config(Variant::Full, 2, 8, 16, 20, 8);
    let model = random_model::<f64>(&config, 11, 0.5);
    let examples: Vec<Example<f64>> = (0..2u64)
        .map(|k| Example {
            cond: random_cond(&config, 100 + k),
            question: (0..3 + k as usize).map(|i| 4 + (i * 5 + k as usize) % 16).collect(),
        })
        .collect();
    let batch: Vec<&Example<f64>> = examples.iter().collect();
    let report = gradient_check(&model, &batch, 1e-5).unwrap();
    let elapsed = started.elapsed();
    let names = report.params.len();
    let pass = report.max_rel_error < 1e-4 && elapsed < Duration::from_secs(60) && names == model.params.len();
    verdict(
        1,
        "gradient fidelity",
        pass,
        &format!("max rel error {:.3e} over {names} parameters in {:.1}s", report.max_rel_error, elapsed.as_secs_f64()),
    );
    assert!(pass);
}

// 2

#[test]
fn c02_attention_normalization() {
    let mut worst = 0.0f64;
    let mut negative = 0usize;
    let mut maps = 0usize;
    for seed in 0..1000u64 {
        let g = 2 + (seed % 3) as usize;
        let config = tiny_config(Variant::Full, g, 4 + (seed % 5) as usize, 8, 12, 8);
        let model = random_model::<f64>(&config, seed, 3.0);
        let cond = random_cond::<f64>(&config, seed ^ 0xa11);
        let question: Vec<usize> = (0..1 + (seed % 4) as usize).map(|i| 4 + (seed as usize + i) % 8).collect();
        let trace = model.trace(&question, &cond).unwrap();
        for alpha in &trace.alphas {
            assert_eq!(alpha.len(), g * g);
            negative += alpha.iter().filter(|&&x| x < 0.0).count();
            worst = worst.max((alpha.iter().sum::<f64>() - 1.0).abs());
            maps += 1;
        }
    }
    let pass = worst < 1e-6 && negative == 0;
    verdict(
        2,
        "attention normalization",
        pass,
        &format!("{maps} maps, max |sum - 1| {worst:.2e}, {negative} negative entries"),
    );
    assert!(pass);
}

// 3

#[test]
fn c03_beam_exactness() {
    // Vocabulary of 7: four reserved ids of which only eos is emittable, plus
    // three words, so four emittable symbols.
    let config = tiny_config(Variant::Full, 2, 4, 8, 7, 8);
    let mut agree = 0;
    for seed in 0..100u64 {
        let model = random_model::<f64>(&config, 1000 + seed, 1.5);
        let cond = random_cond::<f64>(&config, 2000 + seed);
        let all = enumerate_sequences(&model, &cond, 3);
        let best = all.iter().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        let beam = model.beam_search(&cond, 64, 3).unwrap();
        if beam[0].tokens == best.0 && beam[0].finished == best.2 && (beam[0].log_prob - best.1).abs() < 1e-10 {
            agree += 1;
        }
    }
    let pass = agree == 100;
    verdict(3, "beam exactness", pass, &format!("{agree}/100 random models"));
    assert!(pass);
}

// 4

type Corpus = (Vec<Vec<String>>, Vec<Vec<Vec<String>>>);

fn split(pairs: &[(&str, Vec<&str>)]) -> Corpus {
    let cands = pairs.iter().map(|(c, _)| tokenize(c)).collect();
    let refs = pairs.iter().map(|(_, r)| r.iter().map(|x| tokenize(x)).collect()).collect();
    (cands, refs)
}

#[test]
fn c04_metric_oracles() {
    let pairs = hand_corpus();
    assert_eq!(pairs.len(), 10);
    let (c, r) = split(&pairs);
    let mut worst = 0.0f64;
    for n in 1..=4 {
        worst = worst.max((bleu(&c, &r, n).unwrap() - metric_oracle::bleu(&pairs, n)).abs());
    }
    worst = worst.max((rouge_l(&c, &r).unwrap() - metric_oracle::rouge_l(&pairs, 1.2)).abs());
    worst = worst.max((cider(&c, &r).unwrap() - metric_oracle::cider(&pairs)).abs());

    // Counted by hand: clipped unigram precision 1/4, no brevity penalty.
    let hand_bleu = bleu(&[tokenize("the the the the")], &[vec![tokenize("the cat")]], 1).unwrap();
    worst = worst.max((hand_bleu - 0.25).abs());
    // LCS 3 of 3 candidate and 4 reference tokens, beta 1.2.
    let hand_rouge = rouge_l(&[tokenize("a c d")], &[vec![tokenize("a b c d")]]).unwrap();
    worst = worst.max((hand_rouge - 2.44 * 0.75 / (0.75 + 1.44)).abs());

    let refs: Vec<Vec<Vec<String>>> = c.iter().map(|s| vec![s.clone()]).collect();
    let identity = (bleu_1_to_4(&c, &refs).unwrap(), rouge_l(&c, &refs).unwrap(), cider(&c, &refs).unwrap());
    let identity_ok = identity.0.iter().all(|&b| (b - 1.0).abs() < 1e-6)
        && (identity.1 - 1.0).abs() < 1e-6
        && (identity.2 - 10.0).abs() < 1e-6;
    let pass = worst < 1e-6 && identity_ok;
    verdict(
        4,
        "metric oracles",
        pass,
        &format!(
            "max deviation {worst:.2e}; identity BLEU {:?} ROUGE-L {} CIDEr {:.9}",
            identity.0, identity.1, identity.2
        ),
    );
    assert!(pass);
}

// Shared micro-world: 1000 scenes give 3000 train and 500 test triples.

const WORLD_SEED: u64 = 1;
const POOL_SEED: u64 = 7;
const MODEL_SEED: u64 = 1;

struct World {
    data: WorldData,
    scenes: SceneIndex,
    pools: Vec<QuestionPool>,
}

fn world() -> &'static World {
    static WORLD: OnceLock<World> = OnceLock::new();
    WORLD.get_or_init(|| {
        let data = generate_dataset(1000, [0.75, 0.125, 0.125], WORLD_SEED, &WorldConfig::default()).unwrap();
        let scenes = data.scene_index();
        let pools = PoolBuilder::new(&data.test.triples, &data.train.triples, &scenes, POOL_SEED)
            .build_all()
            .unwrap();
        World { data, scenes, pools }
    })
}

struct Trained {
    reports: Vec<(Variant, RankReport)>,
    prior: RankReport,
    /// Training plus scoring of the variants in the ordering check.
    ordering_time: Duration,
}

impl Trained {
    fn get(&self, v: Variant) -> &RankReport {
        &self.reports.iter().find(|(x, _)| *x == v).expect("variant trained").1
    }
}

/// Every variant the ordering, gameability and breakdown checks need, at
/// the default schedule.
fn trained() -> &'static Trained {
    static TRAINED: OnceLock<Trained> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let w = world();
        let train_set = &w.data.train.triples;
        let vocab = build_vocabulary(train_set, 1);
        let examples = prepare::<f32>(train_set, &vocab).unwrap();
        let shape = train_set[0].features.grid_shape;
        let global = train_set[0].features.global.len();
        let mut reports = Vec::new();
        let mut ordering_time = Duration::ZERO;
        for variant in [
            Variant::Full,
            Variant::ImageAnswerType,
            Variant::ImageOnly,
            Variant::AnswerOnly,
            Variant::NoAttention,
        ] {
            let started = Instant::now();
            let config = ModelConfig::new(32, vocab.len(), shape, global, variant);
            let mut model = Model::<f32>::new(config, vocab.clone(), MODEL_SEED).unwrap();
            train(&mut model, &examples, &TrainConfig::default(), None).unwrap();
            let report = score_pools(&w.pools, &ModelScorer { model: &model, normalize: false }).unwrap();
            if variant != Variant::NoAttention {
                ordering_time += started.elapsed();
            }
            reports.push((variant, report));
        }
        let prior = score_pools(&w.pools, &PriorScorer::new(train_set)).unwrap();
        Trained { reports, prior, ordering_time }
    })
}

// 5

#[test]
fn c05_pool_validity() {
    let w = world();
    let mut bad = 0;
    let mut oracle_correct = 0;
    for pool in &w.pools {
        if pool.candidates.len() != POOL_SIZE || pool.check_composition().is_err() {
            bad += 1;
        }
        oracle_correct += pool
            .candidates
            .iter()
            .filter(|c| c.label != Label::GT && w.scenes.is_correct(&pool.image_id, &c.question, &pool.answer))
            .count();
    }
    let n = w.pools.len();
    let pass = n >= 200 && bad == 0 && oracle_correct == 0;
    verdict(
        5,
        "pool validity",
        pass,
        &format!("{n} pairs, {bad} pools break composition, {oracle_correct} oracle-correct distractors"),
    );
    assert!(pass);
}

// 6

#[test]
fn c06_oracle_ranking() {
    let w = world();
    let r = score_pools(&w.pools, &OracleScorer { scenes: &w.scenes }).unwrap();
    let pass = r.acc1 >= 95.0;
    verdict(6, "ranking sanity", pass, &format!("oracle acc@1 {:.2}% over {} pairs", r.acc1, r.n_pairs));
    assert!(pass);
}

// 7

#[test]
fn c07_variant_ordering() {
    let w = world();
    assert_eq!(w.data.train.triples.len(), 3000);
    assert_eq!(w.data.test.triples.len(), 500);
    let t = trained();
    let acc = |v| t.get(v).acc1;
    let (full, iat, i, a) = (
        acc(Variant::Full),
        acc(Variant::ImageAnswerType),
        acc(Variant::ImageOnly),
        acc(Variant::AnswerOnly),
    );
    let margin = full - a;
    let ordered = full > iat && iat > i && full > a;
    let fast = t.ordering_time < Duration::from_secs(15 * 60);
    let pass = ordered && margin >= 10.0 && fast;
    verdict(
        7,
        "variant ordering",
        pass,
        &format!(
            "acc@1 full {full:.2} iat {iat:.2} i {i:.2} a {a:.2}; ordered {ordered}, full - a {margin:.2} (need 10), {:.0}s",
            t.ordering_time.as_secs_f64()
        ),
    );
    assert!(pass);
}

// 8

#[test]
fn c08_bias_gameability() {
    let t = trained();
    let (prior, a, ia) = (t.prior.acc1, t.get(Variant::AnswerOnly).acc1, t.get(Variant::NoAttention).acc1);
    let pass = prior < a && a < ia;
    verdict(
        8,
        "bias gameability",
        pass,
        &format!("acc@1 prior {prior:.2} < language-only {a:.2} < language+visual {ia:.2}"),
    );
    assert!(pass);
}

// 9

#[test]
fn c09_error_breakdown() {
    let t = trained();
    let mut worst = (t.prior.breakdown.total() - 1.0).abs();
    for (_, r) in &t.reports {
        worst = worst.max((r.breakdown.total() - 1.0).abs());
    }
    let i_dom = t.get(Variant::ImageOnly).dominant_error();
    let a_dom = t.get(Variant::AnswerOnly).dominant_error();
    let pass = worst < 1e-9 && i_dom == Some(Label::CT) && a_dom == Some(Label::PP);
    verdict(
        9,
        "error breakdown",
        pass,
        &format!("max |sum - 1| {worst:.1e}; dominant error i {i_dom:?}, a {a_dom:?}"),
    );
    assert!(pass);
}

// 10

fn run_cli(dir: &Path, args: &[&str], stdin: Option<&str>) -> Vec<u8> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_ivqa"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "error")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.unwrap_or("").as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success(), "ivqa {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out.stdout
}

fn is_manifest(path: &Path) -> bool {
    path.file_name()
        .and_then(|n| n.to_str())
        .is_some_and(|n| n == "manifest.json" || n.ends_with(".manifest.json"))
}

fn files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// Every output listed in a manifest carries the hash of the file on disk.
fn manifest_hashes_hold(root: &Path, tree: &BTreeMap<PathBuf, Vec<u8>>) -> bool {
    tree.iter().filter(|(p, _)| is_manifest(p)).all(|(_, bytes)| {
        let m: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        m["outputs"].as_array().unwrap().iter().all(|o| {
            let body = std::fs::read(root.join(o["path"].as_str().unwrap())).unwrap();
            hex::encode(Sha256::digest(&body)) == o["sha256"].as_str().unwrap()
        })
    })
}

const SESSION: &[(&str, &[&str], Option<&str>)] = &[
    ("gen-data", &["gen-data", "--scenes", "200", "--seed", "3", "--out", "data"], None),
    ("train", &["train", "--in", "data/train.jsonl", "--epochs", "2", "--hidden", "8", "--seed", "2", "--out", "m"], None),
    ("generate", &["generate", "--ckpt", "m/model.bin", "--in", "data/test.jsonl", "--out", "gen.jsonl"], None),
    (
        "generate-sample",
        &["generate", "--ckpt", "m/model.bin", "--in", "data/test.jsonl", "--temperature", "0.8", "--seed", "4", "--out", "sample.jsonl"],
        None,
    ),
    (
        "rank",
        &["rank", "--ckpt", "m/model.bin", "--test", "data/test.jsonl", "--dump-pools", "pools.jsonl", "--out", "rank.json"],
        None,
    ),
    ("rank-prior", &["rank", "--scorer", "prior", "--test", "data/test.jsonl", "--out", "prior.json"], None),
    ("rank-oracle", &["rank", "--scorer", "oracle", "--test", "data/test.jsonl"], None),
    ("metrics", &["metrics", "--ckpt", "m/model.bin", "--test", "data/test.jsonl", "--out", "metrics.json"], None),
    (
        "breakdown",
        &["breakdown", "--ckpt", "m/model.bin", "--ckpt", "m/ckpt_epoch0.bin", "--test", "data/test.jsonl", "--out", "breakdown.json"],
        None,
    ),
    (
        "bias-audit",
        &["bias-audit", "--test", "data/test.jsonl", "--epochs", "1", "--hidden", "8", "--out", "audit"],
        None,
    ),
    ("gradcheck", &["gradcheck", "--out", "grad.json"], None),
    ("rate", &["rate", "--in", "gen.jsonl", "--rater", "r1"], Some("3\n7\n4\n0\nq\n")),
];

#[test]
fn c10_cli_determinism() {
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for run in &runs {
        for (name, args, stdin) in SESSION {
            let stdout = run_cli(run.path(), args, *stdin);
            std::fs::write(run.path().join(format!("stdout-{name}.txt")), stdout).unwrap();
        }
    }
    let a = files(runs[0].path());
    let b = files(runs[1].path());
    let compared: Vec<&PathBuf> = a.keys().filter(|p| !is_manifest(p)).collect();
    let differing: Vec<String> = compared
        .iter()
        .filter(|p| b.get(**p) != a.get(**p))
        .map(|p| p.display().to_string())
        .collect();
    let same_listing = a.keys().eq(b.keys());
    let hashes = manifest_hashes_hold(runs[0].path(), &a);
    let manifests = a.keys().filter(|p| is_manifest(p)).count();
    let pass = same_listing && differing.is_empty() && hashes && manifests >= 10;
    verdict(
        10,
        "determinism",
        pass,
        &format!(
            "{} subcommand runs, {} artifacts compared, differing {differing:?}, {manifests} manifests with valid hashes: {hashes}",
            SESSION.len(),
            compared.len()
        ),
    );
    assert!(pass);
}

// 11

#[test]
fn c11_correlation_machinery() {
    let x = [0.5, 1.0, 2.5, 3.0, 4.0];
    let up: Vec<f64> = x.iter().map(|v| 3.0 * v - 2.0).collect();
    let down: Vec<f64> = x.iter().map(|v| 7.0 - 0.5 * v).collect();
    let r_up = pearson(&x, &up).unwrap();
    let r_down = pearson(&x, &down).unwrap();

    let lines = [
        r#"{"pair_id":"p1","model_id":"full","rating":4,"rater":"u"}"#,
        r#"{"pair_id":"p2","model_id":"full","rating":3,"rater":"u"}"#,
        r#"{"pair_id":"p3","model_id":"full","rating":2,"rater":"u"}"#,
        r#"{"pair_id":"p1","model_id":"a","rating":0,"rater":"u"}"#,
        r#"{"pair_id":"p2","model_id":"a","rating":1,"rater":"u"}"#,
        r#"{"pair_id":"p1","model_id":"a","rating":4,"rater":"v"}"#,
        r#"{"pair_id":"p3","model_id":"a","rating":4,"rater":"v"}"#,
    ];
    let ratings = parse_ratings(&lines.join("\n")).unwrap();
    let agg = aggregate_ratings(&ratings);
    // (4+3+2)/3 and (0+1+4+4)/4, both exact in binary.
    let means_ok = agg["full"].mean == 3.0 && agg["full"].count == 3 && agg["a"].mean == 2.25 && agg["a"].count == 4;
    let pass = (r_up - 1.0).abs() < 1e-12 && (r_down + 1.0).abs() < 1e-12 && means_ok;
    verdict(
        11,
        "correlation machinery",
        pass,
        &format!(
            "r(+) {r_up:.15} r(-) {r_down:.15}; means full {} a {}",
            agg["full"].mean, agg["a"].mean
        ),
    );
    assert!(pass);
}
