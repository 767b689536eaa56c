use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ivqa_core::evaluation::{
    bleu_1_to_4, cider, pair_seed, rouge_l, score_pools, EvalReport, Label, ModelScorer, OracleScorer, PoolBuilder,
    PriorScorer, QuestionPool, RankReport, Scorer,
};
use ivqa_core::microworld::{generate_dataset, write_dataset, SceneIndex, WorldConfig};
use ivqa_core::model::{Conditioning, Model, ModelConfig, Variant};
use ivqa_core::textdata::{build_vocabulary, join_tokens, load_dataset, QATriple, BOS, EOS};
use ivqa_core::training::{gradient_check, prepare, train as fit, Example, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::failure::{io_failure, Failure};
use crate::manifest::{manifest_for, Recorder};
use crate::{
    BiasAuditArgs, BreakdownArgs, GenDataArgs, GenerateArgs, GradcheckArgs, MetricsArgs, PoolFlags, RankArgs,
    ScorerKind, TrainArgs, TrainFlags,
};

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.with_file_name(name)
}

fn load_triples(path: &Path, rec: &mut Recorder) -> Result<Vec<QATriple>, Failure> {
    let triples = load_dataset(path)?;
    if triples.is_empty() {
        return Err(Failure::Data(format!("{}: no records", path.display())));
    }
    rec.inputs.push(path.to_path_buf());
    Ok(triples)
}

fn load_model(path: &Path, rec: &mut Recorder) -> Result<Model<f32>, Failure> {
    let model = Model::<f32>::load(path)?;
    rec.inputs.push(path.to_path_buf());
    Ok(model)
}

fn write_json<V: Serialize>(path: &Path, value: &V, rec: &mut Recorder) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| io_failure(path, e))?;
    rec.outputs.push(path.to_path_buf());
    Ok(())
}

fn write_lines<V: Serialize>(path: &Path, items: &[V], rec: &mut Recorder) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_failure(path, e))?);
    for item in items {
        let line = serde_json::to_string(item).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| io_failure(path, e))?;
    }
    w.flush().map_err(|e| io_failure(path, e))?;
    rec.outputs.push(path.to_path_buf());
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

/// Prints the report, or writes it and its manifest.
fn emit<V: Serialize>(out: Option<&Path>, value: &V, mut rec: Recorder) -> Result<(), Failure> {
    match out {
        Some(path) => {
            create_parent(path)?;
            write_json(path, value, &mut rec)?;
            rec.finish(&manifest_for(path, false))
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
            Ok(())
        }
    }
}

pub fn gen_data(args: GenDataArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("gen-data", &args);
    rec.seeds.push(args.seed);
    let fractions: [f64; 3] = args
        .split
        .as_slice()
        .try_into()
        .map_err(|_| Failure::Usage("--split takes three fractions".into()))?;
    let config = WorldConfig { grid: args.grid, sigma: args.sigma, qa_per_scene: args.qa_per_scene };
    let data = generate_dataset(args.scenes, fractions, args.seed, &config)?;
    rec.outputs = write_dataset(&data, &args.out)?;
    log::info!(
        "{} train / {} val / {} test triples",
        data.train.triples.len(),
        data.val.triples.len(),
        data.test.triples.len()
    );
    rec.finish(&manifest_for(&args.out, true))
}

fn train_config(flags: &TrainFlags) -> TrainConfig {
    TrainConfig {
        batch_size: flags.batch_size,
        epochs: flags.epochs,
        lr0: flags.lr0,
        decay: flags.decay,
        seed: flags.seed,
        ..TrainConfig::default()
    }
}

/// Fits one variant on `triples` and stores everything under `out`.
fn train_variant(
    triples: &[QATriple],
    variant: Variant,
    flags: &TrainFlags,
    out: &Path,
    rec: &mut Recorder,
) -> Result<(Model<f32>, PathBuf), Failure> {
    let vocab = build_vocabulary(triples, 1);
    let first = &triples[0].features;
    let mut config = ModelConfig::new(flags.hidden, vocab.len(), first.grid_shape, first.global.len(), variant);
    config.max_len = flags.max_len;
    for t in triples {
        if t.features.grid_shape != first.grid_shape || t.features.global.len() != first.global.len() {
            return Err(Failure::Data(format!("{}: feature shape differs from the first record", t.image_id)));
        }
        if t.question.len() + 2 > flags.max_len {
            return Err(Failure::Data(format!(
                "{}: question of {} tokens exceeds max_len {}",
                t.image_id,
                t.question.len(),
                flags.max_len
            )));
        }
    }
    let mut model = Model::<f32>::new(config, vocab, flags.seed)?;
    let examples = prepare::<f32>(triples, &model.vocab)?;
    let report = fit(&mut model, &examples, &train_config(flags), Some(out))?;
    for ckpt in &report.checkpoints {
        rec.outputs.push(ckpt.clone());
        rec.outputs.push(ckpt.with_extension("json"));
    }
    rec.outputs.push(out.join("loss.csv"));
    let final_path = out.join("model.bin");
    let steps = report.curve.len() as u64;
    let card = model.save(&final_path, flags.seed, steps)?;
    rec.outputs.push(final_path.clone());
    rec.outputs.push(card);
    if let Some(loss) = report.epoch_losses.last() {
        log::info!("{variant}: final epoch loss {loss:.4}");
    }
    Ok((model, final_path))
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("train", &args);
    rec.seeds.push(args.flags.seed);
    let triples = load_triples(&args.input, &mut rec)?;
    create_dir(&args.out)?;
    train_variant(&triples, args.variant, &args.flags, &args.out, &mut rec)?;
    rec.finish(&manifest_for(&args.out, true))
}

/// Distinct (image, answer) pairs in file order.
fn distinct_pairs(triples: &[QATriple]) -> Vec<(&QATriple, Vec<Vec<String>>)> {
    let mut index: BTreeMap<(&str, &[String]), usize> = BTreeMap::new();
    let mut out: Vec<(&QATriple, Vec<Vec<String>>)> = Vec::new();
    for t in triples {
        let key = (t.image_id.as_str(), t.answer.as_slice());
        let slot = *index.entry(key).or_insert_with(|| {
            out.push((t, Vec::new()));
            out.len() - 1
        });
        if !out[slot].1.contains(&t.question) {
            out[slot].1.push(t.question.clone());
        }
    }
    out
}

#[derive(Serialize)]
struct GeneratedQuestion {
    question: String,
    /// Absent for a sample cut off at the length cap.
    log_prob: Option<f64>,
    finished: bool,
}

#[derive(Serialize)]
struct GenerationRecord {
    pair_id: String,
    model_id: String,
    image_id: String,
    answer: String,
    answer_type: String,
    references: Vec<String>,
    hypotheses: Vec<GeneratedQuestion>,
    question: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    scene_ascii: Option<String>,
}

fn model_id(ckpt: &Path, model: &Model<f32>) -> String {
    let stem = ckpt.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let dir = ckpt.parent().and_then(|p| p.file_name()).and_then(|s| s.to_str());
    match dir {
        Some(d) => format!("{}:{d}/{stem}", model.config.variant),
        None => format!("{}:{stem}", model.config.variant),
    }
}

pub fn generate(args: GenerateArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("generate", &args);
    rec.seeds.push(args.seed);
    if args.beam == 0 || args.top_k == 0 || args.max_len == 0 {
        return Err(Failure::Usage("--beam, --top-k and --max-len must be positive".into()));
    }
    let model = load_model(&args.ckpt, &mut rec)?;
    let triples = load_triples(&args.input, &mut rec)?;
    let scenes_path = args.scenes.clone().unwrap_or_else(|| sibling(&args.input, "scenes.jsonl"));
    let scenes = if scenes_path.exists() {
        rec.inputs.push(scenes_path.clone());
        Some(SceneIndex::load(&scenes_path)?)
    } else if args.scenes.is_some() {
        return Err(Failure::Data(format!("{}: not found", scenes_path.display())));
    } else {
        None
    };
    let id = model_id(&args.ckpt, &model);
    let mut records = Vec::new();
    for (t, refs) in distinct_pairs(&triples) {
        let cond = Conditioning::<f32>::from_triple(t, &model.vocab)?;
        let hyps: Vec<GeneratedQuestion> = match args.temperature {
            None => model
                .beam_search(&cond, args.beam.max(args.top_k), args.max_len)?
                .into_iter()
                .take(args.top_k)
                .map(|h| GeneratedQuestion {
                    question: join_tokens(&model.vocab.decode(&h.tokens)),
                    log_prob: Some(h.log_prob),
                    finished: h.finished,
                })
                .collect(),
            Some(temp) => {
                let base = pair_seed(args.seed, &t.image_id, &t.answer);
                let mut out = Vec::new();
                for k in 0..args.top_k as u64 {
                    let tokens = model.sample_question(&cond, temp, base.wrapping_add(k), args.max_len)?;
                    let finished = tokens.len() < args.max_len;
                    let log_prob = match (finished, tokens.is_empty()) {
                        (false, _) => None,
                        (true, false) => Some(model.sequence_log_prob(&tokens, &cond)?),
                        (true, true) => {
                            let step = model.decoder_step(&model.begin(&cond)?, BOS, &cond)?;
                            Some((step.probs.data()[EOS] as f64).ln())
                        }
                    };
                    out.push(GeneratedQuestion {
                        question: join_tokens(&model.vocab.decode(&tokens)),
                        log_prob,
                        finished,
                    });
                }
                out
            }
        };
        let answer = join_tokens(&t.answer);
        records.push(GenerationRecord {
            pair_id: format!("{}|{answer}", t.image_id),
            model_id: id.clone(),
            image_id: t.image_id.clone(),
            answer,
            answer_type: t.answer_type.to_string(),
            references: refs.iter().map(|q| join_tokens(q)).collect(),
            question: hyps.first().map(|h| h.question.clone()).unwrap_or_default(),
            hypotheses: hyps,
            scene_ascii: scenes.as_ref().and_then(|s| s.get(&t.image_id)).map(|s| s.ascii()),
        });
    }
    create_parent(&args.out)?;
    write_lines(&args.out, &records, &mut rec)?;
    rec.finish(&manifest_for(&args.out, false))
}

struct PoolData {
    train: Vec<QATriple>,
    scenes: SceneIndex,
    pools: Vec<QuestionPool>,
}

fn build_pools(flags: &PoolFlags, rec: &mut Recorder) -> Result<PoolData, Failure> {
    rec.seeds.push(flags.pool_seed);
    let test = load_triples(&flags.test, rec)?;
    let train_path = flags.train.clone().unwrap_or_else(|| sibling(&flags.test, "train.jsonl"));
    let train = load_triples(&train_path, rec)?;
    let scenes_path = flags.scenes.clone().unwrap_or_else(|| sibling(&flags.test, "scenes.jsonl"));
    let scenes = SceneIndex::load(&scenes_path)?;
    rec.inputs.push(scenes_path);
    if let Some(t) = test.iter().find(|t| scenes.get(&t.image_id).is_none()) {
        return Err(Failure::Data(format!("no scene for image {}", t.image_id)));
    }
    let pools = PoolBuilder::new(&test, &train, &scenes, flags.pool_seed).build_all()?;
    let fallback = pools.iter().filter(|p| p.fallback).count();
    if fallback > 0 {
        log::warn!("{fallback} of {} pools used fallback distractors", pools.len());
    }
    Ok(PoolData { train, scenes, pools })
}

pub fn rank(args: RankArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("rank", &args);
    let data = build_pools(&args.pools, &mut rec)?;
    let report = match args.scorer {
        ScorerKind::Model => {
            let ckpt = args
                .ckpt
                .as_deref()
                .ok_or_else(|| Failure::Usage("--ckpt is required for the model scorer".into()))?;
            let model = load_model(ckpt, &mut rec)?;
            score_pools(&data.pools, &ModelScorer { model: &model, normalize: args.pools.normalize })?
        }
        ScorerKind::Prior => score_pools(&data.pools, &PriorScorer::new(&data.train))?,
        ScorerKind::Oracle => score_pools(&data.pools, &OracleScorer { scenes: &data.scenes })?,
    };
    if let Some(path) = &args.dump_pools {
        create_parent(path)?;
        write_lines(path, &data.pools, &mut rec)?;
    }
    eprintln!("acc@1 {:.2}  acc@3 {:.2}  over {} pairs", report.acc1, report.acc3, report.n_pairs);
    emit(args.out.as_deref(), &report, rec)
}

pub fn metrics(args: MetricsArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("metrics", &args);
    if args.beam == 0 || args.max_len == 0 {
        return Err(Failure::Usage("--beam and --max-len must be positive".into()));
    }
    let data = build_pools(&args.pools, &mut rec)?;
    let model = load_model(&args.ckpt, &mut rec)?;
    let ranking = score_pools(&data.pools, &ModelScorer { model: &model, normalize: args.pools.normalize })?;
    let mut candidates = Vec::with_capacity(data.pools.len());
    let mut references = Vec::with_capacity(data.pools.len());
    for pool in &data.pools {
        let features = pool
            .features
            .as_ref()
            .ok_or_else(|| Failure::Data(format!("pool {} lacks features", pool.image_id)))?;
        let cond = Conditioning::<f32>::new(features, model.vocab.encode(&pool.answer), pool.answer_type)?;
        let best = model.beam_search(&cond, args.beam, args.max_len)?;
        let tokens = best.first().map(|h| model.vocab.decode(&h.tokens)).unwrap_or_default();
        candidates.push(tokens);
        references.push(
            pool.candidates
                .iter()
                .filter(|c| c.label == Label::GT)
                .map(|c| c.question.clone())
                .collect::<Vec<_>>(),
        );
    }
    let report = EvalReport {
        acc1: ranking.acc1,
        acc3: ranking.acc3,
        breakdown: ranking.breakdown,
        bleu: bleu_1_to_4(&candidates, &references)?,
        rouge_l: rouge_l(&candidates, &references)?,
        cider: cider(&candidates, &references)?,
        n_pairs: ranking.n_pairs,
    };
    emit(args.out.as_deref(), &report, rec)
}

#[derive(Serialize)]
struct BreakdownRow {
    model: String,
    acc1: f64,
    acc3: f64,
    fractions: BTreeMap<String, f64>,
    dominant_error: Option<Label>,
}

fn row(model: String, r: &RankReport) -> BreakdownRow {
    BreakdownRow {
        model,
        acc1: r.acc1,
        acc3: r.acc3,
        fractions: Label::ALL.iter().map(|&l| (l.to_string(), r.breakdown.get(l))).collect(),
        dominant_error: r.dominant_error(),
    }
}

fn print_table(rows: &[BreakdownRow]) {
    let mut header = format!("{:<28}{:>8}{:>8}", "model", "acc@1", "acc@3");
    for l in Label::ALL {
        header.push_str(&format!("{:>8}", l.as_str()));
    }
    println!("{header}  dominant");
    for r in rows {
        let mut line = format!("{:<28}{:>8.2}{:>8.2}", r.model, r.acc1, r.acc3);
        for l in Label::ALL {
            line.push_str(&format!("{:>8.3}", r.fractions[l.as_str()]));
        }
        let dom = r.dominant_error.map(|l| l.as_str()).unwrap_or("-");
        println!("{line}  {dom}");
    }
}

fn score_rows(
    pools: &[QuestionPool],
    scorers: &[(String, &dyn Scorer)],
) -> Result<Vec<BreakdownRow>, Failure> {
    scorers
        .iter()
        .map(|(name, s)| Ok(row(name.clone(), &score_pools(pools, *s)?)))
        .collect()
}

pub fn breakdown(args: BreakdownArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("breakdown", &args);
    let data = build_pools(&args.pools, &mut rec)?;
    let models = args
        .ckpt
        .iter()
        .map(|p| Ok((model_id(p, &load_model(p, &mut rec)?), Model::<f32>::load(p)?)))
        .collect::<Result<Vec<_>, Failure>>()?;
    let prior = PriorScorer::new(&data.train);
    let model_scorers: Vec<ModelScorer<f32>> = models
        .iter()
        .map(|(_, m)| ModelScorer { model: m, normalize: args.pools.normalize })
        .collect();
    let mut scorers: Vec<(String, &dyn Scorer)> = vec![("prior".to_string(), &prior)];
    for ((name, _), s) in models.iter().zip(&model_scorers) {
        scorers.push((name.clone(), s));
    }
    let rows = score_rows(&data.pools, &scorers)?;
    print_table(&rows);
    match &args.out {
        Some(path) => {
            create_parent(path)?;
            write_json(path, &rows, &mut rec)?;
            rec.finish(&manifest_for(path, false))
        }
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct AuditReport {
    rows: Vec<BreakdownRow>,
    /// Prior < language-only < language+visual on acc@1.
    ordered: bool,
    visual_gain: f64,
}

pub fn bias_audit(args: BiasAuditArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("bias-audit", &args);
    rec.seeds.push(args.flags.seed);
    let data = build_pools(&args.pools, &mut rec)?;
    create_dir(&args.out)?;
    let mut models = Vec::new();
    for variant in [Variant::AnswerOnly, Variant::NoAttention, Variant::Full] {
        let dir = args.out.join(variant.as_str());
        create_dir(&dir)?;
        let (model, _) = train_variant(&data.train, variant, &args.flags, &dir, &mut rec)?;
        models.push((variant.as_str().to_string(), model));
    }
    let prior = PriorScorer::new(&data.train);
    let model_scorers: Vec<ModelScorer<f32>> = models
        .iter()
        .map(|(_, m)| ModelScorer { model: m, normalize: args.pools.normalize })
        .collect();
    let mut scorers: Vec<(String, &dyn Scorer)> = vec![("prior".to_string(), &prior)];
    for ((name, _), s) in models.iter().zip(&model_scorers) {
        scorers.push((name.clone(), s));
    }
    let rows = score_rows(&data.pools, &scorers)?;
    print_table(&rows);
    let acc: Vec<f64> = rows.iter().map(|r| r.acc1).collect();
    let report = AuditReport {
        ordered: acc[0] < acc[1] && acc[1] < acc[2],
        visual_gain: acc[2] - acc[1],
        rows,
    };
    write_json(&args.out.join("bias_audit.json"), &report, &mut rec)?;
    rec.finish(&manifest_for(&args.out, true))
}

#[derive(Serialize)]
struct GradcheckOutput {
    variant: Variant,
    max_rel_error: f64,
    tolerance: f64,
    passed: bool,
    report: ivqa_core::training::GradCheckReport,
}

/// Tiny f64 model with every weight perturbed away from its initial value,
/// so zero-initialized biases are exercised too.
fn gradcheck_model(args: &GradcheckArgs) -> Result<(Model<f64>, Vec<Example<f64>>), Failure> {
    use ivqa_core::textdata::{AnswerType, Vocabulary, RESERVED};
    if args.vocab <= RESERVED.len() {
        return Err(Failure::Usage(format!("--vocab must exceed {}", RESERVED.len())));
    }
    let tokens: Vec<String> = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain((RESERVED.len()..args.vocab).map(|i| format!("w{i}")))
        .collect();
    let global_dim = 5;
    let mut config = ModelConfig::new(args.hidden, args.vocab, [args.grid, args.grid, args.depth], global_dim, args.variant);
    config.mlb_dim = args.mlb;
    let mut model = Model::<f64>::new(config, Vocabulary::from(tokens), args.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for t in model.params.values_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    let locations = args.grid * args.grid;
    let mut examples = Vec::new();
    for k in 0..2 {
        let grid: Vec<f32> = (0..locations * args.depth).map(|_| rng.random_range(-1.0..1.0)).collect();
        let raw: Vec<f32> = (0..global_dim).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f32 = raw.iter().sum();
        let features = ivqa_core::textdata::FeatureBundle {
            grid_shape: [args.grid, args.grid, args.depth],
            grid,
            global: raw.iter().map(|x| x / total).collect(),
        };
        let answer = (0..1 + k).map(|_| rng.random_range(RESERVED.len()..args.vocab)).collect();
        let question = (0..3 + k).map(|_| rng.random_range(RESERVED.len()..args.vocab)).collect();
        let answer_type = AnswerType::ALL[rng.random_range(0..AnswerType::ALL.len())];
        examples.push(Example { cond: Conditioning::new(&features, answer, answer_type)?, question });
    }
    Ok((model, examples))
}

pub fn gradcheck(args: GradcheckArgs) -> Result<(), Failure> {
    let mut rec = Recorder::new("gradcheck", &args);
    rec.seeds.push(args.seed);
    if !(args.step > 0.0) || !(args.tolerance > 0.0) {
        return Err(Failure::Usage("--step and --tolerance must be positive".into()));
    }
    let (model, examples) = gradcheck_model(&args)?;
    let batch: Vec<&Example<f64>> = examples.iter().collect();
    let report = gradient_check(&model, &batch, args.step)?;
    let passed = report.max_rel_error < args.tolerance;
    for p in &report.params {
        log::info!("{:<24} {:>6} entries  max rel {:.3e}", p.name, p.entries, p.max_rel_error);
    }
    println!(
        "gradcheck {}: max relative error {:.3e} (tolerance {:.0e}) {}",
        args.variant,
        report.max_rel_error,
        args.tolerance,
        if passed { "ok" } else { "FAILED" }
    );
    let out = GradcheckOutput {
        variant: args.variant,
        max_rel_error: report.max_rel_error,
        tolerance: args.tolerance,
        passed,
        report,
    };
    if let Some(path) = &args.out {
        create_parent(path)?;
        write_json(path, &out, &mut rec)?;
        rec.finish(&manifest_for(path, false))?;
    }
    if passed {
        Ok(())
    } else {
        Err(Failure::Numeric(format!("gradient check exceeded tolerance {}", args.tolerance)))
    }
}
