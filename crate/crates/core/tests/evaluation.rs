mod common;

use common::metric_oracle::{self, hand_corpus};
use ivqa_core::evaluation::*;
use ivqa_core::microworld::{generate_dataset, WorldConfig, WorldData};
use ivqa_core::textdata::{tokenize, AnswerType};
use proptest::prelude::*;

type Corpus = (Vec<Vec<String>>, Vec<Vec<Vec<String>>>);

fn split(pairs: &[(&str, Vec<&str>)]) -> Corpus {
    let cands = pairs.iter().map(|(c, _)| tokenize(c)).collect();
    let refs = pairs.iter().map(|(_, r)| r.iter().map(|x| tokenize(x)).collect()).collect();
    (cands, refs)
}

#[test]
fn metrics_match_the_naive_oracle_on_the_hand_corpus() {
    let pairs = hand_corpus();
    let (c, r) = split(&pairs);
    for n in 1..=4 {
        let want = metric_oracle::bleu(&pairs, n);
        let got = bleu(&c, &r, n).unwrap();
        assert!((got - want).abs() < 1e-6, "BLEU-{n}: {got} vs {want}");
        assert!(want > 0.0);
    }
    let want = metric_oracle::rouge_l(&pairs, 1.2);
    assert!((rouge_l(&c, &r).unwrap() - want).abs() < 1e-6);
    let want = metric_oracle::cider(&pairs);
    assert!((cider(&c, &r).unwrap() - want).abs() < 1e-6);
}

#[test]
fn hand_counted_examples() {
    let one = |c: &str, r: &str| (vec![tokenize(c)], vec![vec![tokenize(r)]]);
    let (c, r) = one("the the the the", "the cat");
    assert!((bleu(&c, &r, 1).unwrap() - 0.25).abs() < 1e-12);
    let (c, r) = one("a c d", "a b c d");
    // LCS 3, P = 1, R = 3/4.
    let (p, rec, b2) = (1.0, 0.75, 1.44);
    let want = (1.0 + b2) * p * rec / (rec + b2 * p);
    assert!((rouge_l(&c, &r).unwrap() - want).abs() < 1e-12);
    let (c, r) = one("x y", "p q");
    assert_eq!(rouge_l(&c, &r).unwrap(), 0.0);
    assert_eq!(bleu(&c, &r, 1).unwrap(), 0.0);
}

/// Three images, unigram-to-4-gram tf-idf worked through by the oracle,
/// plus one closed form: a candidate of at least four tokens equal to its
/// reference, with n-grams found in no other reference set, scores ten.
#[test]
fn cider_three_image_toy() {
    let pairs = vec![
        ("red ball left", vec!["red ball left", "blue ball"]),
        ("blue cube", vec!["blue cube right"]),
        ("green cone", vec!["green cone"]),
    ];
    let (c, r) = split(&pairs);
    let got = cider(&c, &r).unwrap();
    let want = metric_oracle::cider(&pairs);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    let unique = vec![("green cone on left", vec!["green cone on left"]), ("red star at top", vec!["red star at top"])];
    let (c, r) = split(&unique);
    assert!((cider(&c, &r).unwrap() - 10.0).abs() < 1e-12);
    let single = vec![("a b", vec!["a b"])];
    let (c, r) = split(&single);
    assert!(cider(&c, &r).is_err());
}

#[test]
fn identity_corpus_is_maximal() {
    let pairs = hand_corpus();
    let (c, _) = split(&pairs);
    let refs: Vec<Vec<Vec<String>>> = c.iter().map(|s| vec![s.clone()]).collect();
    // Distinct sentences so every image has n-grams of its own.
    assert_eq!(bleu_1_to_4(&c, &refs).unwrap(), [1.0; 4]);
    assert_eq!(rouge_l(&c, &refs).unwrap(), 1.0);
    assert!((cider(&c, &refs).unwrap() - 10.0).abs() < 1e-9);
}

#[test]
fn empty_corpus_is_an_error() {
    assert!(bleu(&[], &[], 1).is_err());
    assert!(rouge_l(&[], &[]).is_err());
}

proptest! {
    #[test]
    fn metrics_bounded_and_order_invariant(seed in 0usize..1000, rot in 0usize..10) {
        let words = ["a", "b", "c", "d", "e"];
        let sent = |k: usize, len: usize| -> Vec<String> {
            (0..len).map(|i| words[(k * 7 + i * 3 + i * i) % words.len()].to_string()).collect()
        };
        let c: Vec<Vec<String>> = (0..10).map(|i| sent(seed + i, 2 + (seed + i) % 4)).collect();
        let r: Vec<Vec<Vec<String>>> = (0..10).map(|i| vec![sent(seed * 3 + i, 3), sent(i, 2 + i % 3)]).collect();
        let b = bleu_1_to_4(&c, &r).unwrap();
        let rl = rouge_l(&c, &r).unwrap();
        let cd = cider(&c, &r).unwrap();
        prop_assert!(b.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((0.0..=1.0).contains(&rl));
        prop_assert!(cd >= 0.0);
        let mut c2 = c.clone();
        let mut r2 = r.clone();
        c2.rotate_left(rot);
        r2.rotate_left(rot);
        let b2 = bleu_1_to_4(&c2, &r2).unwrap();
        for (x, y) in b.iter().zip(&b2) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        prop_assert!((rl - rouge_l(&c2, &r2).unwrap()).abs() < 1e-12);
        prop_assert!((cd - cider(&c2, &r2).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn pearson_is_affine_invariant(xs in prop::collection::vec(-10.0f64..10.0, 3..20), a in 0.1f64..5.0, b in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, x)| x * x + i as f64).collect();
        if let Ok(r) = pearson(&xs, &ys) {
            prop_assert!((-1.0..=1.0).contains(&r));
            let zs: Vec<f64> = ys.iter().map(|y| a * y + b).collect();
            prop_assert!((pearson(&xs, &zs).unwrap() - r).abs() < 1e-9);
        }
    }
}

#[test]
fn pearson_closed_forms() {
    let x = [1.0, 2.0, 3.0, 4.0];
    let up: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
    let down: Vec<f64> = x.iter().map(|v| -v).collect();
    assert!((pearson(&x, &up).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&x, &down).unwrap() + 1.0).abs() < 1e-12);
    // Hand arithmetic: y = [2, 1, 4, 3]; deviations x: -1.5 -0.5 0.5 1.5,
    // y: -0.5 -1.5 1.5 0.5; Sxy = 0.75+0.75+0.75+0.75 = 3, Sxx = Syy = 5.
    let r = pearson(&x, &[2.0, 1.0, 4.0, 3.0]).unwrap();
    assert!((r - 0.6).abs() < 1e-12);
    assert!(pearson(&x, &[1.0; 4]).is_err());
    assert!(pearson(&[1.0], &[1.0]).is_err());
}

#[test]
fn rating_means_are_exact() {
    let line = |pair: &str, model: &str, r: u8| format!(r#"{{"pair_id":"{pair}","model_id":"{model}","rating":{r}}}"#);
    let text = [line("p1", "full", 4), line("p2", "full", 4), line("p3", "full", 4), line("p1", "a", 0), line("p2", "a", 4)]
        .join("\n");
    let ratings = parse_ratings(&text).unwrap();
    let agg = aggregate_ratings(&ratings);
    assert_eq!(agg["full"], ModelRatings { mean: 4.0, count: 3 });
    assert_eq!(agg["a"], ModelRatings { mean: 2.0, count: 2 });
}

fn hand_pool(labels: &[Label]) -> QuestionPool {
    QuestionPool {
        image_id: "img".into(),
        answer: vec!["2".into()],
        answer_type: AnswerType::Number,
        features: None,
        candidates: labels
            .iter()
            .enumerate()
            .map(|(i, &label)| Candidate { question: vec![format!("q{i}")], label })
            .collect(),
        fallback: false,
    }
}

/// Winner, top-1 and top-3 of each pool worked out by hand:
/// 1. GT 0.9 highest → GT, hit@1, hit@3.
/// 2. CT 0.7 > RN 0.65 > GT 0.6 → CT, miss@1, hit@3.
/// 3. GT 0.1 last → PS, miss, miss.
/// 4. GT ties PP at 0.5, tie goes against GT → PP, miss@1, hit@3.
/// 5. PP 3 > RN 2 > CT 1 > GT → PP, miss, miss.
#[test]
fn hand_ranking_table() {
    use Label::*;
    let table: Vec<(Vec<Label>, Vec<f64>)> = vec![
        (vec![GT, CT, PS, PP], vec![0.9, 0.5, 0.1, 0.3]),
        (vec![GT, GT, CT, PP, RN], vec![0.2, 0.6, 0.7, 0.1, 0.65]),
        (vec![GT, PS, PP, RN, CT], vec![0.1, 0.9, 0.8, 0.7, 0.6]),
        (vec![GT, PP, PS], vec![0.5, 0.5, 0.4]),
        (vec![GT, RN, PP, CT], vec![-1.0, 2.0, 3.0, 1.0]),
    ];
    let results: Vec<PoolResult> = table
        .iter()
        .map(|(labels, scores)| rank_pool(&hand_pool(labels), scores).unwrap())
        .collect();
    let winners: Vec<Label> = results.iter().map(|r| r.winner).collect();
    assert_eq!(winners, vec![GT, CT, PS, PP, PP]);
    let report = rank_report(&results).unwrap();
    assert!((report.acc1 - 20.0).abs() < 1e-12);
    assert!((report.acc3 - 60.0).abs() < 1e-12);
    let b = report.breakdown;
    assert_eq!([b.gt, b.ct, b.ps, b.pp, b.rn], [0.2, 0.2, 0.2, 0.4, 0.0]);
    assert_eq!(report.dominant_error(), Some(PP));
}

#[test]
fn indicator_scorers() {
    use Label::*;
    let labels = [GT, GT, CT, PS, PP, RN];
    let pools: Vec<QuestionPool> = (0..4).map(|_| hand_pool(&labels)).collect();
    let plus: Vec<f64> = labels.iter().map(|&l| if l == GT { 1.0 } else { 0.0 }).collect();
    let minus: Vec<f64> = plus.iter().map(|x| -x).collect();
    let up: Vec<_> = pools.iter().map(|p| rank_pool(p, &plus).unwrap()).collect();
    let r = rank_report(&up).unwrap();
    assert_eq!((r.acc1, r.acc3), (100.0, 100.0));
    let down: Vec<_> = pools.iter().map(|p| rank_pool(p, &minus).unwrap()).collect();
    let r = rank_report(&down).unwrap();
    assert_eq!(r.acc1, 0.0);
    assert_eq!(r.breakdown.gt, 0.0);
    assert!((r.breakdown.total() - 1.0).abs() < 1e-12);
    let constant = vec![0.0; labels.len()];
    let flat: Vec<_> = pools.iter().map(|p| rank_pool(p, &constant).unwrap()).collect();
    assert_eq!(rank_report(&flat).unwrap().acc1, 0.0);
}

fn world() -> WorldData {
    generate_dataset(400, [0.5, 0.25, 0.25], 3, &WorldConfig::default()).unwrap()
}

#[test]
fn pools_satisfy_composition_and_oracle_rejection() {
    let data = world();
    let index = data.scene_index();
    let builder = PoolBuilder::new(&data.test.triples, &data.train.triples, &index, 9);
    let pools = builder.build_all().unwrap();
    assert_eq!(pools.len(), builder.pairs().len());
    assert!(pools.len() > 100);
    for pool in &pools {
        pool.check_composition().unwrap();
        let gts: Vec<&Vec<String>> =
            pool.candidates.iter().filter(|c| c.label == Label::GT).map(|c| &c.question).collect();
        for c in &pool.candidates {
            let correct = index.is_correct(&pool.image_id, &c.question, &pool.answer);
            assert_eq!(correct, c.label == Label::GT, "{} {:?} {:?}", pool.image_id, pool.answer, c);
            if c.label == Label::PS {
                let one_swap = gts.iter().any(|g| {
                    g.len() == c.question.len() && g.iter().zip(&c.question).filter(|(a, b)| a != b).count() == 1
                });
                assert!(one_swap, "{c:?}");
            }
        }
    }
}

#[test]
fn pools_are_deterministic_per_seed() {
    let data = world();
    let index = data.scene_index();
    let a = PoolBuilder::new(&data.test.triples, &data.train.triples, &index, 9).build_all().unwrap();
    let b = PoolBuilder::new(&data.test.triples, &data.train.triples, &index, 9).build_all().unwrap();
    let c = PoolBuilder::new(&data.test.triples, &data.train.triples, &index, 10).build_all().unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn generative_oracle_ranks_ground_truth_first() {
    let data = world();
    let index = data.scene_index();
    let pools = PoolBuilder::new(&data.test.triples, &data.train.triples, &index, 9).build_all().unwrap();
    let report = score_pools(&pools, &OracleScorer { scenes: &index }).unwrap();
    assert!(report.acc1 >= 95.0, "{}", report.acc1);
    assert!(report.acc1 <= report.acc3);
    assert!((report.breakdown.total() - 1.0).abs() < 1e-12);
}

#[test]
fn prior_scorer_prefers_popular_questions() {
    let data = world();
    let index = data.scene_index();
    let pools = PoolBuilder::new(&data.test.triples, &data.train.triples, &index, 9).build_all().unwrap();
    let prior = PriorScorer::new(&data.train.triples);
    for pool in pools.iter().take(20) {
        let scores = prior.score_pool(pool).unwrap();
        let count = |q: &Vec<String>| data.train.triples.iter().filter(|t| &t.question == q).count() as f64;
        for (c, s) in pool.candidates.iter().zip(&scores) {
            assert!((s - count(&c.question).ln_1p()).abs() < 1e-12);
        }
    }
}

#[test]
fn cider_toy_pinned_value() {
    let pairs = vec![
        ("red ball left", vec!["red ball left", "blue ball"]),
        ("blue cube", vec!["blue cube right"]),
        ("green cone", vec!["green cone"]),
    ];
    let (c, r) = split(&pairs);
    let got = cider(&c, &r).unwrap();
    // Worked by hand: idf = ln 3 for every gram except "blue" (ln 1.5).
    // Image 1 against its first reference matches at orders 1-3; against
    // "blue ball" only the unigram "ball" is shared. No candidate has a
    // 4-gram, and image 2's candidate has no trigram.
    let (l3, l15) = (3f64.ln(), 1.5f64.ln());
    let cos_ball = (l3 * l3) / ((3.0 * l3 * l3).sqrt() * (l15 * l15 + l3 * l3).sqrt());
    let img1 = 10.0 * ((1.0 + cos_ball) / 2.0 + 0.5 + 0.5) / 4.0;
    let cu = (l15 * l15 + l3 * l3) / ((l15 * l15 + l3 * l3).sqrt() * (l15 * l15 + 2.0 * l3 * l3).sqrt());
    let cb = 1.0 / 2f64.sqrt();
    let img2 = 10.0 * (cu + cb) / 4.0;
    let img3 = 10.0 * 2.0 / 4.0;
    let want = (img1 + img2 + img3) / 3.0;
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

/// Summation order must not depend on hashing, so repeated runs agree to
/// the last bit.
#[test]
fn metrics_are_bitwise_repeatable() {
    let (c, r) = split(&hand_corpus());
    let first = (bleu_1_to_4(&c, &r).unwrap(), rouge_l(&c, &r).unwrap(), cider(&c, &r).unwrap());
    for _ in 0..50 {
        let again = (bleu_1_to_4(&c, &r).unwrap(), rouge_l(&c, &r).unwrap(), cider(&c, &r).unwrap());
        assert_eq!(again.0.map(f64::to_bits), first.0.map(f64::to_bits));
        assert_eq!(again.1.to_bits(), first.1.to_bits());
        assert_eq!(again.2.to_bits(), first.2.to_bits());
    }
}
