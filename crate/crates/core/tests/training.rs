mod common;

use common::{random_cond, random_model, tiny_config};
use ivqa_core::model::{Model, Variant};
use ivqa_core::numerics::Tensor;
use ivqa_core::textdata::PAD;
use ivqa_core::training::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn examples(model: &Model<f64>, n: usize, seed: u64) -> Vec<Example<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..=5);
            Example {
                cond: random_cond(&model.config, seed * 1000 + i as u64),
                question: (0..len).map(|_| rng.random_range(4..model.config.vocab_size)).collect(),
            }
        })
        .collect()
}

fn tiny(variant: Variant, seed: u64) -> Model<f64> {
    random_model(&tiny_config(variant, 2, 8, 16, 20, 8), seed, 0.5)
}

#[test]
fn learning_rate_schedule() {
    let c = TrainConfig::default();
    for (epoch, want) in [(0, 5e-4), (1, 5e-4 * 0.83), (2, 3.4445e-4)] {
        let got = c.lr_at(epoch).unwrap();
        assert!((got - want).abs() <= 1e-15, "epoch {epoch}: {got}");
    }
    assert!((c.lr_at(1).unwrap() - 4.15e-4).abs() < 1e-15);
    assert!(c.lr_at(-1).is_err());
}

#[test]
fn invalid_configs_rejected() {
    let bad = [
        TrainConfig { decay: 0.0, ..Default::default() },
        TrainConfig { decay: 1.5, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
        TrainConfig { lr0: f64::NAN, ..Default::default() },
    ];
    for c in bad {
        assert!(c.validate().is_err(), "{c:?}");
    }
}

#[test]
fn uniform_predictor_costs_ln_v() {
    let mut model = tiny(Variant::Full, 1);
    for t in model.params.values_mut() {
        t.data_mut().fill(0.0);
    }
    let ex = examples(&model, 4, 2);
    let batch: Vec<&Example<f64>> = ex.iter().collect();
    let loss = batch_loss(&model, &batch).unwrap();
    assert!((loss - (20f64).ln()).abs() < 1e-12, "{loss}");
}

#[test]
fn duplicating_the_batch_keeps_the_loss() {
    let model = tiny(Variant::Full, 3);
    let ex = examples(&model, 3, 4);
    let once: Vec<&Example<f64>> = ex.iter().collect();
    let twice: Vec<&Example<f64>> = ex.iter().chain(&ex).collect();
    let a = batch_loss(&model, &once).unwrap();
    let b = batch_loss(&model, &twice).unwrap();
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
}

#[test]
fn single_sample_matches_sequence_log_prob() {
    for variant in Variant::ALL {
        let model = tiny(variant, 5);
        let ex = examples(&model, 1, 6);
        let loss = batch_loss(&model, &[&ex[0]]).unwrap();
        let lp = model.sequence_log_prob(&ex[0].question, &ex[0].cond).unwrap();
        let want = -lp / (ex[0].question.len() + 1) as f64;
        assert!((loss - want).abs() < 1e-12, "{variant:?}: {loss} vs {want}");
    }
}

#[test]
fn all_pad_batch_is_an_error() {
    let model = tiny(Variant::Full, 7);
    let mut ex = examples(&model, 1, 8);
    ex[0].question = vec![PAD, PAD];
    assert!(batch_loss(&model, &[&ex[0]]).is_err());
}

#[test]
fn analytic_gradients_match_finite_differences() {
    for variant in Variant::ALL {
        let model = tiny(variant, 11);
        let ex = examples(&model, 2, 12);
        let batch: Vec<&Example<f64>> = ex.iter().collect();
        let report = gradient_check(&model, &batch, 1e-5).unwrap();
        assert_eq!(report.params.len(), model.params.len());
        assert!(report.max_rel_error < 1e-4, "{variant:?}: {:?}", report.params);
    }
}

/// Rows of padded steps never reach the loss, so their logit gradients are
/// exactly zero.
#[test]
fn padded_positions_get_zero_gradient() {
    let model = tiny(Variant::Full, 13);
    let mut ex = examples(&model, 2, 14);
    ex[0].question = vec![5];
    ex[1].question = vec![6, 7, 8, 9];
    let pairs: Vec<_> = ex.iter().map(|e| (&e.cond, e.question.as_slice())).collect();
    let lg = model.loss_graph(&pairs).unwrap();
    assert_eq!(lg.tokens, 2 + 5);
    let grads = lg.graph.backward(lg.loss).unwrap();
    for (t, &id) in lg.logits.iter().enumerate() {
        let g = grads.get(id).unwrap();
        let short = g.row(0);
        let long = g.row(1);
        if t >= 2 {
            assert!(short.iter().all(|&x| x == 0.0), "step {t}: {short:?}");
        } else {
            assert!(short.iter().any(|&x| x != 0.0));
        }
        assert!(long.iter().any(|&x| x != 0.0));
    }
}

#[test]
fn epoch_order_is_seeded_per_epoch() {
    assert_eq!(epoch_order(50, 1, 0), epoch_order(50, 1, 0));
    assert_ne!(epoch_order(50, 1, 0), epoch_order(50, 1, 1));
    assert_ne!(epoch_order(50, 1, 0), epoch_order(50, 2, 0));
}

proptest! {
    #[test]
    fn epoch_visits_every_sample_once(n in 1usize..300, seed: u64, epoch in 0usize..40) {
        let mut order = epoch_order(n, seed, epoch);
        order.sort_unstable();
        prop_assert_eq!(order, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn clipping_bounds_the_norm(
        values in prop::collection::vec(-100.0f64..100.0, 1..40),
        max_norm in 0.01f64..10.0,
    ) {
        let half = values.len() / 2;
        let mut grads = vec![
            Tensor::new(vec![half.max(1)], values[..half.max(1)].to_vec()).unwrap(),
        ];
        if values.len() > half.max(1) {
            grads.push(Tensor::new(vec![values.len() - half.max(1)], values[half.max(1)..].to_vec()).unwrap());
        }
        let before: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        let norm = clip_global_norm(&mut grads, max_norm);
        let after: Vec<f64> = grads.iter().flat_map(|g| g.data().to_vec()).collect();
        prop_assert!(global_norm(&grads) <= max_norm + 1e-9);
        let k = if norm > max_norm { max_norm / norm } else { 1.0 };
        for (a, b) in before.iter().zip(&after) {
            prop_assert!((a * k - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

fn small_run(lr0: f64, out: Option<&std::path::Path>) -> (Model<f64>, Model<f64>, TrainReport) {
    let start = tiny(Variant::Full, 21);
    let mut model = start.clone();
    let data = examples(&model, 10, 22);
    let config = TrainConfig { batch_size: 4, epochs: 3, lr0, seed: 5, ..Default::default() };
    let report = train(&mut model, &data, &config, out).unwrap();
    (start, model, report)
}

#[test]
fn training_is_deterministic() {
    let (_, a, ra) = small_run(1e-2, None);
    let (_, b, rb) = small_run(1e-2, None);
    assert_eq!(ra, rb);
    assert_eq!(a.params, b.params);
    assert_eq!(ra.curve.len(), 3 * 3);
    assert!(ra.epoch_losses.last().unwrap() < &ra.epoch_losses[0]);
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let (start, end, _) = small_run(0.0, None);
    assert_eq!(start.params, end.params);
}

#[test]
fn checkpoints_and_loss_log_are_written() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model, report) = small_run(1e-2, Some(dir.path()));
    assert_eq!(report.checkpoints.len(), 3);
    for (epoch, path) in report.checkpoints.iter().enumerate() {
        assert_eq!(path.file_name().unwrap().to_str().unwrap(), format!("ckpt_epoch{epoch}.bin"));
        assert!(path.with_extension("json").exists());
    }
    let last = Model::<f64>::load(report.checkpoints.last().unwrap()).unwrap();
    assert_eq!(last.params, model.params);
    let csv = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,step,lr,loss"));
    assert_eq!(lines.count(), report.curve.len());
}

#[test]
fn non_finite_parameters_abort_training() {
    let mut model = tiny(Variant::Full, 31);
    let data = examples(&model, 4, 32);
    let mut t = model.params.get("output.w").unwrap().clone();
    t.data_mut()[0] = f64::NAN;
    model.params.set("output.w", t).unwrap();
    let config = TrainConfig { batch_size: 2, epochs: 1, ..Default::default() };
    assert!(matches!(
        train(&mut model, &data, &config, None),
        Err(TrainError::NonFinite { epoch: 0, step: 0 })
    ));
}
