#![allow(dead_code)]

pub mod metric_oracle;

use ivqa_core::model::{Conditioning, Model, ModelConfig, Variant};
use ivqa_core::numerics::{Scalar, Tensor};
use ivqa_core::textdata::{AnswerType, Vocabulary, RESERVED};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reserved tokens followed by `w0 .. w{n-1}`.
pub fn vocab_of(words: usize) -> Vocabulary {
    let tokens: Vec<String> = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain((0..words).map(|i| format!("w{i}")))
        .collect();
    Vocabulary::from(tokens)
}

pub fn tiny_config(variant: Variant, g: usize, d: usize, hidden: usize, vocab: usize, mlb: usize) -> ModelConfig {
    let mut c = ModelConfig::new(hidden, vocab, [g, g, d], 5, variant);
    c.mlb_dim = mlb;
    c
}

/// Model with every entry (biases included) uniform on `[-scale, scale]`.
pub fn random_model<T: Scalar>(config: &ModelConfig, seed: u64, scale: f64) -> Model<T> {
    let vocab = vocab_of(config.vocab_size - RESERVED.len());
    let mut model = Model::<T>::new(config.clone(), vocab, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for t in model.params.values_mut() {
        for x in t.data_mut() {
            *x = T::from_f64_lossy(rng.random_range(-scale..=scale));
        }
    }
    model
}

pub fn random_cond<T: Scalar>(config: &ModelConfig, seed: u64) -> Conditioning<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l, d) = (config.locations(), config.depth());
    let grid: Vec<T> = (0..l * d).map(|_| T::from_f64_lossy(rng.random_range(-1.0..1.0))).collect();
    let raw: Vec<f64> = (0..config.global_dim).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let global = raw.iter().map(|x| T::from_f64_lossy(x / total)).collect();
    let n_answer = rng.random_range(1..=3);
    let answer = (0..n_answer).map(|_| rng.random_range(4..config.vocab_size)).collect();
    Conditioning {
        grid: Tensor::new(vec![l, d], grid).unwrap(),
        global: Tensor::new(vec![config.global_dim], global).unwrap(),
        answer,
        answer_type: AnswerType::ALL[rng.random_range(0..AnswerType::ALL.len())],
    }
}

/// Every token sequence reachable within `max_len` emitted tokens, with its
/// exact log-probability from repeated single decoder steps. Sequences that
/// hit the cap are returned without eos and flagged unfinished.
pub fn enumerate_sequences(model: &Model<f64>, cond: &Conditioning<f64>, max_len: usize) -> Vec<(Vec<usize>, f64, bool)> {
    let mut out = Vec::new();
    let start = model.begin(cond).unwrap();
    let mut frontier = vec![(start, Vec::<usize>::new(), 0.0f64)];
    for t in 0..max_len {
        let mut next = Vec::new();
        for (state, toks, lp) in frontier {
            let input = toks.last().copied().unwrap_or(ivqa_core::textdata::BOS);
            let step = model.decoder_step(&state, input, cond).unwrap();
            for v in 0..model.config.vocab_size {
                if matches!(v, 0 | 1 | 3) {
                    continue;
                }
                let l = lp + step.probs.data()[v].ln();
                if v == ivqa_core::textdata::EOS {
                    out.push((toks.clone(), l, true));
                } else {
                    let mut t2 = toks.clone();
                    t2.push(v);
                    if t + 1 == max_len {
                        out.push((t2, l, false));
                    } else {
                        next.push((step.state.clone(), t2, l));
                    }
                }
            }
        }
        frontier = next;
    }
    out
}
