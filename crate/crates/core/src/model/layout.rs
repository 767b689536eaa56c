//! Parameter names, shapes and initialization for each variant.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::numerics::{glorot_with, lstm_bias, zero_bias, ParamRegistry, Scalar, Tensor};

pub const EMBED: &str = "embed";
pub const ANSWER_W_INPUT: &str = "answer_lstm.w_input";
pub const ANSWER_W_HIDDEN: &str = "answer_lstm.w_hidden";
pub const ANSWER_BIAS: &str = "answer_lstm.bias";
pub const GLIMPSE_W_IMAGE: &str = "glimpse.w_image";
pub const GLIMPSE_W_ANSWER: &str = "glimpse.w_answer";
pub const GLIMPSE_BIAS: &str = "glimpse.bias";
pub const DECODER_W_INPUT: &str = "decoder_lstm.w_input";
pub const DECODER_W_HIDDEN: &str = "decoder_lstm.w_hidden";
pub const DECODER_BIAS: &str = "decoder_lstm.bias";
pub const CONTEXT_W_HIDDEN: &str = "context.w_hidden";
pub const CONTEXT_W_ANSWER: &str = "context.w_answer";
pub const CONTEXT_BIAS: &str = "context.bias";
pub const ATTENTION_W_VISUAL: &str = "attention.w_visual";
pub const ATTENTION_W_CONTEXT: &str = "attention.w_context";
pub const ATTENTION_U: &str = "attention.u";
pub const ATTENTION_P: &str = "attention.p";
pub const COATTENTION_W_VISUAL: &str = "coattention.w_visual";
pub const COATTENTION_W_CONTEXT: &str = "coattention.w_context";
pub const COATTENTION_U: &str = "coattention.u";
pub const OUTPUT_W: &str = "output.w";
pub const OUTPUT_BIAS: &str = "output.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    Glorot,
    Zero,
    LstmBias,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub init: Init,
}

/// Parameters of a configuration in registry order. Weight matrices are
/// `[out, in]`.
pub fn param_specs(config: &ModelConfig) -> Vec<ParamSpec> {
    let (h, e, m) = (config.hidden_size, config.embed_size, config.mlb_dim);
    let (v, d, k) = (config.vocab_size, config.depth(), config.global_dim);
    let a = config.answer_dim();
    let variant = config.variant;
    let mut specs = Vec::new();
    let mut add = |name, shape: &[usize], init| {
        specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        })
    };
    add(EMBED, &[v, e], Init::Glorot);
    if variant.encodes_answer() {
        add(ANSWER_W_INPUT, &[4 * h, e], Init::Glorot);
        add(ANSWER_W_HIDDEN, &[4 * h, h], Init::Glorot);
        add(ANSWER_BIAS, &[4 * h], Init::LstmBias);
    }
    if variant.uses_image() {
        add(GLIMPSE_W_IMAGE, &[h, k], Init::Glorot);
    }
    if variant.answer_in_glimpse() {
        add(GLIMPSE_W_ANSWER, &[h, a], Init::Glorot);
    }
    add(GLIMPSE_BIAS, &[h], Init::Zero);
    add(DECODER_W_INPUT, &[4 * h, e], Init::Glorot);
    add(DECODER_W_HIDDEN, &[4 * h, h], Init::Glorot);
    add(DECODER_BIAS, &[4 * h], Init::LstmBias);
    add(CONTEXT_W_HIDDEN, &[h, h], Init::Glorot);
    if variant.answer_in_context() {
        add(CONTEXT_W_ANSWER, &[h, a], Init::Glorot);
    }
    add(CONTEXT_BIAS, &[h], Init::Zero);
    if variant.uses_attention() {
        add(ATTENTION_W_VISUAL, &[m, d], Init::Glorot);
        add(ATTENTION_W_CONTEXT, &[m, h], Init::Glorot);
        add(ATTENTION_U, &[m, m], Init::Glorot);
        add(ATTENTION_P, &[m], Init::Glorot);
    }
    if variant.uses_image() {
        add(COATTENTION_W_VISUAL, &[m, d], Init::Glorot);
    }
    add(COATTENTION_W_CONTEXT, &[m, h], Init::Glorot);
    add(COATTENTION_U, &[h, m], Init::Glorot);
    add(OUTPUT_W, &[v, h], Init::Glorot);
    add(OUTPUT_BIAS, &[v], Init::Zero);
    specs
}

/// Fresh registry: Glorot-uniform matrices drawn in registry order from one
/// seeded stream, zero biases, LSTM forget-gate bias one.
pub fn init_params<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<ParamRegistry<T>, ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamRegistry::new();
    for spec in param_specs(config) {
        let value: Tensor<T> = match spec.init {
            Init::Glorot => glorot_with(&spec.shape, &mut rng)?,
            Init::Zero => zero_bias(spec.shape[0])?,
            Init::LstmBias => lstm_bias(spec.shape[0] / 4)?,
        };
        params.insert(spec.name, value)?;
    }
    Ok(params)
}

/// Checks that `params` has exactly the names and shapes `config` requires.
pub fn check_params<T: Scalar>(config: &ModelConfig, params: &ParamRegistry<T>) -> Result<(), ModelError> {
    let specs = param_specs(config);
    if specs.len() != params.len() {
        return Err(ModelError::Config(format!(
            "expected {} parameters for variant {}, found {}",
            specs.len(),
            config.variant,
            params.len()
        )));
    }
    for spec in specs {
        let t = params.expect(spec.name)?;
        if t.shape() != spec.shape.as_slice() {
            return Err(ModelError::Config(format!(
                "{}: shape {:?}, expected {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
    }
    Ok(())
}
