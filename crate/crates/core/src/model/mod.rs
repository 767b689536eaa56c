//! The answer-conditioned question generator and its baselines.
//!
//! An answer LSTM encodes the answer; together with the global concept
//! vector it sets the decoder's initial hidden state. At every step the
//! decoder state and the answer code form a word context, which attends
//! over the local feature grid through low-rank bilinear fusion; a second
//! fusion of the attended feature with the context feeds the word softmax.

mod config;
mod decode;
mod input;
pub mod layout;
mod net;
mod nn;

pub use config::{ModelConfig, Variant, DEFAULT_HIDDEN, DEFAULT_MAX_LEN};
pub use decode::{AttentionTrace, DecoderState, Hypothesis, LossGraph, StepResult};
pub use input::Conditioning;
pub use layout::{init_params, param_specs, ParamSpec};
pub use nn::NearestNeighbour;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{Checkpoint, NumericsError, ParamRegistry, Scalar};
use crate::textdata::{DataError, Vocabulary};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {message}")]
    Card { path: PathBuf, message: String },
}

/// Network configuration, vocabulary and weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamRegistry<T>,
}

/// JSON sidecar stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub vocab: Vocabulary,
}

/// `ckpt_epoch3.bin` → `ckpt_epoch3.json`.
pub fn card_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("json")
}

impl<T: Scalar> Model<T> {
    pub fn new(config: ModelConfig, vocab: Vocabulary, seed: u64) -> Result<Self, ModelError> {
        let params = init_params(&config, seed)?;
        Self::from_parts(config, vocab, params)
    }

    pub fn from_parts(config: ModelConfig, vocab: Vocabulary, params: ParamRegistry<T>) -> Result<Self, ModelError> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(ModelError::Config(format!(
                "vocab_size {} but vocabulary has {} tokens",
                config.vocab_size,
                vocab.len()
            )));
        }
        layout::check_params(&config, &params)?;
        Ok(Model { config, vocab, params })
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            params: self.params.cast(),
        }
    }

    pub fn card(&self) -> ModelCard {
        ModelCard {
            config: self.config.clone(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.clone(),
        }
    }

    /// Writes the checkpoint and its model card; returns the card path.
    pub fn save(&self, path: &Path, seed: u64, step: u64) -> Result<PathBuf, ModelError> {
        Checkpoint { params: self.params.clone(), seed, step }.save(path)?;
        let card = card_path(path);
        let text = serde_json::to_string_pretty(&self.card()).expect("model card serializes");
        std::fs::write(&card, text + "\n").map_err(|e| DataError::io(&card, e))?;
        Ok(card)
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let ckpt = Checkpoint::<T>::load(path)?;
        let card_file = card_path(path);
        let text = std::fs::read_to_string(&card_file).map_err(|e| DataError::io(&card_file, e))?;
        let card: ModelCard = serde_json::from_str(&text).map_err(|e| ModelError::Card {
            path: card_file.clone(),
            message: e.to_string(),
        })?;
        if card.vocab.hash() != card.vocab_hash {
            return Err(ModelError::Card {
                path: card_file,
                message: "vocabulary hash mismatch".into(),
            });
        }
        Self::from_parts(card.config, card.vocab, ckpt.params)
    }
}
