use super::{ModelConfig, ModelError};
use crate::numerics::{Scalar, Tensor};
use crate::textdata::{AnswerType, FeatureBundle, QATriple, Vocabulary};

/// Everything a question is conditioned on: the image features and the
/// answer (as token ids and as a coarse type).
#[derive(Clone, Debug, PartialEq)]
pub struct Conditioning<T> {
    /// `[G*G, D]` local features, row per location.
    pub grid: Tensor<T>,
    /// Global concept vector.
    pub global: Tensor<T>,
    pub answer: Vec<usize>,
    pub answer_type: AnswerType,
}

impl<T: Scalar> Conditioning<T> {
    pub fn new(features: &FeatureBundle, answer: Vec<usize>, answer_type: AnswerType) -> Result<Self, ModelError> {
        features.validate()?;
        let conv = |xs: &[f32]| xs.iter().map(|&x| T::from_f64_lossy(x as f64)).collect::<Vec<T>>();
        Ok(Conditioning {
            grid: Tensor::new(vec![features.locations(), features.depth()], conv(&features.grid))?,
            global: Tensor::new(vec![features.global.len()], conv(&features.global))?,
            answer,
            answer_type,
        })
    }

    pub fn from_triple(triple: &QATriple, vocab: &Vocabulary) -> Result<Self, ModelError> {
        Self::new(&triple.features, triple.answer_ids(vocab), triple.answer_type)
    }

    /// Same image, different answer.
    pub fn with_answer(&self, answer: Vec<usize>, answer_type: AnswerType) -> Self {
        Conditioning {
            grid: self.grid.clone(),
            global: self.global.clone(),
            answer,
            answer_type,
        }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<(), ModelError> {
        if self.grid.shape() != [config.locations(), config.depth()] {
            return Err(ModelError::Input(format!(
                "grid {:?}, model expects [{}, {}]",
                self.grid.shape(),
                config.locations(),
                config.depth()
            )));
        }
        if self.global.len() != config.global_dim {
            return Err(ModelError::Input(format!(
                "global vector of {}, model expects {}",
                self.global.len(),
                config.global_dim
            )));
        }
        if self.answer.is_empty() {
            return Err(ModelError::Input("empty answer".into()));
        }
        if let Some(&bad) = self.answer.iter().find(|&&t| t >= config.vocab_size) {
            return Err(ModelError::Input(format!("answer token {bad} outside vocabulary")));
        }
        Ok(())
    }
}
