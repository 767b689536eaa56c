//! Tokenization, vocabulary, answer typing and the JSON-lines dataset format.

mod dataset;
mod tokenize;
mod vocab;

pub use dataset::{
    answer_type_of, build_vocabulary, load_dataset, save_dataset, triple_to_json, AnswerType,
    FeatureBundle, QATriple, TypingProfile,
};
pub use tokenize::{is_numeral, join_tokens, tokenize};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("features: {0}")]
    FeatureShape(String),
    #[error("unknown answer type {0:?}")]
    UnknownAnswerType(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
