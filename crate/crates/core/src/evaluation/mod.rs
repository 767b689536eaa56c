//! Linguistic metrics, pool-based ranking accuracy and human-rating analysis.

mod metrics;
mod pool;
mod rank;
mod stats;

pub use metrics::{bleu, bleu_1_to_4, cider, lcs_len, rouge_l, rouge_l_sentence, CIDER_SCALE, ROUGE_BETA};
pub use pool::{
    pair_seed, AnswerOracle, Candidate, Label, PoolBuilder, QuestionPool, GT_PLUS_CT, MAX_GT, PER_DISTRACTOR,
    POOL_SIZE,
};
pub use rank::{
    rank_pool, rank_report, score_pools, Breakdown, EvalReport, ModelScorer, OracleScorer, PoolResult, PriorScorer,
    RankReport, Scorer,
};
pub use stats::{aggregate_ratings, load_ratings, parse_ratings, pearson, ModelRatings, Rating, MAX_RATING};

use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::model::ModelError;
use crate::textdata::DataError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("input: {0}")]
    Input(String),
    #[error("pool: {0}")]
    Pool(String),
    #[error("non-finite score: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl EvalError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
