//! Synthetic grid scenes with exact question answering: the desk-scale
//! stand-in for photographs and CNN features.

mod features;
pub mod lexicon;
mod qa;
mod scene;
mod world;

pub use features::{cell_block, render_features, DEFAULT_SIGMA};
pub use qa::{
    conditional_question_prob, generate_qa, oracle_answer, question_distribution, Family,
    GeneratedQa, NeedsResample, OracleAnswer, Query, WeightedQuestion,
    MAX_SHARED_ANSWER,
};
pub use scene::{generate_scene, Object, Scene, DEFAULT_GRID};
pub use world::{
    generate_dataset, split_counts, write_dataset, SceneIndex, WorldConfig, WorldData, WorldSplit,
    SPLIT_NAMES,
};
