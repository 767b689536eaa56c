//! Distractor pools: each (image, answer) pair gets 24 candidate questions
//! of which 1-3 are correct.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EvalError;
use crate::microworld::{lexicon, oracle_answer, OracleAnswer, Query, SceneIndex};
use crate::textdata::{AnswerType, FeatureBundle, QATriple};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Label {
    /// Correct question for the pair.
    GT,
    /// From a visually similar image, with a different answer.
    CT,
    /// A correct question with one key word swapped.
    PS,
    /// Popular question of the same answer type.
    PP,
    /// Question with the same answer on another image.
    RN,
}

impl Label {
    pub const ALL: [Label; 5] = [Label::GT, Label::CT, Label::PS, Label::PP, Label::RN];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::GT => "GT",
            Label::CT => "CT",
            Label::PS => "PS",
            Label::PP => "PP",
            Label::RN => "RN",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const POOL_SIZE: usize = 24;
pub const MAX_GT: usize = 3;
pub const GT_PLUS_CT: usize = 6;
pub const PER_DISTRACTOR: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub question: Vec<String>,
    pub label: Label,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionPool {
    pub image_id: String,
    pub answer: Vec<String>,
    pub answer_type: AnswerType,
    #[serde(skip)]
    pub features: Option<FeatureBundle>,
    pub candidates: Vec<Candidate>,
    /// PP or RN ran dry and was topped up from a wider source.
    pub fallback: bool,
}

impl QuestionPool {
    pub fn count(&self, label: Label) -> usize {
        self.candidates.iter().filter(|c| c.label == label).count()
    }

    /// Composition check: 24 distinct candidates, 1-3 GT, GT+CT = 6 and six
    /// each of PS, PP and RN.
    pub fn check_composition(&self) -> Result<(), String> {
        let gt = self.count(Label::GT);
        let counts = Label::ALL.map(|l| self.count(l));
        if self.candidates.len() != POOL_SIZE {
            return Err(format!("{} candidates", self.candidates.len()));
        }
        if !(1..=MAX_GT).contains(&gt) {
            return Err(format!("{gt} GT"));
        }
        if gt + self.count(Label::CT) != GT_PLUS_CT
            || [Label::PS, Label::PP, Label::RN].iter().any(|&l| self.count(l) != PER_DISTRACTOR)
        {
            return Err(format!("composition {counts:?}"));
        }
        let distinct: HashSet<&Vec<String>> = self.candidates.iter().map(|c| &c.question).collect();
        if distinct.len() != POOL_SIZE {
            return Err("duplicate candidates".into());
        }
        Ok(())
    }
}

/// Decides correctness of a question for an image and answer.
pub trait AnswerOracle {
    fn is_correct(&self, image_id: &str, question: &[String], answer: &[String]) -> bool;

    /// Questions answered by `answer` on some image other than
    /// `exclude_image`; used when the evaluation split has too few.
    fn answer_related(&self, _answer: &[String], _exclude_image: &str) -> Vec<Vec<String>> {
        Vec::new()
    }
}

impl AnswerOracle for SceneIndex {
    fn is_correct(&self, image_id: &str, question: &[String], answer: &[String]) -> bool {
        let Some(scene) = self.get(image_id) else {
            return false;
        };
        match (oracle_answer(scene, question), answer) {
            (OracleAnswer::Answer(a), [b]) => &a == b,
            _ => false,
        }
    }

    fn answer_related(&self, answer: &[String], exclude_image: &str) -> Vec<Vec<String>> {
        let [answer] = answer else {
            return Vec::new();
        };
        let mut ids: Vec<&String> = self.0.keys().filter(|id| id.as_str() != exclude_image).collect();
        ids.sort();
        let queries = Query::all();
        let mut out = Vec::new();
        let mut seen = HashSet::new();
        for id in ids {
            let scene = &self.0[id];
            for q in &queries {
                if q.answer(scene).answer() == Some(answer.as_str()) {
                    let tokens = q.tokens();
                    if seen.insert(tokens.clone()) {
                        out.push(tokens);
                    }
                }
            }
        }
        out
    }
}

/// Corpus-side resources for pool construction.
pub struct PoolBuilder<'a> {
    /// Split the pairs come from; supplies GT, CT and RN.
    pub eval: &'a [QATriple],
    pub oracle: &'a dyn AnswerOracle,
    /// Word classes for single-word swaps.
    pub word_classes: Vec<Vec<String>>,
    pub seed: u64,
    by_image: BTreeMap<&'a str, Vec<&'a QATriple>>,
    pooled: BTreeMap<&'a str, Vec<f64>>,
    popular: HashMap<AnswerType, Vec<Vec<String>>>,
    popular_any: Vec<Vec<String>>,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Most frequent first; ties in token order.
fn by_popularity(counts: HashMap<&Vec<String>, usize>) -> Vec<Vec<String>> {
    let mut qs: Vec<(&Vec<String>, usize)> = counts.into_iter().collect();
    qs.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    qs.into_iter().map(|(q, _)| q.clone()).collect()
}

/// Per-pair rng seed from the global seed and the pair identity.
pub fn pair_seed(seed: u64, image_id: &str, answer: &[String]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(image_id.as_bytes());
    h.update([0u8]);
    h.update(answer.join(" ").as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

struct Draft<'o> {
    image_id: String,
    answer: Vec<String>,
    oracle: &'o dyn AnswerOracle,
    candidates: Vec<Candidate>,
    seen: HashSet<Vec<String>>,
}

impl Draft<'_> {
    /// Adds a distractor unless it duplicates a candidate or is correct.
    fn offer(&mut self, question: &[String], label: Label) -> bool {
        if question.is_empty()
            || self.seen.contains(question)
            || self.oracle.is_correct(&self.image_id, question, &self.answer)
        {
            return false;
        }
        self.seen.insert(question.to_vec());
        self.candidates.push(Candidate { question: question.to_vec(), label });
        true
    }

    fn fill<'q>(&mut self, pool: impl IntoIterator<Item = &'q Vec<String>>, label: Label, want: usize) -> usize {
        let mut added = 0;
        for q in pool {
            if added == want {
                break;
            }
            if self.offer(q, label) {
                added += 1;
            }
        }
        added
    }
}

impl<'a> PoolBuilder<'a> {
    pub fn new(eval: &'a [QATriple], train: &'a [QATriple], oracle: &'a dyn AnswerOracle, seed: u64) -> Self {
        let mut by_image: BTreeMap<&str, Vec<&QATriple>> = BTreeMap::new();
        for t in eval {
            by_image.entry(&t.image_id).or_default().push(t);
        }
        let pooled = by_image
            .iter()
            .map(|(id, ts)| (*id, ts[0].features.mean_pooled()))
            .collect();
        let mut freq: HashMap<AnswerType, HashMap<&Vec<String>, usize>> = HashMap::new();
        let mut freq_any: HashMap<&Vec<String>, usize> = HashMap::new();
        for t in train {
            *freq.entry(t.answer_type).or_default().entry(&t.question).or_insert(0) += 1;
            *freq_any.entry(&t.question).or_insert(0) += 1;
        }
        let popular = freq.into_iter().map(|(ty, counts)| (ty, by_popularity(counts))).collect();
        let popular_any = by_popularity(freq_any);
        PoolBuilder {
            eval,
            oracle,
            word_classes: lexicon::content_word_classes(),
            seed,
            by_image,
            pooled,
            popular,
            popular_any,
        }
    }

    /// `(image_id, answer)` pairs of the evaluation split in first-seen order,
    /// each with the index of its first triple.
    pub fn pairs(&self) -> Vec<usize> {
        let mut seen = HashSet::new();
        (0..self.eval.len())
            .filter(|&i| seen.insert((&self.eval[i].image_id, &self.eval[i].answer)))
            .collect()
    }

    /// Builds the pool for the pair of `target`.
    pub fn build(&self, target: &QATriple) -> Result<QuestionPool, EvalError> {
        let mut rng = ChaCha8Rng::seed_from_u64(pair_seed(self.seed, &target.image_id, &target.answer));
        let mut draft = Draft {
            image_id: target.image_id.clone(),
            answer: target.answer.clone(),
            oracle: self.oracle,
            candidates: Vec::new(),
            seen: HashSet::new(),
        };
        let same_image = self.by_image.get(target.image_id.as_str()).cloned().unwrap_or_default();

        let mut gt: Vec<&Vec<String>> = vec![&target.question];
        for t in &same_image {
            if t.answer == target.answer && !gt.contains(&&t.question) {
                gt.push(&t.question);
            }
        }
        gt.truncate(MAX_GT);
        for q in &gt {
            draft.seen.insert(q.to_vec());
            draft.candidates.push(Candidate { question: q.to_vec(), label: Label::GT });
        }
        let mut fallback = false;

        // CT: other answers, most similar images first (the image itself
        // has similarity one).
        let own = target.features.mean_pooled();
        let mut images: Vec<(&str, f64)> = self
            .pooled
            .iter()
            .map(|(id, p)| (*id, if *id == target.image_id { f64::INFINITY } else { cosine(&own, p) }))
            .collect();
        images.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let ct_pool: Vec<&Vec<String>> = images
            .iter()
            .flat_map(|(id, _)| self.by_image[id].iter())
            .filter(|t| t.answer != target.answer)
            .map(|t| &t.question)
            .collect();
        let ct_want = GT_PLUS_CT - gt.len();
        let mut short = ct_want - draft.fill(ct_pool, Label::CT, ct_want);

        // PS: one key word of a GT question replaced within its class;
        // swaps that still parse come first.
        let mut parseable = Vec::new();
        let mut other = Vec::new();
        for q in &gt {
            for (pos, word) in q.iter().enumerate() {
                for class in self.word_classes.iter().filter(|c| c.contains(word)) {
                    for alt in class.iter().filter(|a| *a != word) {
                        let mut swapped = q.to_vec();
                        swapped[pos] = alt.clone();
                        if Query::parse(&swapped).is_some() {
                            parseable.push(swapped);
                        } else {
                            other.push(swapped);
                        }
                    }
                }
            }
        }
        parseable.shuffle(&mut rng);
        other.shuffle(&mut rng);
        short += PER_DISTRACTOR - draft.fill(parseable.iter().chain(&other), Label::PS, PER_DISTRACTOR);

        // PP: most frequent training questions of the answer type, then of
        // any type.
        let empty = Vec::new();
        let pp_pool = self.popular.get(&target.answer_type).unwrap_or(&empty);
        let mut pp_want = PER_DISTRACTOR - draft.fill(pp_pool, Label::PP, PER_DISTRACTOR);
        if pp_want > 0 {
            fallback = true;
            pp_want -= draft.fill(&self.popular_any, Label::PP, pp_want);
        }
        short += pp_want;

        // RN: same answer, other images, uniformly at random; first from the
        // split, then from the oracle's other scenes. Last resort is any
        // incorrect question of the split.
        let mut rn_pool: Vec<Vec<String>> = self
            .eval
            .iter()
            .filter(|t| t.answer == target.answer && t.image_id != target.image_id)
            .map(|t| t.question.clone())
            .collect();
        rn_pool.sort();
        rn_pool.dedup();
        rn_pool.shuffle(&mut rng);
        let mut rn_want = PER_DISTRACTOR - draft.fill(&rn_pool, Label::RN, PER_DISTRACTOR);
        if rn_want > 0 {
            let mut extra = self.oracle.answer_related(&target.answer, &target.image_id);
            extra.shuffle(&mut rng);
            rn_want -= draft.fill(&extra, Label::RN, rn_want);
        }
        if rn_want > 0 {
            fallback = true;
            let mut any: Vec<Vec<String>> = self
                .eval
                .iter()
                .filter(|t| t.image_id != target.image_id)
                .map(|t| t.question.clone())
                .collect();
            any.sort();
            any.dedup();
            any.shuffle(&mut rng);
            rn_want -= draft.fill(&any, Label::RN, rn_want);
        }
        short += rn_want;
        if fallback {
            log::debug!(
                "pool {} / {}: category exhausted, used fallback questions",
                target.image_id,
                target.answer.join(" ")
            );
        }
        if draft.candidates.len() != POOL_SIZE {
            return Err(EvalError::Pool(format!(
                "{} / {}: only {} candidates ({} short)",
                target.image_id,
                target.answer.join(" "),
                draft.candidates.len(),
                short
            )));
        }
        Ok(QuestionPool {
            image_id: target.image_id.clone(),
            answer: target.answer.clone(),
            answer_type: target.answer_type,
            features: Some(target.features.clone()),
            candidates: draft.candidates,
            fallback,
        })
    }

    /// One pool per distinct pair of the evaluation split.
    pub fn build_all(&self) -> Result<Vec<QuestionPool>, EvalError> {
        self.pairs().into_iter().map(|i| self.build(&self.eval[i])).collect()
    }
}
