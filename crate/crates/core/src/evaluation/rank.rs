use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{EvalError, Label, QuestionPool};
use crate::microworld::{conditional_question_prob, SceneIndex};
use crate::model::{Conditioning, Model};
use crate::numerics::Scalar;
use crate::textdata::QATriple;

/// Assigns one real score per pool candidate; higher ranks first.
pub trait Scorer {
    fn score_pool(&self, pool: &QuestionPool) -> Result<Vec<f64>, EvalError>;
}

/// Conditional log-likelihood of each candidate under a trained model.
pub struct ModelScorer<'m, T> {
    pub model: &'m Model<T>,
    pub normalize: bool,
}

impl<T: Scalar> Scorer for ModelScorer<'_, T> {
    fn score_pool(&self, pool: &QuestionPool) -> Result<Vec<f64>, EvalError> {
        let features = pool
            .features
            .as_ref()
            .ok_or_else(|| EvalError::Input(format!("pool {} has no features", pool.image_id)))?;
        let vocab = &self.model.vocab;
        let cond = Conditioning::<T>::new(features, vocab.encode(&pool.answer), pool.answer_type)?;
        let questions: Vec<Vec<usize>> = pool.candidates.iter().map(|c| vocab.encode(&c.question)).collect();
        Ok(self.model.score_questions(&cond, &questions, self.normalize)?)
    }
}

/// Question popularity alone: `ln(1 + n)` with `n` the training count.
pub struct PriorScorer {
    counts: HashMap<Vec<String>, usize>,
}

impl PriorScorer {
    pub fn new(train: &[QATriple]) -> Self {
        let mut counts = HashMap::new();
        for t in train {
            *counts.entry(t.question.clone()).or_insert(0) += 1;
        }
        PriorScorer { counts }
    }
}

impl Scorer for PriorScorer {
    fn score_pool(&self, pool: &QuestionPool) -> Result<Vec<f64>, EvalError> {
        Ok(pool
            .candidates
            .iter()
            .map(|c| (self.counts.get(&c.question).copied().unwrap_or(0) as f64).ln_1p())
            .collect())
    }
}

/// Exact generative probability p(q | scene, answer) of the micro-world.
pub struct OracleScorer<'a> {
    pub scenes: &'a SceneIndex,
}

impl Scorer for OracleScorer<'_> {
    fn score_pool(&self, pool: &QuestionPool) -> Result<Vec<f64>, EvalError> {
        let scene = self
            .scenes
            .get(&pool.image_id)
            .ok_or_else(|| EvalError::Input(format!("no scene for {}", pool.image_id)))?;
        let answer = pool.answer.join(" ");
        Ok(pool
            .candidates
            .iter()
            .map(|c| conditional_question_prob(scene, &answer, &c.question))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoolResult {
    /// Candidate indices, best first.
    pub order: Vec<usize>,
    pub winner: Label,
    pub top1: bool,
    pub top3: bool,
}

/// Sorts candidates by descending score. On equal scores distractors go
/// ahead of GT, then earlier candidates first.
pub fn rank_pool(pool: &QuestionPool, scores: &[f64]) -> Result<PoolResult, EvalError> {
    if scores.len() != pool.candidates.len() || scores.is_empty() {
        return Err(EvalError::Input(format!(
            "{} scores for {} candidates",
            scores.len(),
            pool.candidates.len()
        )));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NonFinite(format!("candidate {i} of pool {}", pool.image_id)));
    }
    let is_gt = |i: usize| pool.candidates[i].label == Label::GT;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| is_gt(a).cmp(&is_gt(b)))
            .then_with(|| a.cmp(&b))
    });
    Ok(PoolResult {
        winner: pool.candidates[order[0]].label,
        top1: is_gt(order[0]),
        top3: order.iter().take(3).any(|&i| is_gt(i)),
        order,
    })
}

/// Fraction of rank-1 picks per source label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    #[serde(rename = "GT")]
    pub gt: f64,
    #[serde(rename = "CT")]
    pub ct: f64,
    #[serde(rename = "PS")]
    pub ps: f64,
    #[serde(rename = "PP")]
    pub pp: f64,
    #[serde(rename = "RN")]
    pub rn: f64,
}

impl Breakdown {
    pub fn get(&self, label: Label) -> f64 {
        match label {
            Label::GT => self.gt,
            Label::CT => self.ct,
            Label::PS => self.ps,
            Label::PP => self.pp,
            Label::RN => self.rn,
        }
    }

    fn slot(&mut self, label: Label) -> &mut f64 {
        match label {
            Label::GT => &mut self.gt,
            Label::CT => &mut self.ct,
            Label::PS => &mut self.ps,
            Label::PP => &mut self.pp,
            Label::RN => &mut self.rn,
        }
    }

    pub fn total(&self) -> f64 {
        Label::ALL.iter().map(|&l| self.get(l)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    /// Percentages.
    pub acc1: f64,
    pub acc3: f64,
    pub breakdown: Breakdown,
    pub winners: Vec<Label>,
    pub n_pairs: usize,
}

impl RankReport {
    /// Distractor label that wins most often; ties go to the earlier label.
    pub fn dominant_error(&self) -> Option<Label> {
        let mut best: Option<(Label, f64)> = None;
        for label in &Label::ALL[1..] {
            let f = self.breakdown.get(*label);
            if f > 0.0 && best.is_none_or(|(_, b)| f > b) {
                best = Some((*label, f));
            }
        }
        best.map(|(l, _)| l)
    }
}

pub fn rank_report(results: &[PoolResult]) -> Result<RankReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Input("no pools to report on".into()));
    }
    let n = results.len() as f64;
    let mut breakdown = Breakdown::default();
    for r in results {
        *breakdown.slot(r.winner) += 1.0;
    }
    for label in Label::ALL {
        *breakdown.slot(label) /= n;
    }
    let pct = |k: usize| 100.0 * k as f64 / n;
    Ok(RankReport {
        acc1: pct(results.iter().filter(|r| r.top1).count()),
        acc3: pct(results.iter().filter(|r| r.top3).count()),
        breakdown,
        winners: results.iter().map(|r| r.winner).collect(),
        n_pairs: results.len(),
    })
}

pub fn score_pools(pools: &[QuestionPool], scorer: &dyn Scorer) -> Result<RankReport, EvalError> {
    let results = pools
        .iter()
        .map(|p| rank_pool(p, &scorer.score_pool(p)?))
        .collect::<Result<Vec<_>, _>>()?;
    rank_report(&results)
}

/// Combined ranking and linguistic report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc1: f64,
    pub acc3: f64,
    pub breakdown: Breakdown,
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
    pub n_pairs: usize,
}
