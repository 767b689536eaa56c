use std::collections::BTreeMap;

use super::ModelError;
use crate::textdata::{FeatureBundle, QATriple};

struct Entry {
    image_id: String,
    pooled: Vec<f64>,
    bag: BTreeMap<String, f64>,
    question: Vec<String>,
}

/// Nearest-neighbour baseline: returns the question of the training triple
/// closest in mean-pooled image features and answer bag-of-words.
pub struct NearestNeighbour {
    entries: Vec<Entry>,
}

fn bag_of_words(tokens: &[String]) -> BTreeMap<String, f64> {
    let mut bag = BTreeMap::new();
    for t in tokens {
        *bag.entry(t.clone()).or_insert(0.0) += 1.0;
    }
    bag
}

/// `1 - cos(a, b)`, taking a zero vector to be orthogonal to everything.
fn cosine_distance_dense(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

fn cosine_distance_sparse(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

impl NearestNeighbour {
    pub fn new(train: &[QATriple]) -> Result<Self, ModelError> {
        if train.is_empty() {
            return Err(ModelError::Input("nearest neighbour needs a training set".into()));
        }
        Ok(NearestNeighbour {
            entries: train
                .iter()
                .map(|t| Entry {
                    image_id: t.image_id.clone(),
                    pooled: t.features.mean_pooled(),
                    bag: bag_of_words(&t.answer),
                    question: t.question.clone(),
                })
                .collect(),
        })
    }

    /// Distances to every training triple, in training order.
    pub fn distances(&self, features: &FeatureBundle, answer: &[String]) -> Vec<f64> {
        let pooled = features.mean_pooled();
        let bag = bag_of_words(answer);
        self.entries
            .iter()
            .map(|e| 0.5 * cosine_distance_dense(&pooled, &e.pooled) + 0.5 * cosine_distance_sparse(&bag, &e.bag))
            .collect()
    }

    /// Index of the nearest training triple; ties go to the smallest image id,
    /// then to the earliest triple.
    pub fn nearest(&self, features: &FeatureBundle, answer: &[String]) -> usize {
        let d = self.distances(features, answer);
        (0..self.entries.len())
            .min_by(|&i, &j| {
                d[i].total_cmp(&d[j])
                    .then_with(|| self.entries[i].image_id.cmp(&self.entries[j].image_id))
                    .then(i.cmp(&j))
            })
            .expect("training set is nonempty")
    }

    pub fn predict(&self, features: &FeatureBundle, answer: &[String]) -> &[String] {
        &self.entries[self.nearest(features, answer)].question
    }
}
