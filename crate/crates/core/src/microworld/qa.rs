//! Template question grammar, exact answering oracle and the generative
//! question distribution of a scene.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::lexicon::{color_index, shape_index, size_index, COLORS, SHAPES, SIZES};
use super::{Object, Scene};
use crate::textdata::{answer_type_of, AnswerType, TypingProfile};

/// A parsed question. `size` is an optional size modifier on the referent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Query {
    ColorOf {
        size: Option<usize>,
        shape: usize,
    },
    ShapeOf {
        size: Option<usize>,
        color: usize,
    },
    CountColor {
        size: Option<usize>,
        color: usize,
    },
    CountShape {
        size: Option<usize>,
        shape: usize,
    },
    Exists {
        size: Option<usize>,
        color: usize,
        shape: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Color,
    Shape,
    Count,
    Exists,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OracleAnswer {
    Answer(String),
    /// Parses, but the referent is not unique in the scene.
    IllPosed,
    /// Does not parse against the template grammar.
    Unparseable,
}

impl OracleAnswer {
    pub fn answer(&self) -> Option<&str> {
        match self {
            OracleAnswer::Answer(a) => Some(a),
            _ => None,
        }
    }
}

fn with_size<'a>(rest: &[&'a str]) -> Option<(Option<usize>, &'a str)> {
    match rest {
        [w] => Some((None, w)),
        [s, w] => Some((Some(size_index(s)?), w)),
        _ => None,
    }
}

fn sized(size: Option<usize>, word: &'static str) -> Vec<&'static str> {
    size.map(|s| SIZES[s]).into_iter().chain([word]).collect()
}

impl Query {
    pub fn family(&self) -> Family {
        match self {
            Query::ColorOf { .. } => Family::Color,
            Query::ShapeOf { .. } => Family::Shape,
            Query::CountColor { .. } | Query::CountShape { .. } => Family::Count,
            Query::Exists { .. } => Family::Exists,
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        let mut t: Vec<&str> = Vec::new();
        match *self {
            Query::ColorOf { size, shape } => {
                t.extend(["what", "color", "is", "the"]);
                t.extend(sized(size, SHAPES[shape]));
            }
            Query::ShapeOf { size, color } => {
                t.extend(["what", "shape", "is", "the"]);
                t.extend(sized(size, COLORS[color]));
                t.push("object");
            }
            Query::CountColor { size, color } => {
                t.extend(["how", "many"]);
                t.extend(sized(size, COLORS[color]));
                t.extend(["objects", "are", "there"]);
            }
            Query::CountShape { size, shape } => {
                t.extend(["how", "many"]);
                t.extend(sized(size, SHAPES[shape]));
                t.extend(["objects", "are", "there"]);
            }
            Query::Exists { size, color, shape } => {
                t.extend(["is", "there", "a"]);
                t.extend(size.map(|s| SIZES[s]));
                t.extend([COLORS[color], SHAPES[shape]]);
            }
        }
        t.push("?");
        t.into_iter().map(str::to_string).collect()
    }

    pub fn parse<S: AsRef<str>>(tokens: &[S]) -> Option<Query> {
        let t: Vec<&str> = tokens.iter().map(|s| s.as_ref()).collect();
        match t.as_slice() {
            ["what", "color", "is", "the", rest @ .., "?"] => {
                let (size, w) = with_size(rest)?;
                Some(Query::ColorOf { size, shape: shape_index(w)? })
            }
            ["what", "shape", "is", "the", rest @ .., "object", "?"] => {
                let (size, w) = with_size(rest)?;
                Some(Query::ShapeOf { size, color: color_index(w)? })
            }
            ["how", "many", rest @ .., "objects", "are", "there", "?"] => {
                let (size, w) = with_size(rest)?;
                if let Some(color) = color_index(w) {
                    Some(Query::CountColor { size, color })
                } else {
                    Some(Query::CountShape { size, shape: shape_index(w)? })
                }
            }
            ["is", "there", "a", rest @ .., "?"] => {
                let (size, color, shape) = match rest {
                    [c, s] => (None, *c, *s),
                    [z, c, s] => (Some(size_index(z)?), *c, *s),
                    _ => return None,
                };
                Some(Query::Exists { size, color: color_index(color)?, shape: shape_index(shape)? })
            }
            _ => None,
        }
    }

    /// Every question the grammar can produce, in a fixed order.
    pub fn all() -> Vec<Query> {
        let sizes = || std::iter::once(None).chain((0..SIZES.len()).map(Some));
        let mut out = Vec::new();
        for size in sizes() {
            out.extend((0..SHAPES.len()).map(|shape| Query::ColorOf { size, shape }));
        }
        for size in sizes() {
            out.extend((0..COLORS.len()).map(|color| Query::ShapeOf { size, color }));
        }
        for size in sizes() {
            out.extend((0..COLORS.len()).map(|color| Query::CountColor { size, color }));
            out.extend((0..SHAPES.len()).map(|shape| Query::CountShape { size, shape }));
        }
        for size in sizes() {
            for color in 0..COLORS.len() {
                out.extend((0..SHAPES.len()).map(|shape| Query::Exists { size, color, shape }));
            }
        }
        out
    }

    pub fn answer(&self, scene: &Scene) -> OracleAnswer {
        let size_ok = |o: &Object, size: Option<usize>| size.is_none_or(|s| o.size == s);
        let unique = |pred: &dyn Fn(&Object) -> bool| -> Option<Object> {
            let mut it = scene.objects().filter(|o| pred(o));
            match (it.next(), it.next()) {
                (Some(o), None) => Some(*o),
                _ => None,
            }
        };
        match *self {
            Query::ColorOf { size, shape, .. } => {
                match unique(&|o| o.shape == shape && size_ok(o, size)) {
                    Some(o) => OracleAnswer::Answer(COLORS[o.color].to_string()),
                    None => OracleAnswer::IllPosed,
                }
            }
            Query::ShapeOf { size, color, .. } => {
                match unique(&|o| o.color == color && size_ok(o, size)) {
                    Some(o) => OracleAnswer::Answer(SHAPES[o.shape].to_string()),
                    None => OracleAnswer::IllPosed,
                }
            }
            Query::CountColor { size, color } => OracleAnswer::Answer(
                scene
                    .objects()
                    .filter(|o| o.color == color && size_ok(o, size))
                    .count()
                    .to_string(),
            ),
            Query::CountShape { size, shape } => OracleAnswer::Answer(
                scene
                    .objects()
                    .filter(|o| o.shape == shape && size_ok(o, size))
                    .count()
                    .to_string(),
            ),
            Query::Exists { size, color, shape } => {
                let any = scene
                    .objects()
                    .any(|o| o.color == color && o.shape == shape && size_ok(o, size));
                OracleAnswer::Answer(if any { "yes" } else { "no" }.to_string())
            }
        }
    }
}

/// Exact answer to a tokenized question about `scene`.
pub fn oracle_answer<S: AsRef<str>>(scene: &Scene, question: &[S]) -> OracleAnswer {
    match Query::parse(question) {
        Some(q) => q.answer(scene),
        None => OracleAnswer::Unparseable,
    }
}

/// A question the generator would ask of a scene, with its answer and
/// probability under the generative process.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedQuestion {
    pub query: Query,
    pub answer: String,
    pub prob: f64,
}

/// The generator's distribution over questions for a scene.
///
/// A family is drawn uniformly among the families with at least one askable
/// question, then a question uniformly within it. Color and shape questions
/// are askable when their referent is unique, count questions when the count
/// is positive. Existence questions first pick "yes" or "no" with equal
/// probability (when both occur), then a question with that answer.
pub fn question_distribution(scene: &Scene) -> Vec<WeightedQuestion> {
    let mut by_family: BTreeMap<(Family, bool), Vec<(Query, String)>> = BTreeMap::new();
    for q in Query::all() {
        let Some(ans) = q.answer(scene).answer().map(str::to_string) else {
            continue;
        };
        let family = q.family();
        if family == Family::Count && ans == "0" {
            continue;
        }
        let key = (family, family == Family::Exists && ans == "yes");
        by_family.entry(key).or_default().push((q, ans));
    }
    let families: Vec<Family> = {
        let mut f: Vec<Family> = by_family.keys().map(|k| k.0).collect();
        f.dedup();
        f
    };
    let family_weight = 1.0 / families.len() as f64;
    let mut out = Vec::new();
    for ((family, _), qs) in &by_family {
        let branches = by_family.keys().filter(|k| k.0 == *family).count() as f64;
        let w = family_weight / branches / qs.len() as f64;
        out.extend(qs.iter().map(|(q, a)| WeightedQuestion {
            query: *q,
            answer: a.clone(),
            prob: w,
        }));
    }
    out
}

/// `p(question | scene, answer)` under the generative process; zero for
/// anything the generator would not ask with that answer.
pub fn conditional_question_prob<S: AsRef<str>>(scene: &Scene, answer: &str, question: &[S]) -> f64 {
    let Some(query) = Query::parse(question) else {
        return 0.0;
    };
    let dist = question_distribution(scene);
    let total: f64 = dist.iter().filter(|w| w.answer == answer).map(|w| w.prob).sum();
    if total == 0.0 {
        return 0.0;
    }
    dist.iter()
        .find(|w| w.query == query && w.answer == answer)
        .map_or(0.0, |w| w.prob / total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedQa {
    pub question: Vec<String>,
    pub answer: Vec<String>,
    pub answer_type: AnswerType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeedsResample;

pub const MAX_SHARED_ANSWER: usize = 3;

/// Samples `count` distinct questions (at least 3) from the generative
/// distribution. No answer is used more than three times, and when the scene
/// allows it at least two questions share an answer.
pub fn generate_qa(scene: &Scene, seed: u64, count: usize) -> Result<Vec<GeneratedQa>, NeedsResample> {
    let count = count.max(3);
    let dist = question_distribution(scene);
    if dist.len() < 3 {
        return Err(NeedsResample);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = Vec::new();
    let uses = |picked: &[usize], ans: &str| picked.iter().filter(|&&i| dist[i].answer == ans).count();

    while picked.len() < count {
        let shares_needed = picked.len() + 1 == count
            && !has_shared_answer(&dist, &picked)
            && dist.iter().enumerate().any(|(i, w)| {
                !picked.contains(&i) && picked.iter().any(|&j| dist[j].answer == w.answer)
            });
        // One pick before the end, keep an answer open that a later pick can
        // repeat.
        let partner = |i: usize| {
            (0..dist.len()).any(|j| j != i && !picked.contains(&j) && dist[j].answer == dist[i].answer)
        };
        let prepare_share = picked.len() + 2 == count
            && !has_shared_answer(&dist, &picked)
            && (0..dist.len()).any(|i| !picked.contains(&i) && partner(i));
        let eligible: Vec<usize> = (0..dist.len())
            .filter(|i| !picked.contains(i))
            .filter(|&i| uses(&picked, &dist[i].answer) < MAX_SHARED_ANSWER)
            .filter(|&i| !shares_needed || picked.iter().any(|&j| dist[j].answer == dist[i].answer))
            .filter(|&i| !prepare_share || partner(i))
            .collect();
        if eligible.is_empty() {
            break;
        }
        let total: f64 = eligible.iter().map(|&i| dist[i].prob).sum();
        let mut r = rng.random::<f64>() * total;
        let mut choice = *eligible.last().unwrap();
        for &i in &eligible {
            r -= dist[i].prob;
            if r < 0.0 {
                choice = i;
                break;
            }
        }
        picked.push(choice);
    }
    if picked.len() < 3 {
        return Err(NeedsResample);
    }
    Ok(picked
        .into_iter()
        .map(|i| {
            let answer = vec![dist[i].answer.clone()];
            GeneratedQa {
                question: dist[i].query.tokens(),
                answer_type: answer_type_of(&answer, TypingProfile::MicroWorld),
                answer,
            }
        })
        .collect())
}

fn has_shared_answer(dist: &[WeightedQuestion], picked: &[usize]) -> bool {
    picked
        .iter()
        .enumerate()
        .any(|(k, &i)| picked[..k].iter().any(|&j| dist[j].answer == dist[i].answer))
}
