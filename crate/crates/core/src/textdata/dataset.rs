use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{is_numeral, tokenize, DataError, Vocabulary};
use crate::microworld::lexicon;

/// Coarse answer category. VQA granularity is yes/no, number, other; the
/// micro-world profile adds color and shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AnswerType {
    #[serde(rename = "yes/no")]
    YesNo,
    #[serde(rename = "number")]
    Number,
    #[serde(rename = "color")]
    Color,
    #[serde(rename = "shape")]
    Shape,
    #[serde(rename = "other")]
    Other,
}

impl AnswerType {
    pub const ALL: [AnswerType; 5] = [
        AnswerType::YesNo,
        AnswerType::Number,
        AnswerType::Color,
        AnswerType::Shape,
        AnswerType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnswerType::YesNo => "yes/no",
            AnswerType::Number => "number",
            AnswerType::Color => "color",
            AnswerType::Shape => "shape",
            AnswerType::Other => "other",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AnswerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AnswerType {
    type Err = DataError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        AnswerType::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| DataError::UnknownAnswerType(s.to_string()))
    }
}

/// Which extra answer categories are recognized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TypingProfile {
    Vqa,
    MicroWorld,
}

pub fn answer_type_of<S: AsRef<str>>(answer: &[S], profile: TypingProfile) -> AnswerType {
    let toks: Vec<&str> = answer.iter().map(|s| s.as_ref()).collect();
    match toks.as_slice() {
        ["yes"] | ["no"] => AnswerType::YesNo,
        t if !t.is_empty() && t.iter().all(|w| is_numeral(w)) => AnswerType::Number,
        [w] if profile == TypingProfile::MicroWorld && lexicon::COLORS.contains(w) => {
            AnswerType::Color
        }
        [w] if profile == TypingProfile::MicroWorld && lexicon::SHAPES.contains(w) => {
            AnswerType::Shape
        }
        _ => AnswerType::Other,
    }
}

/// Precomputed image features: a `G x G x D` local grid and a global vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBundle {
    pub grid_shape: [usize; 3],
    pub grid: Vec<f32>,
    pub global: Vec<f32>,
}

impl FeatureBundle {
    pub fn validate(&self) -> Result<(), DataError> {
        let [g1, g2, d] = self.grid_shape;
        if g1 == 0 || g2 == 0 || d == 0 || g1 * g2 * d != self.grid.len() {
            return Err(DataError::FeatureShape(format!(
                "grid_shape {:?} vs {} values",
                self.grid_shape,
                self.grid.len()
            )));
        }
        if self.global.is_empty() {
            return Err(DataError::FeatureShape("empty global vector".into()));
        }
        if !self.grid.iter().chain(&self.global).all(|x| x.is_finite()) {
            return Err(DataError::FeatureShape("non-finite feature".into()));
        }
        Ok(())
    }

    pub fn locations(&self) -> usize {
        self.grid_shape[0] * self.grid_shape[1]
    }

    pub fn depth(&self) -> usize {
        self.grid_shape[2]
    }

    pub fn cell(&self, loc: usize) -> &[f32] {
        let d = self.depth();
        &self.grid[loc * d..(loc + 1) * d]
    }

    /// Grid averaged over locations.
    pub fn mean_pooled(&self) -> Vec<f64> {
        let d = self.depth();
        let n = self.locations() as f64;
        let mut out = vec![0.0; d];
        for cell in self.grid.chunks(d) {
            for (o, &x) in out.iter_mut().zip(cell) {
                *o += x as f64;
            }
        }
        out.iter_mut().for_each(|x| *x /= n);
        out
    }
}

/// One dataset record with text in token form.
#[derive(Clone, Debug, PartialEq)]
pub struct QATriple {
    pub image_id: String,
    pub features: FeatureBundle,
    pub question: Vec<String>,
    pub answer: Vec<String>,
    pub answer_type: AnswerType,
}

impl QATriple {
    pub fn question_ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        vocab.encode(&self.question)
    }

    pub fn answer_ids(&self, vocab: &Vocabulary) -> Vec<usize> {
        vocab.encode(&self.answer)
    }

    /// Checks lengths against `max_len` (which counts bos and eos) and the
    /// answer type against `profile`.
    pub fn validate(&self, max_len: usize, profile: TypingProfile) -> Result<(), DataError> {
        if self.question.is_empty() || self.question.len() + 2 > max_len {
            return Err(DataError::Invalid(format!(
                "{}: question length {} outside 1..={}",
                self.image_id,
                self.question.len(),
                max_len.saturating_sub(2)
            )));
        }
        if self.answer.is_empty() {
            return Err(DataError::Invalid(format!("{}: empty answer", self.image_id)));
        }
        let expected = answer_type_of(&self.answer, profile);
        if expected != self.answer_type {
            return Err(DataError::Invalid(format!(
                "{}: answer type {} but typing rule gives {}",
                self.image_id, self.answer_type, expected
            )));
        }
        self.features.validate()
    }
}

#[derive(Serialize, Deserialize)]
struct Line {
    image_id: String,
    question: String,
    answer: String,
    answer_type: String,
    features: FeatureBundle,
}

fn parse_line(raw: &str) -> Result<QATriple, String> {
    let line: Line = serde_json::from_str(raw).map_err(|e| e.to_string())?;
    line.features.validate().map_err(|e| e.to_string())?;
    let answer_type = line.answer_type.parse::<AnswerType>().map_err(|e| e.to_string())?;
    Ok(QATriple {
        image_id: line.image_id,
        features: line.features,
        question: tokenize(&line.question),
        answer: tokenize(&line.answer),
        answer_type,
    })
}

pub fn load_dataset(path: &Path) -> Result<Vec<QATriple>, DataError> {
    let reader = BufReader::new(File::open(path).map_err(|e| DataError::io(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DataError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let triple = parse_line(&line).map_err(|message| DataError::Malformed {
            line: i + 1,
            message,
        })?;
        out.push(triple);
    }
    Ok(out)
}

pub fn triple_to_json(t: &QATriple) -> String {
    let line = Line {
        image_id: t.image_id.clone(),
        question: t.question.join(" "),
        answer: t.answer.join(" "),
        answer_type: t.answer_type.as_str().to_string(),
        features: t.features.clone(),
    };
    serde_json::to_string(&line).expect("dataset line serializes")
}

pub fn save_dataset(triples: &[QATriple], path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| DataError::io(path, e))?);
    for t in triples {
        writeln!(w, "{}", triple_to_json(t)).map_err(|e| DataError::io(path, e))?;
    }
    w.flush().map_err(|e| DataError::io(path, e))
}

/// Vocabulary over every question and answer token of `triples`.
pub fn build_vocabulary(triples: &[QATriple], min_freq: usize) -> Vocabulary {
    Vocabulary::build(
        triples
            .iter()
            .flat_map(|t| [t.question.as_slice(), t.answer.as_slice()]),
        min_freq,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bundle() -> FeatureBundle {
        FeatureBundle {
            grid_shape: [2, 2, 3],
            grid: (0..12).map(|i| i as f32 * 0.25).collect(),
            global: vec![0.5, 0.5],
        }
    }

    fn triple(i: usize) -> QATriple {
        QATriple {
            image_id: format!("img{i:03}"),
            features: bundle(),
            question: tokenize(&format!("how many red objects are there ? {i}")),
            answer: vec![(i % 7).to_string()],
            answer_type: AnswerType::Number,
        }
    }

    #[test]
    fn typing_rule() {
        use AnswerType::*;
        let p = TypingProfile::MicroWorld;
        assert_eq!(answer_type_of(&["yes"], p), YesNo);
        assert_eq!(answer_type_of(&["3"], p), Number);
        assert_eq!(answer_type_of(&["pink"], p), Color);
        assert_eq!(answer_type_of(&["pink"], TypingProfile::Vqa), Other);
        assert_eq!(answer_type_of(&["cube"], p), Shape);
        assert_eq!(answer_type_of(&["teddy", "bear"], p), Other);
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let triples: Vec<QATriple> = (0..100)
            .map(|i| QATriple {
                question: tokenize("what color is the large ball ?"),
                ..triple(i)
            })
            .collect();
        save_dataset(&triples, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), triples);
    }

    #[test]
    fn missing_field_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let good = triple_to_json(&triple(1));
        let bad = good.replace("\"answer\":\"1\",", "");
        std::fs::write(&path, format!("{good}\n{good}\n{bad}\n")).unwrap();
        match load_dataset(&path) {
            Err(DataError::Malformed { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("answer"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn feature_extent_mismatch_rejected() {
        let mut t = triple(1);
        t.features.grid.pop();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        std::fs::write(&path, triple_to_json(&t)).unwrap();
        assert!(matches!(load_dataset(&path), Err(DataError::Malformed { line: 1, .. })));
    }

    #[test]
    fn unknown_answer_type_rejected() {
        let raw = triple_to_json(&triple(2)).replace("\"number\"", "\"weather\"");
        assert!(parse_line(&raw).unwrap_err().contains("weather"));
    }

    #[test]
    fn any_grid_extent_is_accepted() {
        let f = FeatureBundle {
            grid_shape: [14, 14, 4],
            grid: vec![0.1; 14 * 14 * 4],
            global: vec![0.0; 1000],
        };
        assert!(f.validate().is_ok());
        assert_eq!(f.mean_pooled().len(), 4);
    }

    #[test]
    fn validate_checks_lengths_and_type() {
        let t = QATriple {
            question: tokenize("what color is the ball ?"),
            answer: vec!["red".into()],
            answer_type: AnswerType::Color,
            ..triple(0)
        };
        assert!(t.validate(20, TypingProfile::MicroWorld).is_ok());
        assert!(t.validate(7, TypingProfile::MicroWorld).is_err());
        assert!(t.validate(20, TypingProfile::Vqa).is_err());
    }
}
