//! Whole-dataset emission: scenes, features and QA pairs split into
//! train/val/test, plus a scene index so the oracle can be consulted later.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{generate_qa, generate_scene, render_features, Scene, DEFAULT_GRID, DEFAULT_SIGMA};
use crate::textdata::{save_dataset, DataError, QATriple};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub grid: usize,
    pub sigma: f64,
    pub qa_per_scene: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            grid: DEFAULT_GRID,
            sigma: DEFAULT_SIGMA,
            qa_per_scene: 4,
        }
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WorldSplit {
    pub scenes: Vec<(String, Scene)>,
    pub triples: Vec<QATriple>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldData {
    pub train: WorldSplit,
    pub val: WorldSplit,
    pub test: WorldSplit,
}

impl WorldData {
    pub fn splits(&self) -> [&WorldSplit; 3] {
        [&self.train, &self.val, &self.test]
    }

    pub fn scene_index(&self) -> SceneIndex {
        SceneIndex(
            self.splits()
                .iter()
                .flat_map(|s| s.scenes.iter().cloned())
                .collect(),
        )
    }
}

/// Scene lookup by image id.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SceneIndex(pub HashMap<String, Scene>);

#[derive(Serialize, Deserialize)]
struct SceneLine {
    image_id: String,
    split: String,
    scene: Scene,
}

impl SceneIndex {
    pub fn get(&self, image_id: &str) -> Option<&Scene> {
        self.0.get(image_id)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let reader = BufReader::new(File::open(path).map_err(|e| DataError::io(path, e))?);
        let mut map = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| DataError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: SceneLine = serde_json::from_str(&line).map_err(|e| DataError::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            if !rec.scene.is_valid() {
                return Err(DataError::Malformed {
                    line: i + 1,
                    message: format!("invalid scene {}", rec.image_id),
                });
            }
            map.insert(rec.image_id, rec.scene);
        }
        Ok(SceneIndex(map))
    }
}

/// Splits `n` into counts for the given fractions; the last split takes the
/// rounding remainder.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3], DataError> {
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0)
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(DataError::Invalid(format!(
            "split fractions {fractions:?} must be non-negative and sum to 1"
        )));
    }
    let train = ((n as f64) * fractions[0]).round() as usize;
    let val = (((n as f64) * fractions[1]).round() as usize).min(n - train.min(n));
    let train = train.min(n);
    Ok([train, val, n - train - val])
}

/// Generates `n_scenes` scenes with their features and QA pairs.
/// Scenes that admit too few questions are redrawn.
pub fn generate_dataset(
    n_scenes: usize,
    fractions: [f64; 3],
    seed: u64,
    config: &WorldConfig,
) -> Result<WorldData, DataError> {
    if config.grid == 0 || !(config.sigma >= 0.0) || config.qa_per_scene < 3 {
        return Err(DataError::Invalid(format!("bad world config {config:?}")));
    }
    let counts = split_counts(n_scenes, fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut splits: [WorldSplit; 3] = Default::default();
    let mut index = 0usize;
    for (split, &count) in splits.iter_mut().zip(&counts) {
        for _ in 0..count {
            let image_id = format!("mw{index:06}");
            index += 1;
            let (scene, qa) = loop {
                let scene = generate_scene(rng.random(), config.grid);
                if let Ok(qa) = generate_qa(&scene, rng.random(), config.qa_per_scene) {
                    break (scene, qa);
                }
            };
            let features = render_features(&scene, config.sigma, rng.random());
            split.triples.extend(qa.into_iter().map(|q| QATriple {
                image_id: image_id.clone(),
                features: features.clone(),
                question: q.question,
                answer: q.answer,
                answer_type: q.answer_type,
            }));
            split.scenes.push((image_id, scene));
        }
    }
    let [train, val, test] = splits;
    Ok(WorldData { train, val, test })
}

/// Writes `train.jsonl`, `val.jsonl`, `test.jsonl` and `scenes.jsonl` into
/// `dir`, returning the written paths.
pub fn write_dataset(data: &WorldData, dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut written = Vec::new();
    for (name, split) in SPLIT_NAMES.iter().zip(data.splits()) {
        let path = dir.join(format!("{name}.jsonl"));
        save_dataset(&split.triples, &path)?;
        written.push(path);
    }
    let path = dir.join("scenes.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| DataError::io(&path, e))?);
    for (name, split) in SPLIT_NAMES.iter().zip(data.splits()) {
        for (image_id, scene) in &split.scenes {
            let line = SceneLine {
                image_id: image_id.clone(),
                split: name.to_string(),
                scene: scene.clone(),
            };
            let text = serde_json::to_string(&line).expect("scene serializes");
            writeln!(w, "{text}").map_err(|e| DataError::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| DataError::io(&path, e))?;
    written.push(path);
    Ok(written)
}
