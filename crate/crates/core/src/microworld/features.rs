use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::lexicon::{COLORS, COLOR_OFFSET, CONCEPT_DIM, EMPTY_SLOT, FEATURE_DEPTH, SHAPES, SIZE_OFFSET};
use super::Scene;
use crate::textdata::FeatureBundle;

pub const DEFAULT_SIGMA: f64 = 0.1;

/// Noise-free one-hot block for one cell.
pub fn cell_block(cell: Option<&super::Object>) -> [f32; FEATURE_DEPTH] {
    let mut block = [0.0f32; FEATURE_DEPTH];
    match cell {
        None => block[EMPTY_SLOT] = 1.0,
        Some(o) => {
            block[o.shape] = 1.0;
            block[COLOR_OFFSET + o.color] = 1.0;
            block[SIZE_OFFSET + o.size] = 1.0;
        }
    }
    block
}

/// Local grid features with additive Gaussian noise, plus normalized
/// attribute-word frequencies as the global vector.
pub fn render_features(scene: &Scene, sigma: f64, seed: u64) -> FeatureBundle {
    let mut grid = Vec::with_capacity(scene.cells.len() * FEATURE_DEPTH);
    for cell in &scene.cells {
        grid.extend_from_slice(&cell_block(cell.as_ref()));
    }
    if sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
        for x in grid.iter_mut() {
            *x += normal.sample(&mut rng) as f32;
        }
    }
    let mut global = vec![0.0f64; CONCEPT_DIM];
    for o in scene.objects() {
        global[o.color] += 1.0;
        global[COLORS.len() + o.shape] += 1.0;
        global[COLORS.len() + SHAPES.len() + o.size] += 1.0;
    }
    let total: f64 = global.iter().sum();
    FeatureBundle {
        grid_shape: [scene.grid, scene.grid, FEATURE_DEPTH],
        grid,
        global: global.iter().map(|&x| (x / total) as f32).collect(),
    }
}
