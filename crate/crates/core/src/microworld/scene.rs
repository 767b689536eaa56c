use std::fmt::Write as _;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lexicon::{COLORS, SHAPES, SIZES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub shape: usize,
    pub color: usize,
    pub size: usize,
}

impl Object {
    pub fn describe(&self) -> String {
        format!("{} {} {}", SIZES[self.size], COLORS[self.color], SHAPES[self.shape])
    }
}

/// Square grid of cells, each empty or holding one object.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub grid: usize,
    pub cells: Vec<Option<Object>>,
}

pub const DEFAULT_GRID: usize = 4;

impl Scene {
    pub fn objects(&self) -> impl Iterator<Item = &Object> {
        self.cells.iter().flatten()
    }

    pub fn object_count(&self) -> usize {
        self.objects().count()
    }

    pub fn is_valid(&self) -> bool {
        self.grid > 0
            && self.cells.len() == self.grid * self.grid
            && self.object_count() >= 1
            && self.objects().all(|o| {
                o.shape < SHAPES.len() && o.color < COLORS.len() && o.size < SIZES.len()
            })
    }

    /// Plain-text rendering for annotators, one grid row per line.
    pub fn ascii(&self) -> String {
        let width = 22;
        let mut out = String::new();
        let border = format!("+{}+\n", vec!["-".repeat(width); self.grid].join("+"));
        out.push_str(&border);
        for row in self.cells.chunks(self.grid) {
            out.push('|');
            for cell in row {
                let label = cell.map(|o| o.describe()).unwrap_or_default();
                let _ = write!(out, "{label:^width$}|");
            }
            out.push('\n');
            out.push_str(&border);
        }
        out
    }
}

/// Random scene: object count uniform on `[1, grid²/2]`, distinct cells,
/// uniform attributes.
pub fn generate_scene(seed: u64, grid: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_cells = grid * grid;
    let max_objects = (n_cells / 2).max(1);
    let count = rng.random_range(1..=max_objects);
    let mut cells = vec![None; n_cells];
    let mut chosen = sample(&mut rng, n_cells, count).into_vec();
    chosen.sort_unstable();
    for cell in chosen {
        cells[cell] = Some(Object {
            shape: rng.random_range(0..SHAPES.len()),
            color: rng.random_range(0..COLORS.len()),
            size: rng.random_range(0..SIZES.len()),
        });
    }
    Scene { grid, cells }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_bounded() {
        assert_eq!(generate_scene(5, 4), generate_scene(5, 4));
        for seed in 0..500 {
            let s = generate_scene(seed, 4);
            assert!(s.is_valid());
            assert!((1..=8).contains(&s.object_count()));
        }
    }

    /// Each color should appear with frequency 1/6 within 3 binomial sigmas.
    #[test]
    fn color_frequencies_are_uniform() {
        let mut counts = [0usize; 6];
        let mut total = 0usize;
        for seed in 0..10_000 {
            for o in generate_scene(seed, 4).objects() {
                counts[o.color] += 1;
                total += 1;
            }
        }
        let p = 1.0 / 6.0;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - total as f64 * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn ascii_has_one_line_per_row() {
        let s = generate_scene(3, 4);
        let text = s.ascii();
        assert_eq!(text.lines().count(), 9);
        for o in s.objects() {
            assert!(text.contains(&o.describe()));
        }
    }
}
