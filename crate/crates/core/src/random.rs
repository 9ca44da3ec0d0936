//! Seeded random grid functions.
//!
//! Every generator here is `ChaCha8Rng` seeded with `seed_from_u64`, drawing
//! uniform `f64` values in flat-index order. The stream is part of the
//! reproducibility contract and is pinned by golden tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{CellField, FaceField};
use crate::grid::Grid;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[lo, hi)`.
pub fn random_field(grid: Grid, seed: u64, lo: f64, hi: f64) -> CellField {
    let mut r = rng(seed);
    let values = (0..grid.len()).map(|_| lo + (hi - lo) * r.gen::<f64>()).collect();
    CellField::from_values(grid, values).expect("length matches grid")
}

/// Uniform values in `[-1, 1)` on every face component.
pub fn random_face(grid: Grid, seed: u64) -> FaceField {
    let mut r = rng(seed);
    let comps = (0..grid.dim())
        .map(|_| (0..grid.len()).map(|_| 2.0 * r.gen::<f64>() - 1.0).collect())
        .collect();
    FaceField::from_components(grid, comps).expect("shapes match grid")
}

/// Uniform values in `[-1, 1)` with the mean removed.
pub fn random_mean_zero(grid: Grid, seed: u64) -> CellField {
    random_field(grid, seed, -1.0, 1.0).minus_mean()
}
