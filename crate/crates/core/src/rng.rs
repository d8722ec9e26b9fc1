//! Seeded generators. Every random draw in the crate goes through here so that
//! runs are reproducible from a single `u64`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Rng64 = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng64 {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for an independent sub-stream, e.g. a sweep cell or a restart.
/// splitmix64 finalizer over `master` and `index`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn normal(rng: &mut Rng64) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gaussian_vec(rng: &mut Rng64, n: usize, std: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| std * normal(rng))
}

/// Column-major fill, so the draw order is fixed by the shape alone.
pub fn gaussian_mat(rng: &mut Rng64, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std * normal(rng))
}

/// Uniform direction on the sphere in `R^n`. Falls back to `e_1` on a zero draw.
pub fn unit_vec(rng: &mut Rng64, n: usize) -> DVector<f64> {
    let g = gaussian_vec(rng, n, 1.0);
    let norm = g.norm();
    if norm > 0.0 {
        g / norm
    } else {
        let mut e = DVector::zeros(n);
        e[0] = 1.0;
        e
    }
}
