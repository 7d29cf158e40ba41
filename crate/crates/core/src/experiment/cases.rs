//! The models used throughout the numerical study.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg;
use crate::model::ArModel;

/// `A = [[0.7, 0.4], [0.2, 0.6]]`, `R = [[1, 0.5], [0.5, 1]]`.
pub fn case1() -> ArModel {
    ArModel::first_order(
        DMatrix::from_row_slice(2, 2, &[0.7, 0.4, 0.2, 0.6]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
    )
}

/// Spectral norm of the random `A` in [`case2`].
pub const CASE2_NORM: f64 = 0.8;

/// A 10×10 Gaussian random `A` rescaled to spectral norm [`CASE2_NORM`], `R = I`.
pub fn case2(seed: u64) -> ArModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(10, 10, |_, _| StandardNormal.sample(&mut rng));
    let a = &raw * (CASE2_NORM / linalg::spectral_norm(&raw));
    ArModel::first_order(a, DMatrix::identity(10, 10))
}

/// AR(2): `A1 = [[0.4, 0.3], [0.2, 0.1]]`, `A2 = [[0.3, 0.2], [0.1, 0.2]]`, `R = I`.
pub fn case3() -> ArModel {
    ArModel::new(
        vec![
            DMatrix::from_row_slice(2, 2, &[0.4, 0.3, 0.2, 0.1]),
            DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.1, 0.2]),
        ],
        DMatrix::identity(2, 2),
    )
}
