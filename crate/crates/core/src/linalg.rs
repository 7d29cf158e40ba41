//! Small dense helpers shared by the filter, detectors and solvers.
//!
//! Everything here works on `nalgebra` dynamic matrices. The operands in
//! this crate are tiny (K is rarely above 10), so the per-step hot paths use
//! the slice kernels at the bottom instead of allocating temporaries.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// `(X + Xᵀ) / 2`.
pub fn symmetrize(x: &DMatrix<f64>) -> DMatrix<f64> {
    (x + x.transpose()) * 0.5
}

/// Cholesky factor of the symmetrized input.
pub fn cholesky(x: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(what));
    }
    Cholesky::new(symmetrize(x)).ok_or(Error::NotPositiveDefinite(what))
}

/// Inverse of an SPD matrix, symmetrized.
pub fn spd_inverse(x: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(x, what)?.inverse()))
}

pub fn frobenius(x: &DMatrix<f64>) -> f64 {
    x.norm()
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(x: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = symmetrize(x).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Largest singular value.
pub fn spectral_norm(x: &DMatrix<f64>) -> f64 {
    x.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Largest eigenvalue modulus of a general real square matrix.
pub fn spectral_radius(x: &DMatrix<f64>) -> f64 {
    x.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Multivariate normal log-density `log N(x; mean, cov)`.
pub fn gaussian_log_density(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(cov, "gaussian covariance")?;
    let k = x.len() as f64;
    let diff = x - mean;
    let z = chol.l().solve_lower_triangular(&diff).expect("cholesky factor is invertible");
    Ok(-0.5 * (k * LN_2PI + chol.ln_determinant() + z.norm_squared()))
}

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// `out = m x` for a column-major square or rectangular `m`.
#[inline]
pub fn matvec_into(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    debug_assert_eq!(m.ncols(), x.len());
    debug_assert_eq!(rows, out.len());
    out.fill(0.0);
    let data = m.as_slice();
    for (j, &xj) in x.iter().enumerate() {
        let col = &data[j * rows..(j + 1) * rows];
        for (o, &c) in out.iter_mut().zip(col) {
            *o += c * xj;
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
