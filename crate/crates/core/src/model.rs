//! AR(q) disturbance models, their first-order (block) form and the two
//! covariance solvers used by the filter: the stationary state covariance
//! (discrete Lyapunov equation) and the fixed point of the forward-variable
//! covariance recursion.

use std::fmt;
use std::path::Path;

use nalgebra::{ClosedAddAssign, ClosedMulAssign, DMatrix, DVector, Scalar};
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};

/// Default tolerance of the covariance solvers.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Iteration cap of the covariance solvers.
pub const MAX_ITERATIONS: usize = 10_000;

const SPD_FLOOR: f64 = 1e-10;
const SYMMETRY_TOL: f64 = 1e-10;
const SINGULAR_RCOND: f64 = 1e-12;

/// `x_t = A_1 x_{t-1} + ... + A_q x_{t-q} + ω_t`, `ω_t ~ N(0, R_ω)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArModel {
    pub dim: usize,
    pub order: usize,
    pub coeffs: Vec<DMatrix<f64>>,
    pub innovation_cov: DMatrix<f64>,
}

impl ArModel {
    pub fn new(coeffs: Vec<DMatrix<f64>>, innovation_cov: DMatrix<f64>) -> Self {
        ArModel {
            dim: innovation_cov.nrows(),
            order: coeffs.len(),
            coeffs,
            innovation_cov,
        }
    }

    /// First-order model with a single coefficient matrix.
    pub fn first_order(a: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        Self::new(vec![a], r)
    }

    /// Scalar AR(1), `x_t = a x_{t-1} + ω_t` with `Var(ω) = r`.
    pub fn scalar(a: f64, r: f64) -> Self {
        Self::first_order(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, r))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)?;
        file.into_model()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from_model(self))?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}

/// A matrix in a model file: either nested rows or a flat row-major list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixRepr {
    Rows(Vec<Vec<f64>>),
    Flat(Vec<f64>),
}

impl MatrixRepr {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        MatrixRepr::Rows(m.row_iter().map(|r| r.iter().copied().collect()).collect())
    }

    fn to_matrix(&self, dim: usize, name: &str) -> Result<DMatrix<f64>> {
        match self {
            MatrixRepr::Flat(v) => {
                if v.len() != dim * dim {
                    return Err(Error::InvalidModel(format!(
                        "{name}: expected {} entries, found {}",
                        dim * dim,
                        v.len()
                    )));
                }
                Ok(DMatrix::from_row_slice(dim, dim, v))
            }
            MatrixRepr::Rows(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::InvalidModel(format!("{name}: expected {dim}x{dim} rows")));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Ok(DMatrix::from_row_slice(dim, dim, &flat))
            }
        }
    }
}

/// On-disk JSON layout: `{"dim", "order", "coeffs", "innovation_cov"}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    dim: usize,
    order: usize,
    coeffs: Vec<MatrixRepr>,
    innovation_cov: MatrixRepr,
}

impl ModelFile {
    fn from_model(m: &ArModel) -> Self {
        ModelFile {
            dim: m.dim,
            order: m.order,
            coeffs: m.coeffs.iter().map(MatrixRepr::from_matrix).collect(),
            innovation_cov: MatrixRepr::from_matrix(&m.innovation_cov),
        }
    }

    fn into_model(self) -> Result<ArModel> {
        if self.dim == 0 {
            return Err(Error::InvalidModel("dim must be positive".into()));
        }
        if self.coeffs.len() != self.order {
            return Err(Error::InvalidModel(format!(
                "order is {} but {} coefficient matrices were given",
                self.order,
                self.coeffs.len()
            )));
        }
        let coeffs = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c.to_matrix(self.dim, &format!("coeffs[{i}]")))
            .collect::<Result<Vec<_>>>()?;
        let innovation_cov = self.innovation_cov.to_matrix(self.dim, "innovation_cov")?;
        Ok(ArModel {
            dim: self.dim,
            order: self.order,
            coeffs,
            innovation_cov,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Severity::Warning => f.write_str("warning"),
            Severity::Error => f.write_str("error"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

/// Outcome of [`validate_model`]. `ok` holds iff no finding is an error.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub ok: bool,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    fn from_findings(findings: Vec<Finding>) -> Self {
        ValidationReport {
            ok: findings.iter().all(|f| f.severity != Severity::Error),
            findings,
        }
    }

    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    fn error_summary(&self) -> String {
        self.errors().map(|f| f.message.as_str()).collect::<Vec<_>>().join("; ")
    }
}

/// Checks finiteness, shapes, SPD innovation covariance and stability.
///
/// Order-1 models must have spectral norm `‖A‖ < 1`; higher orders are
/// checked through the spectral radius of the lifted transition matrix.
/// Nearly singular coefficient matrices only produce a warning.
pub fn validate_model(m: &ArModel) -> ValidationReport {
    let mut findings = Vec::new();
    let mut error = |msg: String| {
        findings.push(Finding {
            severity: Severity::Error,
            message: msg,
        })
    };

    let k = m.dim;
    if k == 0 {
        error("dimension must be positive".into());
    }
    if m.order == 0 {
        error("order must be positive".into());
    }
    if m.coeffs.len() != m.order {
        error(format!(
            "order is {} but {} coefficient matrices were given",
            m.order,
            m.coeffs.len()
        ));
    }
    for (i, a) in m.coeffs.iter().enumerate() {
        if a.nrows() != k || a.ncols() != k {
            error(format!("A_{} is {}x{}, expected {k}x{k}", i + 1, a.nrows(), a.ncols()));
        } else if a.iter().any(|v| !v.is_finite()) {
            error(format!("A_{} has non-finite entries", i + 1));
        }
    }
    let r = &m.innovation_cov;
    if r.nrows() != k || r.ncols() != k {
        error(format!("innovation covariance is {}x{}, expected {k}x{k}", r.nrows(), r.ncols()));
    } else if r.iter().any(|v| !v.is_finite()) {
        error("innovation covariance has non-finite entries".into());
    } else {
        let scale = r.amax().max(1.0);
        if (r - r.transpose()).amax() > SYMMETRY_TOL * scale {
            error("innovation covariance is not symmetric".into());
        }
        let min_eig = linalg::sym_eigenvalues(r)[0];
        if min_eig <= SPD_FLOOR {
            error(format!("innovation covariance is not positive definite (min eigenvalue {min_eig:.3e})"));
        }
    }

    let structural_ok = findings.is_empty();
    if structural_ok {
        if m.order == 1 {
            let norm = linalg::spectral_norm(&m.coeffs[0]);
            if norm >= 1.0 {
                findings.push(Finding {
                    severity: Severity::Error,
                    message: format!("operator norm ≥ 1 (‖A‖ = {norm:.6})"),
                });
            }
        } else {
            let (a_lift, _) = lift_coefficients(&m.coeffs);
            let rho = linalg::spectral_radius(&a_lift);
            if rho >= 1.0 {
                findings.push(Finding {
                    severity: Severity::Error,
                    message: format!("spectral radius of the lifted transition ≥ 1 (ρ = {rho:.6})"),
                });
            }
        }
        for (i, a) in m.coeffs.iter().enumerate() {
            let sv = a.singular_values();
            let max = sv.max();
            let min = sv.min();
            if max == 0.0 || min / max < SINGULAR_RCOND {
                findings.push(Finding {
                    severity: Severity::Warning,
                    message: format!("A_{} is nearly singular (1/cond = {:.3e})", i + 1, if max == 0.0 { 0.0 } else { min / max }),
                });
            }
        }
    }
    ValidationReport::from_findings(findings)
}

/// Stable first-order model `x_t = A x_{t-1} + ω_t`, `ω_t ~ N(0, R)`.
///
/// `block_len` records the AR order the model was lifted from: one step of
/// this model covers `block_len` samples of the original process.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderModel {
    a: DMatrix<f64>,
    r: DMatrix<f64>,
    block_len: usize,
}

impl FirstOrderModel {
    pub fn new(a: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::with_block_len(a, r, 1)
    }

    fn with_block_len(a: DMatrix<f64>, r: DMatrix<f64>, block_len: usize) -> Result<Self> {
        let k = r.nrows();
        if !a.is_square() || !r.is_square() || a.nrows() != k {
            return Err(Error::InvalidModel("A and R must be square of equal size".into()));
        }
        if k == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        if a.iter().chain(r.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("non-finite entries".into()));
        }
        let r = symmetrize(&r);
        if linalg::sym_eigenvalues(&r)[0] <= SPD_FLOOR {
            return Err(Error::NotPositiveDefinite("innovation covariance"));
        }
        let rho = linalg::spectral_radius(&a);
        if rho >= 1.0 {
            return Err(Error::InvalidModel(format!("unstable transition (spectral radius {rho:.6})")));
        }
        Ok(FirstOrderModel { a, r, block_len })
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// The same model as an order-1 [`ArModel`] (e.g. for writing a model file).
    pub fn to_ar_model(&self) -> ArModel {
        ArModel::first_order(self.a.clone(), self.r.clone())
    }
}

/// Block-companion form of an AR(q) coefficient list.
///
/// Returns `(Ã, D)` where `Ã` maps the previous block
/// `[x_{q(t-1)-q+1}; …; x_{q(t-1)}]` to the next and `D` maps the block's
/// innovations `[ω_{q(t-1)+1}; …; ω_{qt}]` to the stacked noise `ω̃_t`.
/// Generic so that exact arithmetic types can reproduce the lifting.
pub fn lift_coefficients<T>(coeffs: &[DMatrix<T>]) -> (DMatrix<T>, DMatrix<T>)
where
    T: Scalar + Zero + One + ClosedAddAssign + ClosedMulAssign,
{
    let q = coeffs.len();
    assert!(q > 0, "at least one coefficient matrix");
    let k = coeffs[0].nrows();
    let n = q * k;
    let selector = |pos: usize| {
        let mut e = DMatrix::<T>::zeros(k, n);
        for d in 0..k {
            e[(d, pos * k + d)] = T::one();
        }
        e
    };

    // Row blocks: state j of the new block in terms of the previous block (c)
    // and of the new block's innovations (d).
    let mut c: Vec<DMatrix<T>> = Vec::with_capacity(q);
    let mut d: Vec<DMatrix<T>> = Vec::with_capacity(q);
    for j in 0..q {
        let mut cj = DMatrix::<T>::zeros(k, n);
        let mut dj = selector(j);
        for i in 1..=q {
            let a = &coeffs[i - 1];
            if j >= i {
                cj += a * &c[j - i];
                dj += a * &d[j - i];
            } else {
                cj += a * selector(q + j - i);
            }
        }
        c.push(cj);
        d.push(dj);
    }

    let mut a_lift = DMatrix::<T>::zeros(n, n);
    let mut noise_map = DMatrix::<T>::zeros(n, n);
    for j in 0..q {
        a_lift.view_mut((j * k, 0), (k, n)).copy_from(&c[j]);
        noise_map.view_mut((j * k, 0), (k, n)).copy_from(&d[j]);
    }
    (a_lift, noise_map)
}

/// Covariance of the stacked block noise, `D (I_q ⊗ R) Dᵀ`.
pub fn lifted_noise_cov(noise_map: &DMatrix<f64>, r: &DMatrix<f64>, q: usize) -> DMatrix<f64> {
    let k = r.nrows();
    let mut block = DMatrix::zeros(q * k, q * k);
    for j in 0..q {
        block.view_mut((j * k, j * k), (k, k)).copy_from(r);
    }
    symmetrize(&(noise_map * block * noise_map.transpose()))
}

/// First-order (block) form of a validated AR(q) model. Identity for q = 1.
pub fn lift_to_first_order(m: &ArModel) -> Result<FirstOrderModel> {
    let report = validate_model(m);
    if !report.ok {
        return Err(Error::InvalidModel(report.error_summary()));
    }
    if m.order == 1 {
        return FirstOrderModel::with_block_len(m.coeffs[0].clone(), m.innovation_cov.clone(), 1);
    }
    let (a, noise_map) = lift_coefficients(&m.coeffs);
    let r = lifted_noise_cov(&noise_map, &m.innovation_cov, m.order);
    FirstOrderModel::with_block_len(a, r, m.order)
}

/// Stationary state covariance: the solution of `Σ = AΣAᵀ + R`.
///
/// Sums the series `Σ_i A^i R (Aᵀ)^i` by doubling, then polishes with plain
/// fixed-point steps until the Lyapunov residual is at most `tol`.
pub fn stationary_state_cov(f: &FirstOrderModel, tol: f64) -> Result<DMatrix<f64>> {
    let a = f.a();
    let r = f.r();
    let residual = |s: &DMatrix<f64>| (s - a * s * a.transpose() - r).norm();

    let mut sigma = r.clone();
    let mut power = a.clone();
    for _ in 0..64 {
        sigma = symmetrize(&(&sigma + &power * &sigma * power.transpose()));
        power = &power * &power;
        if !sigma.iter().all(|v| v.is_finite()) {
            break;
        }
        if power.norm() < f64::EPSILON * 1e-3 {
            break;
        }
    }
    for _ in 0..MAX_ITERATIONS {
        if !sigma.iter().all(|v| v.is_finite()) {
            break;
        }
        if residual(&sigma) <= tol {
            return Ok(sigma);
        }
        sigma = symmetrize(&(a * &sigma * a.transpose() + r));
    }
    Err(Error::NoConvergence {
        what: "stationary covariance",
        iterations: MAX_ITERATIONS,
    })
}

/// One step of the forward covariance recursion,
/// `Σ ↦ (AΣAᵀ + R)(AΣAᵀ + R + I)⁻¹`, symmetrized.
pub fn covariance_update(f: &FirstOrderModel, sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = symmetrize(&(f.a() * sigma * f.a().transpose() + f.r()));
    let s = &p + DMatrix::identity(p.nrows(), p.ncols());
    let chol = linalg::cholesky(&s, "AΣAᵀ + R + I")?;
    // P and P + I commute, so P(P+I)⁻¹ = (P+I)⁻¹P.
    Ok(symmetrize(&chol.solve(&p)))
}

/// Fixed point Σ* of [`covariance_update`], iterated from Σ₀ = 0 until
/// successive iterates differ by at most `tol` in Frobenius norm.
pub fn fixed_point_sigma_star(f: &FirstOrderModel, tol: f64) -> Result<DMatrix<f64>> {
    let k = f.dim();
    let mut sigma = DMatrix::zeros(k, k);
    for _ in 0..MAX_ITERATIONS {
        let next = covariance_update(f, &sigma)?;
        let delta = (&next - &sigma).norm();
        sigma = next;
        if delta <= tol {
            return Ok(sigma);
        }
    }
    Err(Error::NoConvergence {
        what: "forward covariance fixed point",
        iterations: MAX_ITERATIONS,
    })
}

/// Gaussian law of the first post-change state.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialStateDist {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl InitialStateDist {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if !cov.is_square() || cov.nrows() != mean.len() {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: cov.nrows(),
                context: "initial covariance",
            });
        }
        linalg::cholesky(&cov, "initial covariance")?;
        Ok(InitialStateDist {
            mean,
            cov: symmetrize(&cov),
        })
    }

    /// `N(0, Σ)` with Σ the stationary state covariance of `f`.
    pub fn stationary(f: &FirstOrderModel) -> Result<Self> {
        let cov = stationary_state_cov(f, DEFAULT_TOL)?;
        Self::new(DVector::zeros(f.dim()), cov)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}
