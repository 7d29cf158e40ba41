use nalgebra::{DMatrix, DVector};

use super::Detector;
use crate::error::{Error, Result};
use crate::filter::{self, StepGains};
use crate::linalg::{self, symmetrize};

/// Hyperparameters of the online-gradient-ascent CuSum.
///
/// Unset initial values default to `Â_0 = 0.1·I`, `R̂_0 = I`, `μ̂_0 = 0`,
/// `Σ̂_0 = I` in whatever dimension the detector is built for.
#[derive(Debug, Clone, PartialEq)]
pub struct OgaConfig {
    /// Step size β.
    pub beta: f64,
    /// Eigenvalue floor ε for `R̂`.
    pub eps: f64,
    pub a0: Option<DMatrix<f64>>,
    pub r0: Option<DMatrix<f64>>,
    pub mu0: Option<DVector<f64>>,
    pub sigma0: Option<DMatrix<f64>>,
    /// Also restart `(μ̂, Σ̂)` when the statistic resets.
    pub reset_filter: bool,
}

impl Default for OgaConfig {
    fn default() -> Self {
        OgaConfig {
            beta: 1e-3,
            eps: 1e-4,
            a0: None,
            r0: None,
            mu0: None,
            sigma0: None,
            reset_filter: true,
        }
    }
}

impl OgaConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig(format!("step size must be positive, got {}", self.beta)));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidConfig(format!("eigenvalue floor must be positive, got {}", self.eps)));
        }
        let square = |m: &Option<DMatrix<f64>>, what: &'static str| -> Result<()> {
            match m {
                Some(m) if m.nrows() != dim || m.ncols() != dim => Err(Error::Dimension {
                    expected: dim,
                    got: m.nrows().max(m.ncols()),
                    context: what,
                }),
                Some(m) if m.iter().any(|v| !v.is_finite()) => {
                    Err(Error::InvalidConfig(format!("{what} has non-finite entries")))
                }
                _ => Ok(()),
            }
        };
        square(&self.a0, "initial Â")?;
        square(&self.r0, "initial R̂")?;
        square(&self.sigma0, "initial Σ̂")?;
        if let Some(r0) = &self.r0 {
            linalg::cholesky(r0, "initial R̂")?;
        }
        if let Some(s0) = &self.sigma0 {
            linalg::cholesky(s0, "initial Σ̂")?;
        }
        if let Some(mu) = &self.mu0 {
            if mu.len() != dim {
                return Err(Error::Dimension {
                    expected: dim,
                    got: mu.len(),
                    context: "initial μ̂",
                });
            }
        }
        Ok(())
    }
}

/// Projection onto symmetric matrices with eigenvalues `≥ eps`: symmetrize,
/// floor the spectrum, reassemble.
///
/// The floor sits a few ulps of the spectral scale above `eps` so that the
/// reassembled matrix still has every eigenvalue `≥ eps` after rounding.
pub fn proj_pd(x: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let eig = symmetrize(x).symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(eps);
    let floor = eps + 8.0 * x.nrows() as f64 * f64::EPSILON * scale;
    let floored = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    symmetrize(&(v * DMatrix::from_diagonal(&floored) * v.transpose()))
}

/// Gradient of `ĥ` through one filter step, with the step's outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct HatGradient {
    pub grad_a: DMatrix<f64>,
    pub grad_r: DMatrix<f64>,
    /// `ĥ`, the estimated conditional log-density of `y`.
    pub h_value: f64,
    pub mu_next: DVector<f64>,
    pub sigma_next: DMatrix<f64>,
}

/// `ĥ` and its gradients in `Â` and `R̂` for one step from `(μ̂_t, Σ̂_t)`.
///
/// Substituting the one-step update back into the conditional-density
/// expression gives `ĥ = log N(y; Âμ̂_t, S)` with `S = ÂΣ̂_tÂᵀ + R̂ + I`.
/// With `e = y − Âμ̂_t`, `ρ = S⁻¹e` and `G = ½(ρρᵀ − S⁻¹)`:
///
/// ```text
/// ∂ĥ/∂R̂ = G
/// ∂ĥ/∂Â = ρμ̂_tᵀ + 2GÂΣ̂_t
/// ```
pub fn grad_h_hat(
    a_hat: &DMatrix<f64>,
    r_hat: &DMatrix<f64>,
    mu_hat: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<HatGradient> {
    let k = r_hat.nrows();
    for (got, context) in [
        (a_hat.nrows(), "Â"),
        (a_hat.ncols(), "Â"),
        (mu_hat.len(), "μ̂"),
        (sigma_hat.nrows(), "Σ̂"),
        (y.len(), "observation"),
    ] {
        if got != k {
            return Err(Error::Dimension { expected: k, got, context });
        }
    }
    linalg::cholesky(r_hat, "R̂")?;
    let gains = StepGains::from_parts(a_hat, r_hat, sigma_hat)?;
    let (mu_next, h_value) = gains.apply(mu_hat, y);
    let s_inv = gains.innovation_precision();
    let e = y - a_hat * mu_hat;
    let rho = s_inv * e;
    let g = symmetrize(&((&rho * rho.transpose() - s_inv) * 0.5));
    let grad_a = &rho * mu_hat.transpose() + (&g * a_hat * sigma_hat) * 2.0;
    if !h_value.is_finite() || grad_a.iter().chain(g.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("non-finite gradient in the parameter update".into()));
    }
    Ok(HatGradient {
        grad_a,
        grad_r: g,
        h_value,
        mu_next,
        sigma_next: gains.sigma_next().clone(),
    })
}

/// Full state of the online-gradient-ascent CuSum.
#[derive(Debug, Clone, PartialEq)]
pub struct OgaState {
    pub a_hat: DMatrix<f64>,
    pub r_hat: DMatrix<f64>,
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    pub s_hat: f64,
    pub log_l_hat: f64,
    pub t: u64,
    /// Increment added by the last step.
    pub increment: f64,
    pub beta: f64,
    pub eps: f64,
    pub reset_filter: bool,
    pub a0: DMatrix<f64>,
    pub r0: DMatrix<f64>,
    pub mu0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl OgaState {
    pub fn new(cfg: &OgaConfig, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("dimension must be positive".into()));
        }
        cfg.validate(dim)?;
        let eye = DMatrix::<f64>::identity(dim, dim);
        let a0 = cfg.a0.clone().unwrap_or_else(|| &eye * 0.1);
        let r0 = proj_pd(&cfg.r0.clone().unwrap_or_else(|| eye.clone()), cfg.eps);
        let mu0 = cfg.mu0.clone().unwrap_or_else(|| DVector::zeros(dim));
        let sigma0 = symmetrize(&cfg.sigma0.clone().unwrap_or_else(|| eye.clone()));
        Ok(OgaState {
            a_hat: a0.clone(),
            r_hat: r0.clone(),
            mu_hat: mu0.clone(),
            sigma_hat: sigma0.clone(),
            s_hat: 0.0,
            log_l_hat: 0.0,
            t: 0,
            increment: 0.0,
            beta: cfg.beta,
            eps: cfg.eps,
            reset_filter: cfg.reset_filter,
            a0,
            r0,
            mu0,
            sigma0,
        })
    }

    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }
}

/// One pass of the OGA-CuSum loop body.
pub fn oga_cusum_step(state: &OgaState, y: &DVector<f64>) -> Result<OgaState> {
    let g = grad_h_hat(&state.a_hat, &state.r_hat, &state.mu_hat, &state.sigma_hat, y)?;
    let increment = g.h_value - filter::log_p_infty(y.as_slice());
    let mut next = state.clone();
    next.t += 1;
    next.increment = increment;
    next.mu_hat = g.mu_next;
    next.sigma_hat = g.sigma_next;
    next.log_l_hat += increment;
    next.s_hat += increment;
    if next.s_hat < 0.0 {
        next.a_hat = state.a0.clone();
        next.r_hat = state.r0.clone();
        next.s_hat = 0.0;
        next.log_l_hat = 0.0;
        if state.reset_filter {
            next.mu_hat = state.mu0.clone();
            next.sigma_hat = state.sigma0.clone();
        }
    } else {
        next.a_hat += g.grad_a * state.beta;
        next.r_hat = proj_pd(&(&state.r_hat + g.grad_r * state.beta), state.eps);
    }
    Ok(next)
}

/// Detector wrapper around [`OgaState`].
#[derive(Debug, Clone)]
pub struct OgaCusum {
    state: OgaState,
}

impl OgaCusum {
    pub fn new(cfg: &OgaConfig, dim: usize) -> Result<Self> {
        Ok(OgaCusum {
            state: OgaState::new(cfg, dim)?,
        })
    }

    pub fn state(&self) -> &OgaState {
        &self.state
    }
}

impl Detector for OgaCusum {
    fn dim(&self) -> usize {
        self.state.dim()
    }

    fn observe(&mut self, y: &[f64]) -> Result<f64> {
        self.state = oga_cusum_step(&self.state, &DVector::from_column_slice(y))?;
        Ok(self.state.increment)
    }

    fn statistic(&self) -> f64 {
        self.state.s_hat
    }

    fn time(&self) -> u64 {
        self.state.t
    }

    fn reset(&mut self) {
        let s = &mut self.state;
        s.a_hat = s.a0.clone();
        s.r_hat = s.r0.clone();
        s.mu_hat = s.mu0.clone();
        s.sigma_hat = s.sigma0.clone();
        s.s_hat = 0.0;
        s.log_l_hat = 0.0;
        s.t = 0;
        s.increment = 0.0;
    }

    fn estimates(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        Some((&self.state.a_hat, &self.state.r_hat))
    }
}
