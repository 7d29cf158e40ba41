use nalgebra::{DMatrix, DVector};

use super::Detector;
use crate::error::{Error, Result};
use crate::linalg::{self, dot, matvec_into};

/// i.i.d. CuSum of `log N(y; 0, Σ + I) − log N(y; 0, I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryCusumState {
    pub s: f64,
    /// Stationary observation covariance `Σ + I`.
    pub obs_cov: DMatrix<f64>,
    precision: DMatrix<f64>,
    half_log_det: f64,
}

impl StationaryCusumState {
    pub fn new(obs_cov: &DMatrix<f64>) -> Result<Self> {
        let chol = linalg::cholesky(obs_cov, "stationary observation covariance")?;
        Ok(StationaryCusumState {
            s: 0.0,
            obs_cov: linalg::symmetrize(obs_cov),
            precision: linalg::symmetrize(&chol.inverse()),
            half_log_det: 0.5 * chol.ln_determinant(),
        })
    }

    fn increment(&self, y: &[f64], buf: &mut [f64]) -> f64 {
        matvec_into(&self.precision, y, buf);
        // the (2π)^{-K/2} factors cancel
        -self.half_log_det - 0.5 * dot(y, buf) + 0.5 * dot(y, y)
    }
}

/// One step of the stationary CuSum; returns the new state and the increment.
pub fn stationary_cusum_step(state: &StationaryCusumState, y: &DVector<f64>) -> Result<(StationaryCusumState, f64)> {
    if y.len() != state.obs_cov.nrows() {
        return Err(Error::Dimension {
            expected: state.obs_cov.nrows(),
            got: y.len(),
            context: "observation",
        });
    }
    let mut buf = vec![0.0; y.len()];
    let inc = state.increment(y.as_slice(), &mut buf);
    let mut next = state.clone();
    next.s = (state.s + inc).max(0.0);
    Ok((next, inc))
}

#[derive(Debug, Clone)]
pub struct StationaryCusum {
    state: StationaryCusumState,
    buf: Vec<f64>,
    t: u64,
}

impl StationaryCusum {
    pub fn new(obs_cov: &DMatrix<f64>) -> Result<Self> {
        Ok(StationaryCusum {
            state: StationaryCusumState::new(obs_cov)?,
            buf: vec![0.0; obs_cov.nrows()],
            t: 0,
        })
    }
}

impl Detector for StationaryCusum {
    fn dim(&self) -> usize {
        self.buf.len()
    }

    fn observe(&mut self, y: &[f64]) -> Result<f64> {
        if y.len() != self.buf.len() {
            return Err(Error::Dimension {
                expected: self.buf.len(),
                got: y.len(),
                context: "observation",
            });
        }
        let inc = self.state.increment(y, &mut self.buf);
        self.state.s = (self.state.s + inc).max(0.0);
        self.t += 1;
        Ok(inc)
    }

    fn statistic(&self) -> f64 {
        self.state.s
    }

    fn time(&self) -> u64 {
        self.t
    }

    fn reset(&mut self) {
        self.state.s = 0.0;
        self.t = 0;
    }
}
