use std::sync::Arc;

use nalgebra::DVector;

use super::Detector;
use crate::error::{Error, Result};
use crate::filter::{self, ForwardState, GainSchedule, Scratch};
use crate::model::{FirstOrderModel, InitialStateDist};

/// Ergodic CuSum state.
///
/// `log_l = log L_t` is the log-likelihood ratio of `y_1..y_t` with the
/// change anchored at 1, and `s = max_{0≤i≤t} (log L_t − log L_i)`. Before
/// the first observation (`t = 0`) `forward` holds the prior `(m_0, Σ_0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicCusumState {
    pub forward: ForwardState,
    pub s: f64,
    pub log_l: f64,
    pub t: u64,
    /// Increment added by the last step.
    pub increment: f64,
}

impl ErgodicCusumState {
    pub fn new(init: &InitialStateDist) -> Self {
        ErgodicCusumState {
            forward: ForwardState {
                mu: init.mean.clone(),
                sigma: init.cov.clone(),
                log_like: 0.0,
                t: 0,
            },
            s: 0.0,
            log_l: 0.0,
            t: 0,
            increment: 0.0,
        }
    }
}

/// `S_t = max(0, S_{t-1} + log L_t − log L_{t-1})`.
///
/// The forward filter is never restarted; only the statistic clamps.
pub fn ergodic_cusum_step(state: &ErgodicCusumState, y: &DVector<f64>, f: &FirstOrderModel) -> Result<ErgodicCusumState> {
    let step = if state.t == 0 {
        let prior = InitialStateDist::new(state.forward.mu.clone(), state.forward.sigma.clone())?;
        filter::forward_init(&prior, y)?
    } else {
        filter::forward_step(&state.forward, y, f)?
    };
    let increment = step.log_cond - filter::log_p_infty(y.as_slice());
    Ok(ErgodicCusumState {
        forward: step.state,
        s: (state.s + increment).max(0.0),
        log_l: state.log_l + increment,
        t: state.t + 1,
        increment,
    })
}

/// Allocation-free Ergodic CuSum backed by a shared [`GainSchedule`].
#[derive(Debug, Clone)]
pub struct ErgodicCusum {
    init: InitialStateDist,
    schedule: Arc<GainSchedule>,
    mu: Vec<f64>,
    mu_next: Vec<f64>,
    scratch: Scratch,
    s: f64,
    log_l: f64,
    t: u64,
}

impl ErgodicCusum {
    pub fn new(init: InitialStateDist, schedule: Arc<GainSchedule>) -> Self {
        let k = init.dim();
        ErgodicCusum {
            init,
            schedule,
            mu: vec![0.0; k],
            mu_next: vec![0.0; k],
            scratch: Scratch::new(k),
            s: 0.0,
            log_l: 0.0,
            t: 0,
        }
    }

    /// `log L_t`.
    pub fn log_l(&self) -> f64 {
        self.log_l
    }
}

impl Detector for ErgodicCusum {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn observe(&mut self, y: &[f64]) -> Result<f64> {
        if y.len() != self.mu.len() {
            return Err(Error::Dimension {
                expected: self.mu.len(),
                got: y.len(),
                context: "observation",
            });
        }
        let log_cond = if self.t == 0 {
            let r = filter::forward_init(&self.init, &DVector::from_column_slice(y))?;
            self.mu.copy_from_slice(r.state.mu.as_slice());
            r.log_cond
        } else {
            let gains = self.schedule.for_time(self.t + 1);
            let lc = gains.apply_into(&self.mu, y, &mut self.mu_next, &mut self.scratch);
            std::mem::swap(&mut self.mu, &mut self.mu_next);
            lc
        };
        let increment = log_cond - filter::log_p_infty(y);
        self.t += 1;
        self.log_l += increment;
        self.s = (self.s + increment).max(0.0);
        Ok(increment)
    }

    fn statistic(&self) -> f64 {
        self.s
    }

    fn time(&self) -> u64 {
        self.t
    }

    fn reset(&mut self) {
        self.s = 0.0;
        self.log_l = 0.0;
        self.t = 0;
    }
}
