//! Sequential detectors and the stopping rule `τ = inf{t : S_t ≥ c}`.
//!
//! * [`ErgodicCusum`]: known post-change parameters. The increment is the
//!   exact conditional log-likelihood ratio from the forward filter, anchored
//!   at change point 1.
//! * [`StationaryCusum`]: i.i.d. CuSum against the stationary observation
//!   law `N(0, Σ + I)`; ignores temporal dependence. Baseline.
//! * [`OgaCusum`]: unknown parameters, estimated online by one-step
//!   gradient ascent on the conditional log-likelihood.

mod ergodic;
mod oga;
mod stationary;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::filter::{self, GainSchedule};
use crate::model::{stationary_state_cov, FirstOrderModel, InitialStateDist, DEFAULT_TOL};

pub use ergodic::{ergodic_cusum_step, ErgodicCusum, ErgodicCusumState};
pub use oga::{grad_h_hat, oga_cusum_step, proj_pd, HatGradient, OgaConfig, OgaCusum, OgaState};
pub use stationary::{stationary_cusum_step, StationaryCusum, StationaryCusumState};

/// First crossing of the threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alarm {
    pub stopping_time: u64,
    pub statistic_at_stop: f64,
}

/// A CuSum-type statistic fed one observation at a time.
pub trait Detector {
    fn dim(&self) -> usize;

    /// Consumes the next observation and returns the log-likelihood-ratio
    /// increment that was added to the statistic.
    fn observe(&mut self, y: &[f64]) -> Result<f64>;

    /// Current statistic `S_t ≥ 0`.
    fn statistic(&self) -> f64;

    /// Number of observations consumed.
    fn time(&self) -> u64;

    /// Back to the state before the first observation.
    fn reset(&mut self);

    /// Current `(Â, R̂)` for detectors that estimate parameters.
    fn estimates(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        None
    }
}

pub(crate) fn check_threshold(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("threshold must be positive and finite, got {c}")));
    }
    Ok(())
}

/// Runs `detector` over `observations` until `S_t ≥ c`. `None` when the
/// data run out first; the caller decides how to treat censoring.
pub fn run_detector<D: Detector + ?Sized>(detector: &mut D, observations: &[DVector<f64>], c: f64) -> Result<Option<Alarm>> {
    check_threshold(c)?;
    for y in observations {
        detector.observe(y.as_slice())?;
        let s = detector.statistic();
        if s >= c {
            return Ok(Some(Alarm {
                stopping_time: detector.time(),
                statistic_at_stop: s,
            }));
        }
    }
    Ok(None)
}

/// Which detector to run.
#[derive(Debug, Clone, PartialEq)]
pub enum DetectorKind {
    Ergodic,
    Stationary,
    Oga(OgaConfig),
}

impl DetectorKind {
    pub fn label(&self) -> &'static str {
        match self {
            DetectorKind::Ergodic => "ergodic",
            DetectorKind::Stationary => "stationary",
            DetectorKind::Oga(_) => "oga",
        }
    }
}

impl fmt::Display for DetectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DetectorKind {
    type Err = Error;

    /// Parses a detector name; `oga` gets default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ergodic" => Ok(DetectorKind::Ergodic),
            "stationary" => Ok(DetectorKind::Stationary),
            "oga" => Ok(DetectorKind::Oga(OgaConfig::default())),
            other => Err(Error::InvalidConfig(format!(
                "unknown detector '{other}' (expected ergodic, stationary or oga)"
            ))),
        }
    }
}

/// Per-campaign precomputation shared by every replicate's detector.
#[derive(Debug, Clone)]
pub enum PreparedDetector {
    Ergodic {
        init: InitialStateDist,
        schedule: Arc<GainSchedule>,
    },
    Stationary {
        obs_cov: DMatrix<f64>,
    },
    Oga {
        cfg: OgaConfig,
        dim: usize,
    },
}

impl PreparedDetector {
    /// Ergodic and stationary detectors start from the stationary law of `f`.
    pub fn new(kind: &DetectorKind, f: &FirstOrderModel) -> Result<Self> {
        match kind {
            DetectorKind::Ergodic => Self::ergodic(f, InitialStateDist::stationary(f)?),
            DetectorKind::Stationary => Ok(PreparedDetector::Stationary {
                obs_cov: stationary_state_cov(f, DEFAULT_TOL)? + DMatrix::identity(f.dim(), f.dim()),
            }),
            DetectorKind::Oga(cfg) => {
                cfg.validate(f.dim())?;
                Ok(PreparedDetector::Oga {
                    cfg: cfg.clone(),
                    dim: f.dim(),
                })
            }
        }
    }

    pub fn ergodic(f: &FirstOrderModel, init: InitialStateDist) -> Result<Self> {
        if init.dim() != f.dim() {
            return Err(Error::Dimension {
                expected: f.dim(),
                got: init.dim(),
                context: "initial state distribution",
            });
        }
        // Σ_1 does not depend on y_1.
        let sigma_1 = filter::forward_init(&init, &DVector::zeros(f.dim()))?.state.sigma;
        let schedule = GainSchedule::new(f, &sigma_1)?;
        Ok(PreparedDetector::Ergodic { init, schedule })
    }

    pub fn spawn(&self) -> Result<AnyDetector> {
        Ok(match self {
            PreparedDetector::Ergodic { init, schedule } => {
                AnyDetector::Ergodic(ErgodicCusum::new(init.clone(), schedule.clone()))
            }
            PreparedDetector::Stationary { obs_cov } => AnyDetector::Stationary(StationaryCusum::new(obs_cov)?),
            PreparedDetector::Oga { cfg, dim } => AnyDetector::Oga(OgaCusum::new(cfg, *dim)?),
        })
    }
}

/// Enum dispatch over the three detectors.
#[derive(Debug, Clone)]
pub enum AnyDetector {
    Ergodic(ErgodicCusum),
    Stationary(StationaryCusum),
    Oga(OgaCusum),
}

macro_rules! dispatch {
    ($self:ident, $d:ident => $e:expr) => {
        match $self {
            AnyDetector::Ergodic($d) => $e,
            AnyDetector::Stationary($d) => $e,
            AnyDetector::Oga($d) => $e,
        }
    };
}

impl Detector for AnyDetector {
    fn dim(&self) -> usize {
        dispatch!(self, d => d.dim())
    }
    fn observe(&mut self, y: &[f64]) -> Result<f64> {
        dispatch!(self, d => d.observe(y))
    }
    fn statistic(&self) -> f64 {
        dispatch!(self, d => d.statistic())
    }
    fn time(&self) -> u64 {
        dispatch!(self, d => d.time())
    }
    fn reset(&mut self) {
        dispatch!(self, d => d.reset())
    }
    fn estimates(&self) -> Option<(&DMatrix<f64>, &DMatrix<f64>)> {
        dispatch!(self, d => d.estimates())
    }
}

/// One line of a detector trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: u64,
    pub increment: f64,
    pub statistic: f64,
    pub stopped: bool,
    pub a_err_fro: Option<f64>,
    pub r_err_fro: Option<f64>,
}

/// Like [`run_detector`] but records every step. When `truth` is given and
/// the detector estimates parameters, the Frobenius errors are recorded.
pub fn run_with_trace<D: Detector + ?Sized>(
    detector: &mut D,
    observations: &[DVector<f64>],
    c: f64,
    truth: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<(Option<Alarm>, Vec<TraceRow>)> {
    check_threshold(c)?;
    let mut rows = Vec::new();
    for y in observations {
        let increment = detector.observe(y.as_slice())?;
        let statistic = detector.statistic();
        let stopped = statistic >= c;
        let (a_err_fro, r_err_fro) = match (truth, detector.estimates()) {
            (Some((a, r)), Some((a_hat, r_hat))) => (Some((a_hat - a).norm()), Some((r_hat - r).norm())),
            _ => (None, None),
        };
        rows.push(TraceRow {
            t: detector.time(),
            increment,
            statistic,
            stopped,
            a_err_fro,
            r_err_fro,
        });
        if stopped {
            let alarm = Alarm {
                stopping_time: detector.time(),
                statistic_at_stop: statistic,
            };
            return Ok((Some(alarm), rows));
        }
    }
    Ok((None, rows))
}

/// Writes `t,increment,statistic,stopped` (plus `a_err_fro,r_err_fro` when
/// any row carries parameter errors).
pub fn write_detector_trace<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let with_err = rows.iter().any(|r| r.a_err_fro.is_some());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t", "increment", "statistic", "stopped"];
    if with_err {
        header.extend(["a_err_fro", "r_err_fro"]);
    }
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.t.to_string(),
            format!("{:.16e}", r.increment),
            format!("{:.16e}", r.statistic),
            u8::from(r.stopped).to_string(),
        ];
        if with_err {
            let f = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.16e}"));
            rec.push(f(r.a_err_fro));
            rec.push(f(r.r_err_fro));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
