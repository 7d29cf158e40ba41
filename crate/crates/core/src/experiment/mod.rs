//! Monte-Carlo estimates of the average run length to false alarm, the
//! detection delay, the drift constant `K`, and WADD-vs-ARL curves.
//!
//! Replicate `i` of a campaign draws its data from
//! `SeedStream { master: seed, index: i }`, so every detector and threshold
//! in a campaign sees the same trajectories, and aggregation runs over the
//! replicate index in a fixed order. Results do not depend on the worker
//! count.

pub mod cases;
mod exec;

use std::io::Write;

use crate::detect::{Detector, DetectorKind, PreparedDetector};
use crate::error::{Error, Result};
use crate::model::{FirstOrderModel, InitialStateDist};
use crate::simulate::{ChangePoint, ObservationStream, SeedStream};

pub use exec::{map_indexed, Execution};

/// Fraction of censored ARL replicates above which a warning is logged.
pub const CENSORING_WARN_FRACTION: f64 = 0.05;

/// Default burn-in for [`estimate_k`].
pub const DEFAULT_BURN_IN: u64 = 1000;

/// Campaign settings shared by every estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct McConfig {
    pub replicates: usize,
    /// Longest run per replicate (observations watched after the change for
    /// delay runs; total observations for ARL runs).
    pub max_horizon: u64,
    pub seed: u64,
    pub execution: Execution,
    /// Change point used by curve campaigns.
    pub change_point: u64,
    /// Steps discarded before averaging in [`estimate_k`].
    pub burn_in: u64,
}

impl McConfig {
    pub fn new(replicates: usize, max_horizon: u64, seed: u64) -> Self {
        McConfig {
            replicates,
            max_horizon,
            seed,
            execution: Execution::Sequential,
            change_point: 1,
            burn_in: DEFAULT_BURN_IN,
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidConfig("replicates must be at least 1".into()));
        }
        if self.max_horizon == 0 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.change_point == 0 {
            return Err(Error::InvalidConfig("change point must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mean and standard error over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub estimate: f64,
    /// Sample standard deviation over `√n`.
    pub std_error: f64,
    /// Replicates that reached the horizon without an alarm.
    pub n_censored: usize,
    /// Replicates that entered the average.
    pub n: usize,
    /// Replicates dropped before averaging (false alarms in delay runs).
    pub n_discarded: usize,
}

impl ExperimentResult {
    fn from_values(values: &[f64], n_censored: usize, n_discarded: usize) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        ExperimentResult {
            estimate: mean,
            std_error,
            n_censored,
            n,
            n_discarded,
        }
    }
}

/// `c = log γ`.
pub fn select_threshold(gamma: f64) -> Result<f64> {
    if !(gamma > 1.0 && gamma.is_finite()) {
        return Err(Error::InvalidConfig(format!("gamma must be finite and > 1, got {gamma}")));
    }
    Ok(gamma.ln())
}

/// Replicate outcome: stopping time, or `None` if the horizon was reached.
fn run_replicate(
    f: &FirstOrderModel,
    init: &InitialStateDist,
    prepared: &PreparedDetector,
    change_point: ChangePoint,
    c: f64,
    steps: u64,
    seed: SeedStream,
) -> Result<Option<u64>> {
    let mut stream = ObservationStream::new(f, init, change_point, seed)?;
    let mut detector = prepared.spawn()?;
    let mut y = vec![0.0; f.dim()];
    for _ in 0..steps {
        stream.next_into(&mut y);
        detector.observe(&y)?;
        if detector.statistic() >= c {
            return Ok(Some(detector.time()));
        }
    }
    Ok(None)
}

fn check_c(c: f64) -> Result<()> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("threshold must be positive and finite, got {c}")));
    }
    Ok(())
}

/// Mean stopping time on pre-change data. Censored replicates count as
/// `max_horizon`, so the estimate is a lower bound on the true ARL.
pub fn estimate_arl(f: &FirstOrderModel, detector: &PreparedDetector, c: f64, cfg: &McConfig) -> Result<ExperimentResult> {
    check_c(c)?;
    cfg.validate()?;
    let init = InitialStateDist::stationary(f)?;
    let outcomes = map_indexed(cfg.execution, cfg.replicates, |i| {
        run_replicate(f, &init, detector, ChangePoint::Never, c, cfg.max_horizon, SeedStream::new(cfg.seed, i as u64))
    });
    let mut values = Vec::with_capacity(cfg.replicates);
    let mut censored = 0;
    for o in outcomes {
        match o? {
            Some(t) => values.push(t as f64),
            None => {
                censored += 1;
                values.push(cfg.max_horizon as f64);
            }
        }
    }
    let frac = censored as f64 / cfg.replicates as f64;
    if frac > CENSORING_WARN_FRACTION {
        log::warn!(
            "{censored} of {} ARL replicates hit the horizon {}; the estimate is a lower bound",
            cfg.replicates,
            cfg.max_horizon
        );
    }
    Ok(ExperimentResult::from_values(&values, censored, 0))
}

/// Mean of `τ − t0` over replicates with the change at `t0` and no alarm
/// before it. False alarms are discarded and counted; replicates with no
/// alarm within `max_horizon` post-change steps count as `max_horizon`.
pub fn estimate_delay(
    f: &FirstOrderModel,
    detector: &PreparedDetector,
    c: f64,
    t0: u64,
    cfg: &McConfig,
) -> Result<ExperimentResult> {
    check_c(c)?;
    cfg.validate()?;
    if t0 == 0 {
        return Err(Error::InvalidConfig("change point must be at least 1".into()));
    }
    let init = InitialStateDist::stationary(f)?;
    let steps = t0 - 1 + cfg.max_horizon;
    let outcomes = map_indexed(cfg.execution, cfg.replicates, |i| {
        run_replicate(f, &init, detector, ChangePoint::At(t0), c, steps, SeedStream::new(cfg.seed, i as u64))
    });
    let mut values = Vec::with_capacity(cfg.replicates);
    let (mut censored, mut discarded) = (0, 0);
    for o in outcomes {
        match o? {
            Some(t) if t < t0 => discarded += 1,
            Some(t) => values.push((t - t0) as f64),
            None => {
                censored += 1;
                values.push(cfg.max_horizon as f64);
            }
        }
    }
    if values.is_empty() {
        return Err(Error::AllFalseAlarms);
    }
    if censored > 0 {
        log::warn!("{censored} delay replicates never alarmed within {} post-change steps", cfg.max_horizon);
    }
    Ok(ExperimentResult::from_values(&values, censored, discarded))
}

/// Per replicate, the average Ergodic increment over `horizon` post-change
/// steps after `cfg.burn_in` discarded ones; then the mean over replicates.
pub fn estimate_k(f: &FirstOrderModel, horizon: u64, cfg: &McConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be at least 1".into()));
    }
    let init = InitialStateDist::stationary(f)?;
    let prepared = PreparedDetector::ergodic(f, init.clone())?;
    let outcomes = map_indexed(cfg.execution, cfg.replicates, |i| -> Result<f64> {
        let mut stream = ObservationStream::new(f, &init, ChangePoint::At(1), SeedStream::new(cfg.seed, i as u64))?;
        let mut detector = prepared.spawn()?;
        let mut y = vec![0.0; f.dim()];
        for _ in 0..cfg.burn_in {
            stream.next_into(&mut y);
            detector.observe(&y)?;
        }
        let mut sum = 0.0;
        for _ in 0..horizon {
            stream.next_into(&mut y);
            sum += detector.observe(&y)?;
        }
        Ok(sum / horizon as f64)
    });
    let values = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult::from_values(&values, 0, 0))
}

/// One (detector, γ) point of a WADD-vs-ARL curve.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub detector: String,
    pub gamma: f64,
    pub threshold: f64,
    pub arl_hat: f64,
    pub arl_se: f64,
    pub delay_hat: f64,
    pub delay_se: f64,
    /// Censored ARL replicates.
    pub n_censored: usize,
}

/// For each detector and each `γ`: `c = log γ`, then ARL and delay at
/// `cfg.change_point`. Rows come out in (detector, γ) order.
pub fn wadd_vs_arl_curve(f: &FirstOrderModel, detectors: &[DetectorKind], gammas: &[f64], cfg: &McConfig) -> Result<Vec<CurveRow>> {
    cfg.validate()?;
    if gammas.is_empty() || detectors.is_empty() {
        return Err(Error::InvalidConfig("need at least one gamma and one detector".into()));
    }
    if gammas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("gammas must be strictly ascending".into()));
    }
    let thresholds = gammas.iter().map(|&g| select_threshold(g)).collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(detectors.len() * gammas.len());
    for kind in detectors {
        let prepared = PreparedDetector::new(kind, f)?;
        for (&gamma, &c) in gammas.iter().zip(&thresholds) {
            let arl = estimate_arl(f, &prepared, c, cfg)?;
            let delay = estimate_delay(f, &prepared, c, cfg.change_point, cfg)?;
            log::info!(
                "{kind} gamma={gamma}: ARL {:.1} ± {:.1}, delay {:.2} ± {:.2}",
                arl.estimate,
                arl.std_error,
                delay.estimate,
                delay.std_error
            );
            rows.push(CurveRow {
                detector: kind.label().to_string(),
                gamma,
                threshold: c,
                arl_hat: arl.estimate,
                arl_se: arl.std_error,
                delay_hat: delay.estimate,
                delay_se: delay.std_error,
                n_censored: arl.n_censored,
            });
        }
    }
    Ok(rows)
}

/// `detector,gamma,threshold,arl_hat,arl_se,delay_hat,delay_se,n_censored`.
pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["detector", "gamma", "threshold", "arl_hat", "arl_se", "delay_hat", "delay_se", "n_censored"])?;
    for r in rows {
        w.write_record([
            r.detector.clone(),
            fmt17(r.gamma),
            fmt17(r.threshold),
            fmt17(r.arl_hat),
            fmt17(r.arl_se),
            fmt17(r.delay_hat),
            fmt17(r.delay_se),
            r.n_censored.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Ordinary least squares `y = a + b x`; returns `(a, b, R²)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64, f64)> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((a, b, r2))
}
