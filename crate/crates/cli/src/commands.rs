use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use arqcd::detect::{run_with_trace, write_detector_trace, DetectorKind, OgaConfig, PreparedDetector};
use arqcd::experiment::{
    estimate_arl, estimate_delay, estimate_k, fmt17, select_threshold, wadd_vs_arl_curve, write_curve_csv, Execution,
    McConfig,
};
use arqcd::model::{lift_to_first_order, validate_model, ArModel, FirstOrderModel};
use arqcd::simulate::{generate_trajectory, read_trajectory_csv, write_trajectory_csv, ChangeConfig, SeedStream};

use crate::{ArlArgs, Cli, Command, CurveArgs, DelayArgs, DetectArgs, KArgs, LiftArgs, OgaArgs, SimulateArgs, ThresholdArg, WORKERS_ENV};

/// A configuration problem (exit 2) or a failure while running (exit 1).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn config<E: fmt::Display>(e: E) -> CliError {
    CliError::Config(e.to_string())
}

fn runtime<E: fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

pub fn run(cli: Cli) -> CliResult<()> {
    let workers = resolve_workers(cli.workers, std::env::var(WORKERS_ENV).ok().as_deref())?;
    let exec = Execution::with_workers(workers);
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Detect(a) => detect(a),
        Command::Arl(a) => arl(a, exec),
        Command::Delay(a) => delay(a, exec),
        Command::Curve(a) => curve(a, exec),
        Command::K(a) => k(a, exec),
        Command::Lift(a) => lift(a),
    }
}

/// The environment variable wins over the flag; the default is one worker
/// per available core.
fn resolve_workers(flag: Option<usize>, env: Option<&str>) -> CliResult<usize> {
    let n = match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => s
            .parse::<usize>()
            .map_err(|_| CliError::Config(format!("{WORKERS_ENV} must be a positive integer, got '{s}'")))?,
        None => match flag {
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(CliError::Config("worker count must be at least 1".into()));
    }
    Ok(n)
}

fn load_model(path: &Path) -> CliResult<(ArModel, FirstOrderModel)> {
    if !path.exists() {
        return Err(CliError::Config(format!("model file {} does not exist", path.display())));
    }
    let m = ArModel::load(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let report = validate_model(&m);
    for w in report.warnings() {
        log::warn!("{}: {}", path.display(), w.message);
    }
    if !report.ok {
        let msgs: Vec<_> = report.errors().map(|f| f.message.clone()).collect();
        return Err(CliError::Config(format!("{}: {}", path.display(), msgs.join("; "))));
    }
    let f = lift_to_first_order(&m).map_err(config)?;
    Ok((m, f))
}

fn require_seed(seed: Option<u64>) -> CliResult<u64> {
    seed.ok_or_else(|| CliError::Config("--seed is required so that runs are reproducible".into()))
}

fn threshold(t: &ThresholdArg) -> CliResult<f64> {
    let c = match (t.threshold, t.gamma) {
        (Some(c), None) => c,
        (None, Some(g)) => select_threshold(g).map_err(config)?,
        _ => return Err(CliError::Config("give exactly one of --threshold and --gamma".into())),
    };
    if !(c > 0.0 && c.is_finite()) {
        return Err(CliError::Config(format!("threshold must be positive and finite, got {c}")));
    }
    Ok(c)
}

fn detector_kind(name: &str, oga: &OgaArgs, dim: usize) -> CliResult<DetectorKind> {
    let kind = match name.parse::<DetectorKind>().map_err(config)? {
        DetectorKind::Oga(_) => DetectorKind::Oga(OgaConfig {
            beta: oga.beta,
            eps: oga.eps,
            reset_filter: !oga.keep_filter_on_reset,
            ..OgaConfig::default()
        }),
        other => other,
    };
    if let DetectorKind::Oga(cfg) = &kind {
        cfg.validate(dim).map_err(config)?;
    }
    Ok(kind)
}

fn output(path: Option<&PathBuf>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let (_, f) = load_model(&a.model.model)?;
    let seed = require_seed(a.seed)?;
    let cfg = ChangeConfig::stationary(&f, a.t0, a.len).map_err(config)?;
    let traj = generate_trajectory(&f, &cfg, seed).map_err(runtime)?;
    let mut out = output(a.out.as_ref())?;
    write_trajectory_csv(&traj, &mut out).map_err(runtime)?;
    out.flush().map_err(runtime)
}

fn detect(a: DetectArgs) -> CliResult<()> {
    let (_, f) = load_model(&a.model.model)?;
    let c = threshold(&a.threshold)?;
    let kind = detector_kind(&a.detector, &a.oga, f.dim())?;
    let observations = match &a.trajectory {
        Some(path) => {
            if a.t0.is_some() || a.len.is_some() {
                return Err(CliError::Config("--trajectory excludes --t0 and --len".into()));
            }
            let file = File::open(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let (obs, _) = read_trajectory_csv(file).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            if let Some(y) = obs.first() {
                if y.len() != f.dim() {
                    return Err(CliError::Config(format!(
                        "trajectory has dimension {} but the model needs {}",
                        y.len(),
                        f.dim()
                    )));
                }
            }
            obs
        }
        None => {
            let (Some(t0), Some(len)) = (a.t0, a.len) else {
                return Err(CliError::Config("give --trajectory, or --t0, --len and --seed".into()));
            };
            let seed = require_seed(a.seed)?;
            let cfg = ChangeConfig::stationary(&f, t0, len).map_err(config)?;
            generate_trajectory(&f, &cfg, SeedStream::from(seed)).map_err(runtime)?.observations
        }
    };
    let prepared = PreparedDetector::new(&kind, &f).map_err(config)?;
    let mut detector = prepared.spawn().map_err(runtime)?;
    let (alarm, rows) = run_with_trace(&mut detector, &observations, c, Some((f.a(), f.r()))).map_err(runtime)?;
    match alarm {
        Some(al) => println!(
            "detector={kind} threshold={} alarm at t={} statistic={}",
            fmt17(c),
            al.stopping_time,
            fmt17(al.statistic_at_stop)
        ),
        None => println!("detector={kind} threshold={} no alarm in {} observations", fmt17(c), observations.len()),
    }
    if let Some(path) = &a.trace {
        let out = output(Some(path))?;
        write_detector_trace(&rows, out).map_err(runtime)?;
    }
    Ok(())
}

fn mc_config(reps: usize, horizon: u64, seed: Option<u64>, exec: Execution) -> CliResult<McConfig> {
    let cfg = McConfig::new(reps, horizon, require_seed(seed)?).with_execution(exec);
    cfg.validate().map_err(config)?;
    Ok(cfg)
}

fn arl(a: ArlArgs, exec: Execution) -> CliResult<()> {
    let (_, f) = load_model(&a.campaign.model.model)?;
    let c = threshold(&a.threshold)?;
    let kind = detector_kind(&a.detector, &a.oga, f.dim())?;
    let cfg = mc_config(a.campaign.reps, a.campaign.horizon, a.campaign.seed, exec)?;
    let prepared = PreparedDetector::new(&kind, &f).map_err(config)?;
    let r = estimate_arl(&f, &prepared, c, &cfg).map_err(runtime)?;
    let mut w = csv::Writer::from_writer(output(a.campaign.out.as_ref())?);
    let write = |w: &mut csv::Writer<Box<dyn Write>>| -> csv::Result<()> {
        w.write_record(["detector", "threshold", "arl_hat", "arl_se", "n", "n_censored"])?;
        w.write_record([
            kind.label().to_string(),
            fmt17(c),
            fmt17(r.estimate),
            fmt17(r.std_error),
            r.n.to_string(),
            r.n_censored.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(runtime)
}

fn delay(a: DelayArgs, exec: Execution) -> CliResult<()> {
    let (_, f) = load_model(&a.campaign.model.model)?;
    let c = threshold(&a.threshold)?;
    let kind = detector_kind(&a.detector, &a.oga, f.dim())?;
    let cfg = mc_config(a.campaign.reps, a.campaign.horizon, a.campaign.seed, exec)?;
    if a.t0 == 0 {
        return Err(CliError::Config("--t0 must be at least 1".into()));
    }
    let prepared = PreparedDetector::new(&kind, &f).map_err(config)?;
    let r = estimate_delay(&f, &prepared, c, a.t0, &cfg).map_err(runtime)?;
    let mut w = csv::Writer::from_writer(output(a.campaign.out.as_ref())?);
    let write = |w: &mut csv::Writer<Box<dyn Write>>| -> csv::Result<()> {
        w.write_record(["detector", "threshold", "t0", "delay_hat", "delay_se", "n", "n_censored", "n_discarded"])?;
        w.write_record([
            kind.label().to_string(),
            fmt17(c),
            a.t0.to_string(),
            fmt17(r.estimate),
            fmt17(r.std_error),
            r.n.to_string(),
            r.n_censored.to_string(),
            r.n_discarded.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(runtime)
}

fn curve(a: CurveArgs, exec: Execution) -> CliResult<()> {
    let (_, f) = load_model(&a.campaign.model.model)?;
    let mut cfg = mc_config(a.campaign.reps, a.campaign.horizon, a.campaign.seed, exec)?;
    cfg.change_point = a.t0;
    cfg.validate().map_err(config)?;
    for &g in &a.gammas {
        select_threshold(g).map_err(config)?;
    }
    if a.gammas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::Config("--gammas must be strictly ascending".into()));
    }
    let kinds = a
        .detectors
        .iter()
        .map(|d| detector_kind(d, &a.oga, f.dim()))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = wadd_vs_arl_curve(&f, &kinds, &a.gammas, &cfg).map_err(runtime)?;
    write_curve_csv(&rows, output(a.campaign.out.as_ref())?).map_err(runtime)
}

fn k(a: KArgs, exec: Execution) -> CliResult<()> {
    let (_, f) = load_model(&a.model.model)?;
    let mut cfg = mc_config(a.reps, 1, a.seed, exec)?;
    cfg.burn_in = a.burn_in;
    if a.horizon == 0 {
        return Err(CliError::Config("--horizon must be at least 1".into()));
    }
    let r = estimate_k(&f, a.horizon, &cfg).map_err(runtime)?;
    let mut w = csv::Writer::from_writer(output(a.out.as_ref())?);
    let write = |w: &mut csv::Writer<Box<dyn Write>>| -> csv::Result<()> {
        w.write_record(["k_hat", "k_se", "n", "horizon", "burn_in"])?;
        w.write_record([
            fmt17(r.estimate),
            fmt17(r.std_error),
            r.n.to_string(),
            a.horizon.to_string(),
            a.burn_in.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    };
    write(&mut w).map_err(runtime)
}

/// Prints the lifted model in model-file form, plus `block_len`.
fn lift(a: LiftArgs) -> CliResult<()> {
    let (_, f) = load_model(&a.model.model)?;
    let rows = |x: &nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> { x.row_iter().map(|r| r.iter().copied().collect()).collect() };
    let doc = serde_json::json!({
        "dim": f.dim(),
        "order": 1,
        "coeffs": [rows(f.a())],
        "innovation_cov": rows(f.r()),
        "block_len": f.block_len(),
    });
    let text = serde_json::to_string_pretty(&doc).map_err(runtime)?;
    println!("{text}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides_flag() {
        assert_eq!(resolve_workers(Some(3), Some("5")).unwrap(), 5);
        assert_eq!(resolve_workers(Some(3), None).unwrap(), 3);
        assert_eq!(resolve_workers(Some(3), Some("  ")).unwrap(), 3);
        assert!(resolve_workers(None, Some("many")).is_err());
        assert!(resolve_workers(Some(0), None).is_err());
        assert!(resolve_workers(None, None).unwrap() >= 1);
    }

    #[test]
    fn threshold_from_gamma() {
        let t = ThresholdArg {
            threshold: None,
            gamma: Some(100.0),
        };
        assert!((threshold(&t).unwrap() - 100f64.ln()).abs() < 1e-15);
        let bad = ThresholdArg {
            threshold: Some(-1.0),
            gamma: None,
        };
        assert_eq!(threshold(&bad).unwrap_err().exit_code(), 2);
    }
}
