//! Observation trajectories under the pre-change law (`y_t ~ N(0, I)`) and
//! the post-change law (`y_t = x_t + ν_t` with `x_t` a first-order AR
//! process), plus noise whitening and CSV dumps.
//!
//! Randomness is keyed by a [`SeedStream`]: a master seed and a replicate
//! index select an independent ChaCha stream, so replicate `i` of a
//! Monte-Carlo campaign is reproducible on its own.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::{ClosedAddAssign, ClosedMulAssign, DMatrix, DVector, Scalar};
use num_traits::{One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{self, matvec_into};
use crate::model::{FirstOrderModel, InitialStateDist};

/// `(master_seed, replicate_index)` pair naming one random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedStream {
    pub master: u64,
    pub index: u64,
}

impl SeedStream {
    pub fn new(master: u64, index: u64) -> Self {
        SeedStream { master, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.index);
        rng
    }
}

impl From<u64> for SeedStream {
    fn from(master: u64) -> Self {
        SeedStream::new(master, 0)
    }
}

/// 1-based change point, or no change at all.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChangePoint {
    At(u64),
    Never,
}

impl ChangePoint {
    pub fn is_post_change(&self, t: u64) -> bool {
        match *self {
            ChangePoint::At(t0) => t >= t0,
            ChangePoint::Never => false,
        }
    }
}

impl fmt::Display for ChangePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChangePoint::At(t0) => write!(f, "{t0}"),
            ChangePoint::Never => f.write_str("inf"),
        }
    }
}

impl FromStr for ChangePoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "never" => Ok(ChangePoint::Never),
            other => match other.parse::<u64>() {
                Ok(t0) if t0 >= 1 => Ok(ChangePoint::At(t0)),
                _ => Err(Error::InvalidConfig(format!(
                    "change point must be a positive integer or 'inf', got '{s}'"
                ))),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChangeConfig {
    pub change_point: ChangePoint,
    pub length: u64,
    pub init: InitialStateDist,
}

impl ChangeConfig {
    /// Change at `change_point`, stationary initial state.
    pub fn stationary(f: &FirstOrderModel, change_point: ChangePoint, length: u64) -> Result<Self> {
        Ok(ChangeConfig {
            change_point,
            length,
            init: InitialStateDist::stationary(f)?,
        })
    }

    fn validate(&self, f: &FirstOrderModel) -> Result<()> {
        if self.length == 0 {
            return Err(Error::InvalidConfig("trajectory length must be positive".into()));
        }
        if let ChangePoint::At(t0) = self.change_point {
            if t0 == 0 || t0 > self.length {
                return Err(Error::InvalidConfig(format!(
                    "change point {t0} outside 1..={}",
                    self.length
                )));
            }
        }
        if self.init.dim() != f.dim() {
            return Err(Error::Dimension {
                expected: f.dim(),
                got: self.init.dim(),
                context: "initial state distribution",
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub observations: Vec<DVector<f64>>,
    pub change_point: ChangePoint,
    /// `x_{t0}, …, x_T` when the change happens inside the trajectory.
    pub hidden_states: Option<Vec<DVector<f64>>>,
    pub seed: SeedStream,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.observations.first().map_or(0, |y| y.len())
    }
}

/// Streaming generator behind [`generate_trajectory`]. Writes one
/// observation per call without allocating, for Monte-Carlo loops.
pub struct ObservationStream {
    a: DMatrix<f64>,
    innovation_l: DMatrix<f64>,
    init_mean: DVector<f64>,
    init_l: DMatrix<f64>,
    change_point: ChangePoint,
    t: u64,
    x: Vec<f64>,
    scratch: Vec<f64>,
    draws: Vec<f64>,
    rng: ChaCha8Rng,
}

impl ObservationStream {
    pub fn new(f: &FirstOrderModel, init: &InitialStateDist, change_point: ChangePoint, seed: SeedStream) -> Result<Self> {
        if init.dim() != f.dim() {
            return Err(Error::Dimension {
                expected: f.dim(),
                got: init.dim(),
                context: "initial state distribution",
            });
        }
        let k = f.dim();
        Ok(ObservationStream {
            a: f.a().clone(),
            innovation_l: linalg::cholesky(f.r(), "innovation covariance")?.l(),
            init_mean: init.mean.clone(),
            init_l: linalg::cholesky(&init.cov, "initial covariance")?.l(),
            change_point,
            t: 0,
            x: vec![0.0; k],
            scratch: vec![0.0; k],
            draws: vec![0.0; k],
            rng: seed.rng(),
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// Time index of the last generated observation (0 before the first).
    pub fn time(&self) -> u64 {
        self.t
    }

    /// Hidden state at the current time; meaningful once post-change.
    pub fn state(&self) -> &[f64] {
        &self.x
    }

    fn fill_normals(&mut self) {
        for d in self.draws.iter_mut() {
            *d = self.rng.sample(StandardNormal);
        }
    }

    /// Writes `y_{t+1}` into `y` and returns whether it is post-change.
    pub fn next_into(&mut self, y: &mut [f64]) -> bool {
        self.t += 1;
        let t = self.t;
        let post = self.change_point.is_post_change(t);
        if post {
            self.fill_normals();
            if self.change_point == ChangePoint::At(t) {
                matvec_into(&self.init_l, &self.draws, &mut self.x);
                for (x, m) in self.x.iter_mut().zip(self.init_mean.iter()) {
                    *x += m;
                }
            } else {
                matvec_into(&self.a, &self.x, &mut self.scratch);
                matvec_into(&self.innovation_l, &self.draws, &mut self.x);
                for (x, s) in self.x.iter_mut().zip(&self.scratch) {
                    *x += s;
                }
            }
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let nu: f64 = self.rng.sample(StandardNormal);
            *yi = if post { self.x[i] + nu } else { nu };
        }
        post
    }
}

/// Draws `y_1..y_T`: i.i.d. `N(0, I)` before the change point, then
/// `y_t = x_t + ν_t` with `x_{t0} ~ init` and `x_t = A x_{t-1} + ω_t`.
pub fn generate_trajectory(f: &FirstOrderModel, cfg: &ChangeConfig, seed: impl Into<SeedStream>) -> Result<Trajectory> {
    cfg.validate(f)?;
    let seed = seed.into();
    let mut stream = ObservationStream::new(f, &cfg.init, cfg.change_point, seed)?;
    let k = f.dim();
    let mut observations = Vec::with_capacity(cfg.length as usize);
    let mut hidden = Vec::new();
    let mut y = vec![0.0; k];
    for _ in 0..cfg.length {
        let post = stream.next_into(&mut y);
        observations.push(DVector::from_column_slice(&y));
        if post {
            hidden.push(DVector::from_column_slice(stream.state()));
        }
    }
    let hidden_states = match cfg.change_point {
        ChangePoint::At(_) => Some(hidden),
        ChangePoint::Never => None,
    };
    Ok(Trajectory {
        observations,
        change_point: cfg.change_point,
        hidden_states,
        seed,
    })
}

/// Maps each sample `y` to `L⁻¹ y` where `noise_cov = L Lᵀ`.
pub fn whiten(samples: &[DVector<f64>], noise_cov: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let l = linalg::cholesky(noise_cov, "noise covariance")?.l();
    samples
        .iter()
        .map(|y| {
            if y.len() != l.nrows() {
                return Err(Error::Dimension {
                    expected: l.nrows(),
                    got: y.len(),
                    context: "sample to whiten",
                });
            }
            Ok(l.solve_lower_triangular(y).expect("cholesky factor is invertible"))
        })
        .collect()
}

/// `x_t = Σ_i A_i x_{t-i} + ω_t` driven by `noises`, starting from
/// `presample = [x_{1-q}, …, x_0]` (oldest first).
pub fn ar_recursion<T>(coeffs: &[DMatrix<T>], presample: &[DVector<T>], noises: &[DVector<T>]) -> Vec<DVector<T>>
where
    T: Scalar + Zero + One + ClosedAddAssign + ClosedMulAssign,
{
    let q = coeffs.len();
    assert_eq!(presample.len(), q, "presample must hold q states");
    let mut path: Vec<DVector<T>> = presample.to_vec();
    for w in noises {
        let n = path.len();
        let mut x = w.clone();
        for (i, a) in coeffs.iter().enumerate() {
            x += a * &path[n - 1 - i];
        }
        path.push(x);
    }
    path.split_off(q)
}

/// `z_t = A z_{t-1} + w_t` from `z_0`.
pub fn first_order_recursion<T>(a: &DMatrix<T>, z0: &DVector<T>, noises: &[DVector<T>]) -> Vec<DVector<T>>
where
    T: Scalar + Zero + One + ClosedAddAssign + ClosedMulAssign,
{
    let mut z = z0.clone();
    noises
        .iter()
        .map(|w| {
            let mut next = a * &z;
            next += w;
            z = next.clone();
            next
        })
        .collect()
}

/// Stacks consecutive groups of `q` vectors; a trailing partial group is dropped.
pub fn block_vectors<T: Scalar + Zero>(xs: &[DVector<T>], q: usize) -> Vec<DVector<T>> {
    xs.chunks_exact(q)
        .map(|chunk| {
            let k = chunk[0].len();
            let mut v = DVector::<T>::zeros(q * k);
            for (j, x) in chunk.iter().enumerate() {
                v.rows_mut(j * k, k).copy_from(x);
            }
            v
        })
        .collect()
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `t,y_1,...,y_K,is_post_change`, doubles at 17 significant digits.
pub fn write_trajectory_csv<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let k = traj.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=k).map(|i| format!("y_{i}")));
    header.push("is_post_change".into());
    w.write_record(&header)?;
    for (i, y) in traj.observations.iter().enumerate() {
        let t = i as u64 + 1;
        let mut rec = vec![t.to_string()];
        rec.extend(y.iter().map(|&v| fmt17(v)));
        rec.push(u8::from(traj.change_point.is_post_change(t)).to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads observations back from the [`write_trajectory_csv`] layout.
/// Returns the observations and the first flagged post-change time.
pub fn read_trajectory_csv<R: Read>(input: R) -> Result<(Vec<DVector<f64>>, ChangePoint)> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let k = headers.iter().filter(|h| h.starts_with("y_")).count();
    if k == 0 || headers.get(0) != Some("t") {
        return Err(Error::InvalidConfig("trajectory CSV must have header t,y_1,...".into()));
    }
    let flag_col = headers.iter().position(|h| h == "is_post_change");
    let mut ys = Vec::new();
    let mut change = ChangePoint::Never;
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        let y = (1..=k)
            .map(|c| {
                rec.get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| Error::InvalidConfig(format!("bad value in row {}", row + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(col) = flag_col {
            if change == ChangePoint::Never && rec.get(col).map(str::trim) == Some("1") {
                change = ChangePoint::At(row as u64 + 1);
            }
        }
        ys.push(DVector::from_vec(y));
    }
    Ok((ys, change))
}
