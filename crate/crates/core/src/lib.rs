//! Quickest detection of a change from white Gaussian noise to an
//! autoregressive signal observed in that noise.
//!
//! The pipeline is: [`model`] (AR parameters, lifting to first order,
//! stationary and fixed-point covariances), [`simulate`] (seeded
//! trajectories), [`filter`] (exact post-change likelihood), [`detect`]
//! (Ergodic, stationary and OGA CuSum), [`experiment`] (Monte-Carlo ARL,
//! delay and drift estimates).

pub mod detect;
pub mod error;
pub mod experiment;
pub mod filter;
pub mod linalg;
pub mod model;
pub mod simulate;

pub use error::{Error, Result};
