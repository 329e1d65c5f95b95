//! Decides whether the optimal filter of a finite-state or linear-Gaussian
//! model becomes exact as the observation noise vanishes, and checks each
//! algebraic verdict against the filtering error measured over a sweep of
//! noise strengths.
//!
//! - [`markov`]: finite-state signals, stationary law, time reversal, sampling.
//! - [`finite`]: invertibility and reconstructibility tests for finite models.
//! - [`wonham`]: Monte-Carlo estimates of the stationary filtering error.
//! - [`linear`]: transmission zeros, Lyapunov and Riccati solvers, output injection.
//! - [`sweep`]: sweep rows and the decay/plateau classifier shared by both families.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod finite;
pub mod linalg;
pub mod linear;
pub mod markov;
pub mod sweep;
pub mod verdict;
pub mod wonham;

pub use finite::{
    brute_force_reconstructibility, check_invertibility, check_reconstructibility, finite_verdict, FiniteError,
};
pub use linear::{kappa_sweep_lg, ks_check, transmission_zeros, LinearError, LinearGaussianModel};
pub use markov::{stationary_distribution, time_reverse, FiniteStateModel, MarkovError};
pub use sweep::{Consistency, SweepResult, SweepRow, Trend};
pub use verdict::{ModelFamily, Verdict};
pub use wonham::{estimate_stationary_error, kappa_sweep_finite, run_filter, SimError, SimParams, TestFunction};
