//! Linear-Gaussian models `dX = AX dt + D dW`, `dY = HX dt + kappa dB`.
//!
//! The filter reaches maximal accuracy exactly when the transfer matrix
//! `H (sI - A)^{-1} D` keeps linearly independent columns on the open right
//! half plane. Unstable signals are first moved to a stable realization by
//! output injection `A - KH`, which leaves that rank condition unchanged.

mod gain;
mod lyapunov;
mod riccati;
mod zeros;

pub use gain::{detectability_gain, reduce_unstable, reduce_with_gain, stabilizing_gain, GainDesign, ReducedSystem};
pub use lyapunov::{lyapunov_residual, lyapunov_solve};
pub use riccati::{
    riccati_continuation, riccati_residual, riccati_stationary, riccati_stationary_from, solve_filter_are,
    RiccatiSolution, RICCATI_RTOL,
};
pub use zeros::{
    ks_check, transfer_eval, transmission_zeros, TransmissionZero, ZeroClass, ZeroReport, ZeroStructure, BOUNDARY_BAND,
};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, RANK_RTOL};
use crate::sweep::{classify_sweep, SweepResult, SweepRow};

/// Margin by which a matrix must be Hurwitz to count as asymptotically stable.
pub const STABILITY_MARGIN: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinearError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("{0} is not of full rank")]
    RankDeficientDorH(&'static str),
    #[error("model is unstable and not both stabilizable and detectable (stabilizable: {stabilizable}, detectable: {detectable})")]
    NotDetectableOrStabilizable { stabilizable: bool, detectable: bool },
    #[error("(A, H) is not detectable")]
    NotDetectable,
    #[error("matrix is not asymptotically stable (spectral abscissa {0})")]
    NotStable(f64),
    #[error("shift {0} is an eigenvalue of A")]
    SingularShift(Complex64),
    #[error("no stabilizing Riccati solution: {0}")]
    NoStabilizingSolution(String),
    #[error("ill-conditioned pencil: {0}")]
    IllConditionedPencil(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, LinearError>;

/// `dX = AX dt + D dW`, `dY = HX dt + kappa dB` with `A: p x p`, `D: p x m`, `H: n x p`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianModel {
    a: DMatrix<f64>,
    d: DMatrix<f64>,
    h: DMatrix<f64>,
}

impl LinearGaussianModel {
    /// Checks shapes, finiteness, full rank of `D` and `H`, and `m, n <= p`.
    pub fn new(a: DMatrix<f64>, d: DMatrix<f64>, h: DMatrix<f64>) -> Result<Self> {
        let p = a.nrows();
        if p == 0 || a.ncols() != p {
            return Err(LinearError::DimensionMismatch(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if d.nrows() != p || d.ncols() == 0 {
            return Err(LinearError::DimensionMismatch(format!(
                "D must be {p}xm with m >= 1, got {}x{}",
                d.nrows(),
                d.ncols()
            )));
        }
        if h.ncols() != p || h.nrows() == 0 {
            return Err(LinearError::DimensionMismatch(format!(
                "H must be nx{p} with n >= 1, got {}x{}",
                h.nrows(),
                h.ncols()
            )));
        }
        for (name, mat) in [("A", &a), ("D", &d), ("H", &h)] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(LinearError::InvalidArgument(format!("{name} has non-finite entries")));
            }
        }
        if d.ncols() > p || h.nrows() > p {
            return Err(LinearError::DimensionMismatch(format!(
                "need m <= p and n <= p, got p={p}, m={}, n={}",
                d.ncols(),
                h.nrows()
            )));
        }
        if linalg::numerical_rank(&d) < d.ncols() {
            return Err(LinearError::RankDeficientDorH("D"));
        }
        if linalg::numerical_rank(&h) < h.nrows() {
            return Err(LinearError::RankDeficientDorH("H"));
        }
        Ok(Self { a, d, h })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// State dimension.
    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    /// Signal noise dimension.
    pub fn m(&self) -> usize {
        self.d.ncols()
    }

    /// Observation dimension.
    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_stable(&self) -> bool {
        linalg::is_hurwitz(&self.a, STABILITY_MARGIN)
    }

    /// Same model with `A` replaced; `D` and `H` are already validated.
    pub(crate) fn with_a(&self, a: DMatrix<f64>) -> Self {
        Self { a, d: self.d.clone(), h: self.h.clone() }
    }

    /// Realization in the coordinates `x' = T x`: `(T A T^-1, T D, H T^-1)`.
    pub fn similarity(&self, t: &DMatrix<f64>) -> Result<Self> {
        let t_inv = t
            .clone()
            .try_inverse()
            .ok_or_else(|| LinearError::InvalidArgument("similarity transform is singular".into()))?;
        Self::new(t * &self.a * &t_inv, t * &self.d, &self.h * &t_inv)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ModelStatus {
    pub stable: bool,
    pub stabilizable: bool,
    pub detectable: bool,
}

fn unstable_modes(a: &DMatrix<f64>) -> Vec<Complex64> {
    let scale = linalg::max_abs(a).max(1.0);
    linalg::eigenvalues(a).into_iter().filter(|z| z.re >= -1e-12 * scale).collect()
}

/// PBH test: `[sI - A, D]` has full row rank at every closed-right-half-plane eigenvalue.
pub fn is_stabilizable(a: &DMatrix<f64>, d: &DMatrix<f64>) -> bool {
    let p = a.nrows();
    unstable_modes(a).into_iter().all(|s| {
        let mut m = linalg::CMatrix::zeros(p, p + d.ncols());
        for i in 0..p {
            for j in 0..p {
                m[(i, j)] = Complex64::new(-a[(i, j)], 0.0);
            }
            m[(i, i)] += s;
            for j in 0..d.ncols() {
                m[(i, p + j)] = Complex64::new(d[(i, j)], 0.0);
            }
        }
        linalg::complex_rank(&m, RANK_RTOL) == p
    })
}

/// PBH test: `[sI - A; H]` has full column rank at every closed-right-half-plane eigenvalue.
pub fn is_detectable(a: &DMatrix<f64>, h: &DMatrix<f64>) -> bool {
    is_stabilizable(&a.transpose(), &h.transpose())
}

/// Stability of `A` plus the PBH stabilizability/detectability tests.
///
/// An unstable model is rejected unless it is both stabilizable and
/// detectable, since only then does a stationary filtering error exist.
pub fn validate_model(model: &LinearGaussianModel) -> Result<ModelStatus> {
    let status = ModelStatus {
        stable: model.is_stable(),
        stabilizable: is_stabilizable(&model.a, &model.d),
        detectable: is_detectable(&model.a, &model.h),
    };
    if !status.stable && !(status.stabilizable && status.detectable) {
        return Err(LinearError::NotDetectableOrStabilizable {
            stabilizable: status.stabilizable,
            detectable: status.detectable,
        });
    }
    Ok(status)
}

/// Riccati-trace sweep: one row `(kappa, trace P(kappa))` per noise level,
/// solved by continuation from the largest kappa down, then classified
/// against `ks_check`.
pub fn kappa_sweep_lg(model: &LinearGaussianModel, kappas: &[f64]) -> Result<SweepResult> {
    if kappas.is_empty() || kappas.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(LinearError::InvalidArgument("kappas must be a nonempty list of positive numbers".into()));
    }
    let verdict = ks_check(model)?;
    let mut sorted = kappas.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    sorted.dedup();

    let solutions = riccati_continuation(model, &sorted);
    let mut rows = Vec::with_capacity(sorted.len());
    for (kappa, sol) in sorted.iter().zip(solutions) {
        rows.push(match sol {
            Ok(s) => SweepRow::deterministic(*kappa, s.trace),
            Err(e) => SweepRow::failed(*kappa, e.to_string()),
        });
    }

    let (reference_variance, note) = if model.is_stable() {
        let sigma = lyapunov_solve(&model.a, &(&model.d * model.d.transpose()))?;
        (sigma.trace(), "reference: trace of the stationary signal covariance".to_string())
    } else {
        let first = rows.iter().find_map(|r| r.estimate).unwrap_or(0.0);
        (first, "reference: largest-kappa error (signal has no stationary covariance)".to_string())
    };
    let mut result = classify_sweep(rows, verdict, reference_variance);
    result.notes.push(note);
    Ok(result)
}
