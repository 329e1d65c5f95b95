//! Algebraic maximal-accuracy checks for finite-state models.
//!
//! The filter achieves maximal accuracy exactly when the model is both
//! invertible (a graph condition on the rates and the observation values) and
//! reconstructible (an observability condition on the time-reversed chain).

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{self, RANK_RTOL};
use crate::markov::{self, FiniteStateModel, MarkovError};
use crate::verdict::{ModelFamily, Verdict};

/// Max-norm distance at or below which two observation values count as equal.
pub const OBS_TIE_TOL: f64 = 1e-12;
/// Distances above the tie tolerance but below this (relative) are flagged as near-ties.
pub const OBS_NEAR_TIE_RTOL: f64 = 1e-9;
/// Default cap on the number of words enumerated by the brute-force oracle.
pub const DEFAULT_WORD_BUDGET: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiniteError {
    #[error(transparent)]
    Model(#[from] MarkovError),
    #[error("word enumeration needs {needed} words, budget is {budget}")]
    WordBudgetExceeded { needed: usize, budget: usize },
}

/// A rate pattern that defeats path reconstruction from noiseless observations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InvertibilityViolation {
    /// `from -> to` has a positive rate but `h(from) == h(to)`: the jump is invisible.
    Pair { from: usize, to: usize },
    /// `from` can jump to both `a` and `b` but `h(a) == h(b)`: the target is ambiguous.
    Triple { from: usize, a: usize, b: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvertibilityReport {
    pub ok: bool,
    pub violations: Vec<InvertibilityViolation>,
    /// Pairs of states whose observations differ by less than a relative 1e-9 but are not tied.
    pub near_ties: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructibilityReport {
    pub ok: bool,
    pub dimension: usize,
    pub state_count: usize,
    /// Orthonormal basis of the smallest subspace containing the ones vector and
    /// invariant under the reversed generator and every observation diagonal.
    /// Each inner vector is one basis column.
    pub basis: Vec<Vec<f64>>,
}

fn obs_distance(h: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    (0..h.ncols()).map(|c| (h[(i, c)] - h[(j, c)]).abs()).fold(0.0, f64::max)
}

fn obs_equal(h: &DMatrix<f64>, i: usize, j: usize) -> bool {
    obs_distance(h, i, j) <= OBS_TIE_TOL
}

/// Graph test for invertibility: every jump must change the observation, and
/// the jumps leaving any state must land on pairwise distinct observations.
pub fn check_invertibility(model: &FiniteStateModel) -> InvertibilityReport {
    let d = model.d();
    let lambda = model.lambda();
    let h = model.h();
    let mut violations = Vec::new();
    for i in 0..d {
        let targets: Vec<usize> = (0..d).filter(|&j| j != i && lambda[(i, j)] > 0.0).collect();
        for &j in &targets {
            if obs_equal(h, i, j) {
                violations.push(InvertibilityViolation::Pair { from: i, to: j });
            }
        }
        for (x, &a) in targets.iter().enumerate() {
            for &b in &targets[x + 1..] {
                if obs_equal(h, a, b) {
                    violations.push(InvertibilityViolation::Triple { from: i, a, b });
                }
            }
        }
    }

    let scale = linalg::max_abs(h).max(1.0);
    let mut near_ties = Vec::new();
    for i in 0..d {
        for j in i + 1..d {
            let dist = obs_distance(h, i, j);
            if dist > OBS_TIE_TOL && dist <= OBS_NEAR_TIE_RTOL * scale {
                near_ties.push((i, j));
            }
        }
    }

    InvertibilityReport { ok: violations.is_empty(), violations, near_ties }
}

/// The operators whose joint invariant subspace decides reconstructibility:
/// one diagonal per observation coordinate, then the reversed generator.
fn closure_operators(model: &FiniteStateModel, reversed: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
    let h = model.h();
    let mut ops: Vec<DMatrix<f64>> =
        (0..model.n()).map(|c| DMatrix::from_diagonal(&h.column(c).into_owned())).collect();
    ops.push(reversed.clone());
    ops
}

/// Removes the components of `w` along the orthonormal `basis` (two passes).
fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

/// Smallest subspace containing the ones vector and closed under the reversed
/// generator and each observation diagonal; reconstructible iff it is all of R^d.
pub fn check_reconstructibility(model: &FiniteStateModel) -> Result<ReconstructibilityReport, FiniteError> {
    let d = model.d();
    let reversed = markov::time_reverse(model)?;
    let ops = closure_operators(model, &reversed);
    let scale = ops.iter().map(linalg::norm2).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let threshold = RANK_RTOL * scale;

    let mut basis = vec![DVector::from_element(d, 1.0 / (d as f64).sqrt())];
    let mut frontier = 0;
    while frontier < basis.len() && basis.len() < d {
        let v = basis[frontier].clone();
        frontier += 1;
        for op in &ops {
            let mut w = op * &v;
            orthogonalize(&mut w, &basis);
            let r = w.norm();
            if r > threshold {
                basis.push(w / r);
                if basis.len() == d {
                    break;
                }
            }
        }
    }

    let dimension = basis.len();
    Ok(ReconstructibilityReport {
        ok: dimension == d,
        dimension,
        state_count: d,
        basis: basis.iter().map(|b| b.iter().copied().collect()).collect(),
    })
}

/// Rank of `{W 1 : W a word of length <= max_len}` over the alphabet of observation
/// diagonals and the reversed generator, by explicit enumeration.
pub fn brute_force_reconstructibility(model: &FiniteStateModel, max_len: usize) -> Result<usize, FiniteError> {
    brute_force_reconstructibility_with_budget(model, max_len, DEFAULT_WORD_BUDGET)
}

pub fn brute_force_reconstructibility_with_budget(
    model: &FiniteStateModel,
    max_len: usize,
    budget: usize,
) -> Result<usize, FiniteError> {
    let d = model.d();
    let reversed = markov::time_reverse(model)?;
    let ops = closure_operators(model, &reversed);
    let alphabet = ops.len();

    let mut needed: usize = 0;
    let mut level: usize = 1;
    for _ in 0..=max_len {
        needed = needed.saturating_add(level);
        level = level.saturating_mul(alphabet);
    }
    if needed > budget {
        return Err(FiniteError::WordBudgetExceeded { needed, budget });
    }

    let norms: Vec<f64> = ops.iter().map(linalg::norm2).collect();
    let ones = DVector::from_element(d, 1.0);
    // Each entry carries the vector and the product of operator norms along its word.
    let mut current = vec![(ones.clone(), ones.norm())];
    let mut collected: Vec<DVector<f64>> = Vec::new();
    for len in 0..=max_len {
        for (v, bound) in &current {
            let nv = v.norm();
            if nv > RANK_RTOL * bound {
                collected.push(v / nv);
            }
        }
        if len == max_len {
            break;
        }
        let mut next = Vec::with_capacity(current.len() * alphabet);
        for (v, bound) in &current {
            for (op, &on) in ops.iter().zip(&norms) {
                next.push((op * v, bound * on));
            }
        }
        current = next;
    }

    let m = DMatrix::from_columns(&collected);
    Ok(linalg::numerical_rank(&m))
}

/// Combined verdict: maximal accuracy iff invertible and reconstructible,
/// evaluated on the support of the stationary law.
pub fn finite_verdict(model: &FiniteStateModel) -> Result<Verdict, FiniteError> {
    let reduced = model.reduce_support()?;
    let work = &reduced.model;
    let mut notes = Vec::new();
    if !reduced.is_identity() {
        notes.push(format!("restricted to the stationary support: kept states {:?} of {}", reduced.kept, model.d()));
    }
    if work.n() > 1 {
        notes.push(format!(
            "generalized criterion: {} observation coordinates, span closed under each coordinate diagonal",
            work.n()
        ));
    }

    let mut invertibility = check_invertibility(work);
    let reconstructibility = check_reconstructibility(work)?;
    if !invertibility.near_ties.is_empty() {
        notes.push(format!(
            "near-tied observation values (treated as distinct): {:?}",
            invertibility.near_ties.iter().map(|&(a, b)| (reduced.kept[a], reduced.kept[b])).collect::<Vec<_>>()
        ));
    }
    // Report state labels of the original model.
    let relabel = |i: usize| reduced.kept[i];
    for v in &mut invertibility.violations {
        *v = match *v {
            InvertibilityViolation::Pair { from, to } => {
                InvertibilityViolation::Pair { from: relabel(from), to: relabel(to) }
            }
            InvertibilityViolation::Triple { from, a, b } => {
                InvertibilityViolation::Triple { from: relabel(from), a: relabel(a), b: relabel(b) }
            }
        };
    }
    for t in &mut invertibility.near_ties {
        *t = (relabel(t.0), relabel(t.1));
    }
    if !invertibility.ok {
        notes.push(format!("not invertible: {} violating pattern(s)", invertibility.violations.len()));
    }
    if !reconstructibility.ok {
        notes.push(format!(
            "not reconstructible: invariant span has dimension {} < {}",
            reconstructibility.dimension, reconstructibility.state_count
        ));
    }

    Ok(Verdict {
        family: ModelFamily::Finite,
        maximal_accuracy: invertibility.ok && reconstructibility.ok,
        decided: true,
        invertibility: Some(invertibility),
        reconstructibility: Some(reconstructibility),
        zeros: None,
        analyzed_dimension: work.d(),
        notes,
    })
}
