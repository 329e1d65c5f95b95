//! Stationary Kalman-Bucy error covariance.
//!
//! Solves the filter Riccati equation `A P + P A^T + Q - P S P = 0` with
//! `Q = D D^T` and `S = H^T H / kappa^2` for the stabilizing solution
//! (`A - P S` Hurwitz). The stable invariant subspace of the Hamiltonian is
//! extracted with the matrix sign function, then polished by Newton-Kleinman
//! steps. For small kappa the previous (larger-kappa) solution seeds Newton
//! when the direct route loses accuracy.

use nalgebra::DMatrix;

use super::{lyapunov_solve, LinearError, LinearGaussianModel, Result};
use crate::linalg;

/// Relative residual accepted for a stationary covariance.
pub const RICCATI_RTOL: f64 = 1e-8;
const SIGN_MAX_ITER: usize = 100;
const NEWTON_MAX_ITER: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub kappa: f64,
    /// Stationary error covariance.
    pub p: DMatrix<f64>,
    pub trace: f64,
    pub residual: f64,
}

/// Relative residual of `A P + P A^T + Q - P S P = 0` in the Frobenius norm.
pub fn riccati_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, s: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let ap = a * p;
    let psp = p * s * p;
    let r = &ap + ap.transpose() + q - &psp;
    let scale = 2.0 * ap.norm() + q.norm() + psp.norm();
    if scale == 0.0 {
        r.norm()
    } else {
        r.norm() / scale
    }
}

/// Log of |det| via LU; `None` when singular.
fn log_abs_det(m: &DMatrix<f64>) -> Option<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..u.nrows() {
        let v = u[(i, i)].abs();
        if v == 0.0 || !v.is_finite() {
            return None;
        }
        acc += v.ln();
    }
    Some(acc)
}

/// Matrix sign function by the determinant-scaled Newton iteration.
fn matrix_sign(z: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = z.nrows();
    let mut x = z.clone();
    for it in 0..SIGN_MAX_ITER {
        let inv = x.clone().try_inverse()?;
        // Scaling only helps in the early iterations; dropping it lets the tail converge quadratically.
        let c = if it < 20 { (-log_abs_det(&x)? / n as f64).exp() } else { 1.0 };
        let next = (&x * c + inv / c) * 0.5;
        let delta = (&next - &x).norm();
        let size = next.norm();
        x = next;
        if !size.is_finite() {
            return None;
        }
        if delta <= 1e-13 * size {
            return Some(x);
        }
    }
    Some(x)
}

fn sign_function_solution(a: &DMatrix<f64>, q: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let p = a.nrows();
    let mut ham = DMatrix::zeros(2 * p, 2 * p);
    ham.view_mut((0, 0), (p, p)).copy_from(&a.transpose());
    ham.view_mut((0, p), (p, p)).copy_from(&(-s));
    ham.view_mut((p, 0), (p, p)).copy_from(&(-q));
    ham.view_mut((p, p), (p, p)).copy_from(&(-a));
    let w = matrix_sign(&ham)?;
    // (W + I) [I; P] = 0 on the stable subspace.
    let ident = DMatrix::<f64>::identity(p, p);
    let mut lhs = DMatrix::zeros(2 * p, p);
    lhs.view_mut((0, 0), (p, p)).copy_from(&w.view((0, p), (p, p)));
    lhs.view_mut((p, 0), (p, p)).copy_from(&(w.view((p, p), (p, p)) + &ident));
    let mut rhs = DMatrix::zeros(2 * p, p);
    rhs.view_mut((0, 0), (p, p)).copy_from(&(-(w.view((0, 0), (p, p)) + &ident)));
    rhs.view_mut((p, 0), (p, p)).copy_from(&(-w.view((p, 0), (p, p))));
    let sol = lhs.svd(true, true).solve(&rhs, 1e-14).ok()?;
    let sol = linalg::symmetrize(&sol);
    sol.iter().all(|v| v.is_finite()).then_some(sol)
}

fn is_stabilizing(a: &DMatrix<f64>, s: &DMatrix<f64>, p: &DMatrix<f64>) -> bool {
    linalg::is_hurwitz(&(a - p * s), 0.0)
}

/// Newton-Kleinman iteration from a stabilizing guess.
fn newton_refine(a: &DMatrix<f64>, q: &DMatrix<f64>, s: &DMatrix<f64>, start: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let mut p = start.clone();
    let mut best = (riccati_residual(a, q, s, &p), p.clone());
    for _ in 0..NEWTON_MAX_ITER {
        let closed = a - &p * s;
        let rhs = q + &p * s * &p;
        let next = lyapunov_solve(&closed, &rhs).ok()?;
        let change = (&next - &p).norm();
        let size = next.norm().max(f64::MIN_POSITIVE);
        p = next;
        let res = riccati_residual(a, q, s, &p);
        if res < best.0 {
            best = (res, p.clone());
        }
        if change <= 1e-15 * size {
            break;
        }
    }
    Some(best.1)
}

/// Stabilizing solution of `A P + P A^T + Q - P S P = 0` for symmetric PSD `Q`, `S`.
pub fn solve_filter_are(a: &DMatrix<f64>, q: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_filter_are_from(a, q, s, None)
}

fn solve_filter_are_from(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    s: &DMatrix<f64>,
    warm: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    let mut candidates: Vec<DMatrix<f64>> = Vec::new();
    if let Some(p0) = sign_function_solution(a, q, s) {
        if is_stabilizing(a, s, &p0) {
            if let Some(p) = newton_refine(a, q, s, &p0) {
                candidates.push(p);
            }
        }
    }
    let direct_ok = candidates.first().is_some_and(|p| riccati_residual(a, q, s, p) < RICCATI_RTOL);
    if !direct_ok {
        if let Some(p0) = warm.filter(|p0| is_stabilizing(a, s, p0)) {
            if let Some(p) = newton_refine(a, q, s, p0) {
                candidates.push(p);
            }
        }
    }
    let best = candidates
        .into_iter()
        .filter(|p| is_stabilizing(a, s, p))
        .min_by(|x, y| riccati_residual(a, q, s, x).total_cmp(&riccati_residual(a, q, s, y)));
    match best {
        Some(p) => {
            let res = riccati_residual(a, q, s, &p);
            if res < RICCATI_RTOL {
                Ok(linalg::symmetrize(&p))
            } else {
                Err(LinearError::NoStabilizingSolution(format!("best relative residual {res:.3e}")))
            }
        }
        None => Err(LinearError::NoStabilizingSolution("no stabilizing candidate".into())),
    }
}

fn model_terms(model: &LinearGaussianModel, kappa: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(LinearError::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    let q = model.d() * model.d().transpose();
    let s = model.h().transpose() * model.h() / (kappa * kappa);
    Ok((q, s))
}

fn package(model: &LinearGaussianModel, kappa: f64, p: DMatrix<f64>) -> Result<RiccatiSolution> {
    let (q, s) = model_terms(model, kappa)?;
    let residual = riccati_residual(model.a(), &q, &s, &p);
    Ok(RiccatiSolution { kappa, trace: p.trace(), residual, p })
}

/// Stationary error covariance at noise level `kappa` seeded by a solution at a nearby (larger) kappa.
pub fn riccati_stationary_from(
    model: &LinearGaussianModel,
    kappa: f64,
    warm: Option<&RiccatiSolution>,
) -> Result<RiccatiSolution> {
    let (q, s) = model_terms(model, kappa)?;
    let p = solve_filter_are_from(model.a(), &q, &s, warm.map(|w| &w.p))?;
    package(model, kappa, p)
}

/// Stationary error covariance `P(kappa)`.
///
/// Falls back to a geometric continuation ladder from `kappa = 1` when the
/// direct solve does not meet the residual tolerance.
pub fn riccati_stationary(model: &LinearGaussianModel, kappa: f64) -> Result<RiccatiSolution> {
    match riccati_stationary_from(model, kappa, None) {
        Ok(sol) => Ok(sol),
        Err(direct) => {
            let start = kappa.max(1.0);
            let mut ladder = Vec::new();
            let mut k = start;
            while k > kappa * 1.5 {
                ladder.push(k);
                k /= 2.0;
            }
            ladder.push(kappa);
            let mut warm: Option<RiccatiSolution> = None;
            for k in ladder {
                match riccati_stationary_from(model, k, warm.as_ref()) {
                    Ok(sol) => warm = Some(sol),
                    Err(_) if warm.is_none() => continue,
                    Err(e) => return Err(e),
                }
            }
            match warm {
                Some(sol) if sol.kappa == kappa => Ok(sol),
                _ => Err(direct),
            }
        }
    }
}

/// Solves along `kappas` in the given order, seeding each solve with the previous one.
pub fn riccati_continuation(model: &LinearGaussianModel, kappas: &[f64]) -> Vec<Result<RiccatiSolution>> {
    let mut out = Vec::with_capacity(kappas.len());
    let mut warm: Option<RiccatiSolution> = None;
    for &k in kappas {
        let sol = match &warm {
            None => riccati_stationary(model, k),
            Some(w) => riccati_stationary_from(model, k, Some(w)).or_else(|_| riccati_stationary(model, k)),
        };
        if let Ok(s) = &sol {
            warm = Some(s.clone());
        }
        out.push(sol);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, d: f64, h: f64) -> LinearGaussianModel {
        let one = |v| DMatrix::from_element(1, 1, v);
        LinearGaussianModel::new(one(a), one(d), one(h)).unwrap()
    }

    #[test]
    fn scalar_closed_form() {
        for &(a, d, h) in &[(1.0, 1.0, 1.0), (0.3, 2.0, 0.5), (4.0, 0.2, 3.0)] {
            for &kappa in &[10.0, 1.0, 0.1, 1e-3] {
                let sol = riccati_stationary(&scalar(-a, d, h), kappa).unwrap();
                let exact = kappa * kappa * (-a + (a * a + d * d * h * h / (kappa * kappa)).sqrt()) / (h * h);
                assert!(((sol.trace - exact) / exact).abs() < 1e-10, "a={a} d={d} h={h} k={kappa}");
            }
        }
    }

    #[test]
    fn unstable_scalar_has_stabilizing_solution() {
        // a > 0: P = kappa^2 (a + sqrt(a^2 + d^2 h^2 / kappa^2)) / h^2.
        let sol = riccati_stationary(&scalar(1.0, 1.0, 1.0), 1.0).unwrap();
        assert!((sol.trace - (1.0 + 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn weak_observation_tends_to_lyapunov() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -4.0]);
        let d = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let h = DMatrix::from_row_slice(1, 2, &[1e-8, -2e-8]);
        let model = LinearGaussianModel::new(a.clone(), d.clone(), h).unwrap();
        let sol = riccati_stationary(&model, 1.0).unwrap();
        let sigma = lyapunov_solve(&a, &(&d * d.transpose())).unwrap();
        assert!((sol.p - sigma).amax() < 1e-12);
    }

    #[test]
    fn continuation_reaches_small_kappa() {
        let a = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -4.0]);
        let d = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let h = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let model = LinearGaussianModel::new(a, d, h).unwrap();
        let kappas = [1.0, 0.1, 0.01, 1e-3, 1e-4, 1e-5];
        let sols: Vec<_> = riccati_continuation(&model, &kappas).into_iter().map(|s| s.unwrap()).collect();
        for s in &sols {
            assert!(s.residual < RICCATI_RTOL, "kappa {} residual {}", s.kappa, s.residual);
        }
        assert!(sols.windows(2).all(|w| w[1].trace < w[0].trace));
    }
}
