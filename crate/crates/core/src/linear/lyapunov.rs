//! Continuous Lyapunov equation `A X + X A^T + Q = 0` by Bartels-Stewart.

use nalgebra::{DMatrix, DVector};

use super::{LinearError, Result, STABILITY_MARGIN};
use crate::linalg;

/// Diagonal blocks (start, size) of a real quasi-triangular Schur factor.
fn schur_blocks(t: &DMatrix<f64>) -> Vec<(usize, usize)> {
    let p = t.nrows();
    let tol = f64::EPSILON * linalg::max_abs(t).max(1.0);
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < p {
        if i + 1 < p && t[(i + 1, i)].abs() > tol {
            blocks.push((i, 2));
            i += 2;
        } else {
            blocks.push((i, 1));
            i += 1;
        }
    }
    blocks
}

/// Solves `T Y + Y T^T = C` for quasi-upper-triangular `T`, one column block at
/// a time from the right.
fn solve_quasi_triangular(t: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = t.nrows();
    let mut y = DMatrix::zeros(p, p);
    for &(j0, size) in schur_blocks(t).iter().rev() {
        // Right-hand side: C_J - sum over later columns k of Y_k T_{j,k}.
        let mut rhs = DVector::zeros(p * size);
        for b in 0..size {
            let j = j0 + b;
            let mut col = c.column(j).into_owned();
            for k in j0 + size..p {
                let w = t[(j, k)];
                if w != 0.0 {
                    col.axpy(-w, &y.column(k), 1.0);
                }
            }
            rhs.rows_mut(b * p, p).copy_from(&col);
        }
        // Coefficient: T acting on each column plus the coupling T_JJ^T across the block.
        let mut m = DMatrix::zeros(p * size, p * size);
        for b in 0..size {
            m.view_mut((b * p, b * p), (p, p)).copy_from(t);
            for e in 0..size {
                let w = t[(j0 + b, j0 + e)];
                for i in 0..p {
                    m[(b * p + i, e * p + i)] += w;
                }
            }
        }
        let sol = m.lu().solve(&rhs).ok_or(LinearError::NotStable(f64::NAN))?;
        for b in 0..size {
            y.column_mut(j0 + b).copy_from(&sol.rows(b * p, p));
        }
    }
    Ok(y)
}

/// Unique symmetric solution of `A X + X A^T + Q = 0` for Hurwitz `A`.
pub fn lyapunov_solve(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = a.nrows();
    if a.ncols() != p || q.nrows() != p || q.ncols() != p {
        return Err(LinearError::DimensionMismatch(format!(
            "Lyapunov equation needs square A and Q of the same size, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            q.nrows(),
            q.ncols()
        )));
    }
    let abscissa = linalg::spectral_abscissa(a);
    if !(abscissa < -STABILITY_MARGIN) {
        return Err(LinearError::NotStable(abscissa));
    }
    let (u, t) = a.clone().schur().unpack();
    let c = -(u.transpose() * q * &u);
    let y = solve_quasi_triangular(&t, &c)?;
    Ok(linalg::symmetrize(&(&u * y * u.transpose())))
}

/// Relative residual `|A X + X A^T + Q| / (2|A||X| + |Q|)` in the Frobenius norm.
pub fn lyapunov_residual(a: &DMatrix<f64>, x: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    let r = a * x + x * a.transpose() + q;
    let scale = 2.0 * a.norm() * x.norm() + q.norm();
    if scale == 0.0 {
        r.norm()
    } else {
        r.norm() / scale
    }
}
