//! Small dense linear-algebra helpers shared by the analysis modules.
//!
//! Everything here works on `nalgebra` dynamic matrices; the matrices in this
//! crate are tiny (a handful of states), so clarity wins over blocking.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Relative singular-value threshold used for every rank decision.
pub const RANK_RTOL: f64 = 1e-9;

pub type CMatrix = DMatrix<Complex64>;

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn complex_singular_values(m: &CMatrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Number of singular values above `rtol * sigma_max`.
pub fn rank_from_singular_values(s: &[f64], rtol: f64) -> usize {
    match s.first() {
        Some(&max) if max > 0.0 => s.iter().filter(|&&x| x > rtol * max).count(),
        _ => 0,
    }
}

pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    rank_from_singular_values(&singular_values(m), RANK_RTOL)
}

pub fn complex_rank(m: &CMatrix, rtol: f64) -> usize {
    rank_from_singular_values(&complex_singular_values(m), rtol)
}

pub fn to_complex(m: &DMatrix<f64>) -> CMatrix {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Eigenvalues of a real square matrix, sorted by real part then imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<Complex64> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    ev
}

/// Largest real part of the spectrum (spectral abscissa).
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn is_hurwitz(m: &DMatrix<f64>, margin: f64) -> bool {
    m.nrows() == 0 || spectral_abscissa(m) < -margin
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = symmetrize(m).symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Orthonormal basis of the null space of `m` (columns), using the SVD threshold.
pub fn null_space(m: &DMatrix<f64>, rtol: f64) -> DMatrix<f64> {
    let n = m.ncols();
    // Pad to square so the SVD returns a full right basis.
    let rows = m.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let smax = svd.singular_values.max();
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| smax <= 0.0 || s <= rtol * smax)
        .map(|(i, _)| v_t.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Full orthogonal `U` (rows x rows) whose leading `rank` columns span the
/// range of `m`, counting singular values above the absolute tolerance `tol`.
pub fn range_split(m: &DMatrix<f64>, tol: f64) -> (DMatrix<f64>, usize) {
    let r = m.nrows();
    if r == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let cols = m.ncols().max(r);
    let mut padded = DMatrix::zeros(r, cols);
    padded.view_mut((0, 0), (r, m.ncols())).copy_from(m);
    let svd = padded.svd(true, false);
    let u = svd.u.expect("u requested");
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let rank = order.iter().filter(|&&i| svd.singular_values[i] > tol).count();
    let cols: Vec<DVector<f64>> = order.iter().map(|&i| u.column(i).into_owned()).collect();
    (DMatrix::from_columns(&cols), rank)
}

/// Maximum absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn complex_norm2(m: &CMatrix) -> f64 {
    complex_singular_values(m).first().copied().unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_of_outer_product_is_one() {
        let u = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let m = &u * u.transpose();
        assert_eq!(numerical_rank(&m), 1);
    }

    #[test]
    fn null_space_of_rate_matrix_transpose() {
        let m = DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 1.0, -1.0]);
        let ns = null_space(&m.transpose(), 1e-10);
        assert_eq!(ns.ncols(), 1);
        let v = ns.column(0);
        assert!((v[1] / v[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_sorted_and_conjugate() {
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let ev = eigenvalues(&m);
        assert!((ev[0].im + 1.0).abs() < 1e-12);
        assert!((ev[1].im - 1.0).abs() < 1e-12);
        assert!(!is_hurwitz(&m, 0.0));
    }
}
