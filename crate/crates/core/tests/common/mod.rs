#![allow(dead_code)]

use maxacc::linalg;
use maxacc::linear::{is_detectable, is_stabilizable};
use maxacc::{FiniteStateModel, LinearGaussianModel};
use nalgebra::DMatrix;
use proptest::test_runner::Config;
use rand::Rng;

/// Proptest settings without on-disk failure persistence; inputs are plain seeds.
pub fn cases(n: u32) -> Config {
    Config { cases: n, failure_persistence: None, ..Config::default() }
}

pub fn m(rows: usize, data: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, data.len() / rows, data)
}

/// Random generator with a given off-diagonal density; rates in (0.1, 3).
pub fn random_rate_matrix<R: Rng>(rng: &mut R, d: usize, density: f64) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            if i != j && rng.random::<f64>() < density {
                l[(i, j)] = rng.random_range(0.1..3.0);
            }
        }
        let s: f64 = (0..d).map(|j| l[(i, j)]).sum();
        l[(i, i)] = -s;
    }
    l
}

/// Observation table with values drawn from a small alphabet, so ties occur.
pub fn random_h<R: Rng>(rng: &mut R, d: usize, n: usize, tie_prob: f64) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(d, n);
    for i in 0..d {
        if i > 0 && rng.random::<f64>() < tie_prob {
            let j = rng.random_range(0..i);
            for c in 0..n {
                h[(i, c)] = h[(j, c)];
            }
        } else {
            for c in 0..n {
                h[(i, c)] = rng.random_range(-2.0..2.0);
            }
        }
    }
    h
}

/// Random finite model with a unique, fully supported stationary law.
pub fn random_finite_model<R: Rng>(rng: &mut R, max_d: usize, tie_prob: f64) -> FiniteStateModel {
    loop {
        let d = rng.random_range(1..=max_d);
        let density = rng.random_range(0.3..1.0);
        let lambda = random_rate_matrix(rng, d, density);
        let h = random_h(rng, d, 1, tie_prob);
        if let Ok(model) = FiniteStateModel::new(lambda, h) {
            if model.has_full_support() {
                return model;
            }
        }
    }
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random Hurwitz matrix: a random matrix shifted left past its spectral abscissa.
pub fn random_stable<R: Rng>(rng: &mut R, p: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, p, p);
    let shift = linalg::spectral_abscissa(&a) + rng.random_range(0.2..1.5);
    a - DMatrix::identity(p, p) * shift
}

/// Random stable linear model with `m <= n <= p`.
pub fn random_stable_lg<R: Rng>(rng: &mut R, max_p: usize) -> LinearGaussianModel {
    loop {
        let p = rng.random_range(1..=max_p);
        let n = rng.random_range(1..=p);
        let m_in = rng.random_range(1..=n);
        let a = random_stable(rng, p);
        let d = random_matrix(rng, p, m_in);
        let h = random_matrix(rng, n, p);
        if let Ok(model) = LinearGaussianModel::new(a, d, h) {
            return model;
        }
    }
}

/// Random unstable model that is stabilizable and detectable.
pub fn random_unstable_lg<R: Rng>(rng: &mut R, max_p: usize) -> LinearGaussianModel {
    loop {
        let p = rng.random_range(1..=max_p);
        let n = rng.random_range(1..=p);
        let m_in = rng.random_range(1..=n);
        let a = random_matrix(rng, p, p) * 1.5;
        if linalg::spectral_abscissa(&a) <= 0.05 {
            continue;
        }
        let d = random_matrix(rng, p, m_in);
        let h = random_matrix(rng, n, p);
        if !is_stabilizable(&a, &d) || !is_detectable(&a, &h) {
            continue;
        }
        if let Ok(model) = LinearGaussianModel::new(a, d, h) {
            return model;
        }
    }
}

/// Random symmetric positive definite matrix with eigenvalues at least `floor`.
pub fn random_spd<R: Rng>(rng: &mut R, p: usize, floor: f64) -> DMatrix<f64> {
    let b = random_matrix(rng, p, p);
    &b * b.transpose() + DMatrix::identity(p, p) * floor
}

/// Well-conditioned random change of basis.
pub fn random_similarity<R: Rng>(rng: &mut R, p: usize) -> DMatrix<f64> {
    loop {
        let t = DMatrix::identity(p, p) + random_matrix(rng, p, p) * 0.5;
        let s = linalg::singular_values(&t);
        if s[s.len() - 1] > 0.2 {
            return t;
        }
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    linalg::symmetric_eigenvalues(m).into_iter().fold(f64::INFINITY, f64::min)
}
