mod common;

use common::*;
use maxacc::linalg::{self, to_complex};
use maxacc::linear::{
    lyapunov_solve, reduce_with_gain, riccati_continuation, riccati_stationary, stabilizing_gain, transfer_eval,
    GainDesign, RICCATI_RTOL,
};
use maxacc::{kappa_sweep_lg, ks_check, transmission_zeros, Consistency, LinearGaussianModel, Trend};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ks_model(h: &[f64]) -> LinearGaussianModel {
    LinearGaussianModel::new(m(2, &[-1.0, 0.0, 0.0, -4.0]), m(2, &[1.0, 1.0]), m(1, h)).unwrap()
}

/// `sigma_min(G(s)) / (|H| |(sI - A)^{-1} D|)`, computed independently of the library.
fn rank_drop(model: &LinearGaussianModel, s: Complex64) -> f64 {
    let p = model.p();
    let mut r = -to_complex(model.a());
    for i in 0..p {
        r[(i, i)] += s;
    }
    let x = r.lu().solve(&to_complex(model.d())).unwrap();
    let g = to_complex(model.h()) * &x;
    let sv = linalg::complex_singular_values(&g);
    sv[model.m() - 1] / (linalg::norm2(model.h()) * linalg::complex_norm2(&x))
}

/// Simpson quadrature of `int_0^T e^{At} Q e^{A^T t} dt` with `T` past the slowest decay.
fn lyapunov_by_quadrature(a: &DMatrix<f64>, q: &DMatrix<f64>) -> DMatrix<f64> {
    let decay = -linalg::spectral_abscissa(a);
    let horizon = 40.0 / decay;
    let steps = 40_000;
    let h = horizon / steps as f64;
    let step = (a * h).exp();
    let mut e = DMatrix::identity(a.nrows(), a.nrows());
    let mut acc = q.clone();
    for k in 1..=steps {
        e = &step * &e;
        let term = &e * q * e.transpose();
        let w = if k == steps {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        acc += term * w;
    }
    acc * (h / 3.0)
}

proptest! {
    #![proptest_config(cases(100))]

    #[test]
    fn riccati_is_monotone_in_kappa(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_stable_lg(&mut rng, 4);
        let kappas = [3.0, 1.0, 0.3, 0.1, 0.03];
        let sols: Vec<_> = riccati_continuation(&model, &kappas).into_iter().map(Result::unwrap).collect();
        for s in &sols {
            prop_assert!(s.residual < RICCATI_RTOL);
            prop_assert!((&s.p - s.p.transpose()).abs().max() <= 1e-10 * linalg::max_abs(&s.p).max(1.0));
            prop_assert!(min_sym_eig(&s.p) >= -1e-10 * linalg::norm2(&s.p).max(1.0));
        }
        for w in sols.windows(2) {
            let scale = linalg::norm2(&w[0].p).max(1.0);
            prop_assert!(min_sym_eig(&(&w[0].p - &w[1].p)) >= -1e-9 * scale);
        }
    }

    #[test]
    fn zeros_and_verdicts_survive_similarity(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_stable_lg(&mut rng, 4);
        let t = random_similarity(&mut rng, model.p());
        let other = model.similarity(&t).unwrap();
        let (a, b) = (ks_check(&model).unwrap(), ks_check(&other).unwrap());
        prop_assert_eq!(a.maximal_accuracy, b.maximal_accuracy);
        prop_assert_eq!(a.decided, b.decided);
        let za = a.zeros.unwrap().zeros;
        let zb = b.zeros.unwrap().zeros;
        prop_assert_eq!(za.len(), zb.len());
        for z in &za {
            let best = zb.iter().map(|w| (z.value() - w.value()).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(best <= 1e-8 * z.value().norm().max(1.0), "zero {} moved by {best:e}", z.value());
        }
    }

    #[test]
    fn reported_zeros_are_rank_drops_in_conjugate_pairs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_stable_lg(&mut rng, 4);
        let report = transmission_zeros(&model).unwrap();
        for z in report.zeros.iter().filter(|z| !z.at_pole) {
            prop_assert!(rank_drop(&model, z.value()) < 1e-7);
            if z.im != 0.0 {
                let conj = z.value().conj();
                prop_assert!(report.zeros.iter().any(|w| (w.value() - conj).norm() <= 1e-8 * conj.norm().max(1.0)));
            }
        }
        // Random points away from the zero set keep full column rank.
        let zs: Vec<Complex64> = report.zeros.iter().map(|z| z.value()).collect();
        let poles = linalg::eigenvalues(model.a());
        let mut checked = 0;
        while checked < 100 {
            let s = Complex64::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            if zs.iter().chain(&poles).any(|z| (z - s).norm() < 0.05) {
                continue;
            }
            checked += 1;
            if report.normal_rank == model.m() {
                prop_assert!(rank_drop(&model, s) > 1e-7, "s = {s}");
            }
        }
    }

    #[test]
    fn verdict_does_not_depend_on_the_injection_gain(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_unstable_lg(&mut rng, 4);
        let design = GainDesign { state_weight: random_spd(&mut rng, model.p(), 0.1), output_weight: rng.random_range(0.2..5.0) };
        let k1 = stabilizing_gain(model.a(), model.h(), &GainDesign::identity(model.p())).unwrap();
        let k2 = stabilizing_gain(model.a(), model.h(), &design).unwrap();
        let a = ks_check(&reduce_with_gain(&model, &k1).unwrap().model).unwrap();
        let b = ks_check(&reduce_with_gain(&model, &k2).unwrap().model).unwrap();
        prop_assert_eq!(a.maximal_accuracy, b.maximal_accuracy);
        prop_assert_eq!(a.decided, b.decided);
        prop_assert_eq!(a.zeros.unwrap().zeros.len(), b.zeros.unwrap().zeros.len());
    }

    #[test]
    fn stable_models_need_no_injection(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_stable_lg(&mut rng, 4);
        let k = stabilizing_gain(model.a(), model.h(), &GainDesign::identity(model.p())).unwrap();
        let a = ks_check(&model).unwrap();
        let b = ks_check(&reduce_with_gain(&model, &k).unwrap().model).unwrap();
        prop_assert_eq!(a.maximal_accuracy, b.maximal_accuracy);
        prop_assert_eq!(a.decided, b.decided);
    }
}

proptest! {
    #![proptest_config(cases(20))]

    #[test]
    fn lyapunov_matches_quadrature(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = rng.random_range(1..=4);
        let a = random_stable(&mut rng, p);
        let d = random_matrix(&mut rng, p, p);
        let q = &d * d.transpose();
        let sigma = lyapunov_solve(&a, &q).unwrap();
        let oracle = lyapunov_by_quadrature(&a, &q);
        let err = linalg::max_abs(&(&sigma - &oracle)) / linalg::max_abs(&oracle).max(1e-12);
        prop_assert!(err < 1e-9, "relative error {err:e}");
    }

    #[test]
    fn unstable_riccati_solution_is_stabilizing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_unstable_lg(&mut rng, 4);
        let kappa = 0.5;
        let sol = riccati_stationary(&model, kappa).unwrap();
        let s = model.h().transpose() * model.h() / (kappa * kappa);
        prop_assert!(linalg::is_hurwitz(&(model.a() - &sol.p * s), 0.0));
        prop_assert!(min_sym_eig(&sol.p) >= -1e-10 * linalg::norm2(&sol.p).max(1.0));
    }
}

#[test]
fn example_riccati_approaches_lyapunov_for_weak_observations() {
    let model = ks_model(&[1.0, -2.0]);
    let sigma = lyapunov_solve(model.a(), &(model.d() * model.d().transpose())).unwrap();
    let sol = riccati_stationary(&model, 1e3).unwrap();
    let rel = (&sol.p - &sigma).norm() / sigma.norm();
    assert!(rel < 1e-3, "relative gap {rel}");
}

#[test]
fn fully_observed_modes_decay_linearly() {
    // A = -I, D = I, H = I: every mode solves -2x + 1 - x^2 / kappa^2 = 0.
    let p = 3;
    let model =
        LinearGaussianModel::new(-DMatrix::identity(p, p), DMatrix::identity(p, p), DMatrix::identity(p, p)).unwrap();
    for &kappa in &[1.0, 0.1, 0.01, 1e-3] {
        let sol = riccati_stationary(&model, kappa).unwrap();
        let per_mode = kappa * kappa * (-1.0 + (1.0 + 1.0 / (kappa * kappa)).sqrt());
        assert!((sol.trace - p as f64 * per_mode).abs() < 1e-9 * sol.trace.max(1e-12), "kappa {kappa}");
    }
    let sweep = kappa_sweep_lg(&model, &[1e-1, 1e-2, 1e-3, 1e-4]).unwrap();
    assert_eq!(sweep.trend, Trend::Decays);
    assert_eq!(sweep.flag, Consistency::Consistent);
    assert!((sweep.slope.unwrap() - 1.0).abs() < 0.05);
}

#[test]
fn example_sweeps_are_consistent() {
    let kappas = [1e-1, 1e-2, 1e-3, 1e-4];
    let plateau = kappa_sweep_lg(&ks_model(&[1.0, -2.0]), &kappas).unwrap();
    assert_eq!(plateau.trend, Trend::Plateau);
    assert_eq!(plateau.flag, Consistency::Consistent);
    assert!(!plateau.verdict_reference.maximal_accuracy);
    let decay = kappa_sweep_lg(&ks_model(&[1.0, 2.0]), &kappas).unwrap();
    assert_eq!(decay.trend, Trend::Decays);
    assert_eq!(decay.flag, Consistency::Consistent);
}

#[test]
fn transfer_eval_matches_partial_fractions() {
    let model = ks_model(&[1.0, -2.0]);
    for s in [Complex64::new(0.5, 0.0), Complex64::new(1.0, 2.0), Complex64::new(-2.0, -3.0)] {
        let g = transfer_eval(&model, s).unwrap()[(0, 0)];
        let exact = 1.0 / (s + 1.0) - 2.0 / (s + 4.0);
        assert!((g - exact).norm() < 1e-14);
    }
}
