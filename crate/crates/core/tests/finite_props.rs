mod common;

use common::*;
use maxacc::finite::{brute_force_reconstructibility, check_invertibility};
use maxacc::{check_reconstructibility, finite_verdict, FiniteStateModel};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn permuted(model: &FiniteStateModel, perm: &[usize]) -> FiniteStateModel {
    let d = model.d();
    let lambda = DMatrix::from_fn(d, d, |i, j| model.lambda()[(perm[i], perm[j])]);
    let h = DMatrix::from_fn(d, model.n(), |i, c| model.h()[(perm[i], c)]);
    FiniteStateModel::new(lambda, h).unwrap()
}

proptest! {
    #![proptest_config(cases(256))]

    #[test]
    fn closure_matches_word_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_finite_model(&mut rng, 4, 0.3);
        let fast = check_reconstructibility(&model).unwrap().dimension;
        let slow = brute_force_reconstructibility(&model, model.d()).unwrap();
        prop_assert_eq!(fast, slow);
    }

    #[test]
    fn verdicts_are_permutation_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_finite_model(&mut rng, 5, 0.3);
        let mut perm: Vec<usize> = (0..model.d()).collect();
        perm.shuffle(&mut rng);
        let a = finite_verdict(&model).unwrap();
        let b = finite_verdict(&permuted(&model, &perm)).unwrap();
        prop_assert_eq!(a.invertible(), b.invertible());
        prop_assert_eq!(a.reconstructible(), b.reconstructible());
        prop_assert_eq!(
            a.reconstructibility.unwrap().dimension,
            b.reconstructibility.unwrap().dimension
        );
    }

    #[test]
    fn invertibility_ignores_affine_rescaling(seed in any::<u64>(), scale in prop_oneof![-3.0f64..-0.25, 0.25f64..3.0], shift in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_finite_model(&mut rng, 5, 0.4);
        let h = model.h().map(|x| scale * x + shift);
        let other = FiniteStateModel::new(model.lambda().clone(), h).unwrap();
        let a = check_invertibility(&model);
        let b = check_invertibility(&other);
        prop_assert_eq!(a.ok, b.ok);
        prop_assert_eq!(a.violations, b.violations);
    }

    #[test]
    fn duplicate_observation_column_changes_nothing(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_finite_model(&mut rng, 5, 0.3);
        let h = model.h();
        let doubled = DMatrix::from_fn(model.d(), 2, |i, _| h[(i, 0)]);
        let other = FiniteStateModel::new(model.lambda().clone(), doubled).unwrap();
        let a = finite_verdict(&model).unwrap();
        let b = finite_verdict(&other).unwrap();
        prop_assert_eq!(a.invertible(), b.invertible());
        prop_assert_eq!(a.reconstructible(), b.reconstructible());
        prop_assert_eq!(a.maximal_accuracy, b.maximal_accuracy);
    }

    #[test]
    fn closure_basis_contains_the_ones_vector(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_finite_model(&mut rng, 6, 0.3);
        let report = check_reconstructibility(&model).unwrap();
        prop_assert!(report.dimension >= 1 && report.dimension <= model.d());
        let ones = DVector::from_element(model.d(), 1.0);
        let mut residual = ones.clone();
        for col in &report.basis {
            let v = DVector::from_column_slice(col);
            residual -= &v * v.dot(&ones);
        }
        prop_assert!(residual.norm() < 1e-10 * ones.norm());
    }

    #[test]
    fn verdict_is_the_conjunction(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_finite_model(&mut rng, 6, 0.3);
        let v = finite_verdict(&model).unwrap();
        prop_assert!(v.decided);
        prop_assert_eq!(v.maximal_accuracy, v.invertible().unwrap() && v.reconstructible().unwrap());
    }
}

#[test]
fn distinct_observations_on_a_random_chain_are_maximally_accurate() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let d = rng.random_range(2..=6);
        let lambda = random_rate_matrix(&mut rng, d, 1.0);
        let h: Vec<f64> = (0..d).map(|i| i as f64).collect();
        let model = FiniteStateModel::with_scalar_observation(lambda, &h).unwrap();
        let v = finite_verdict(&model).unwrap();
        assert!(v.invertible().unwrap());
    }
}
