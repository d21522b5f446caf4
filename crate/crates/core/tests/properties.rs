use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use seagle::linalg::{factorization_count, ImplicitProjector};
use seagle::oracle::{dense_eigen_weights, DenseNullModel};
use seagle::reml::{fit_null, EmConfig};
use seagle::vctest::{
    compute_py, run_test, NullProjection, TestInput, EIG_ABS_FLOOR, EIG_REL_FLOOR,
};
use seagle::PvalueOptions;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(rng))
}

/// Null data with a genetic main effect so EM has something to fit.
fn instance(seed: u64, n: usize, l: usize) -> TestInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = randn(&mut rng, n, 3);
    x.column_mut(0).fill(1.0);
    let g = DMatrix::from_fn(n, l, |_, _| {
        (rng.gen::<f64>() < 0.2) as u8 as f64 + (rng.gen::<f64>() < 0.2) as u8 as f64
    });
    let b = randn(&mut rng, l, 1);
    let e = randn(&mut rng, n, 1);
    let y = &x * DVector::from_element(3, 1.0) + &g * b.column(0) * 0.5 + e.column(0);
    TestInput::new(y, x, 2, g).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn energy_split_through_projector(seed in any::<u64>(), n in 8usize..120) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = randn(&mut rng, n, 3);
        x.column_mut(0).fill(1.0);
        let proj = ImplicitProjector::new(&x).unwrap();
        let w = randn(&mut rng, n, 1);
        let a = proj.apply_at(&w).unwrap().norm_squared();
        let q = proj.apply_q1t(&w).unwrap().norm_squared();
        prop_assert!(rel(a + q, w.norm_squared()) < 1e-12);
    }

    #[test]
    fn em_iterates_stay_above_floor_and_ignore_beta(seed in any::<u64>(), n in 30usize..150, l in 1usize..10) {
        let inp = instance(seed, n, l);
        let cfg = EmConfig { keep_trajectory: true, ..EmConfig::default() };
        let before = factorization_count();
        let fit = fit_null(inp.y(), inp.g(), inp.x(), &cfg).unwrap();
        prop_assert_eq!(factorization_count() - before, fit.n_iter as u64);
        let traj = fit.trajectory.clone().unwrap();
        prop_assert!(traj.iter().all(|&(t, s)| t >= cfg.floor && s >= cfg.floor));

        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let delta = randn(&mut rng, 3, 1).column(0) * 10.0;
        let shifted = inp.y() + inp.x() * delta;
        let fit2 = fit_null(&shifted, inp.g(), inp.x(), &cfg).unwrap();
        prop_assert_eq!(fit.n_iter, fit2.n_iter);
        for (a, b) in traj.iter().zip(fit2.trajectory.unwrap()) {
            prop_assert!(rel(b.0, a.0) < 1e-10 && rel(b.1, a.1) < 1e-10);
        }
        if fit.converged {
            let k = traj.len();
            let (t1, s1) = traj[k - 2];
            let (t2, s2) = traj[k - 1];
            let change = ((t2 - t1).abs() / t1.max(cfg.floor)).max((s2 - s1).abs() / s1.max(cfg.floor));
            prop_assert!(change < cfg.rel_tol);
        }
    }

    #[test]
    fn statistic_ignores_fixed_effect_shift(seed in any::<u64>(), n in 30usize..150, l in 1usize..10) {
        let inp = instance(seed, n, l);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let delta = randn(&mut rng, 3, 1).column(0) * 5.0;
        let y2 = inp.y() + inp.x() * delta;
        let inp2 = TestInput::new(y2, inp.x().clone(), 2, inp.g().clone()).unwrap();
        let t1 = NullProjection::new(&inp, 0.6, 1.4).unwrap().statistic().unwrap().0;
        let t2 = NullProjection::new(&inp2, 0.6, 1.4).unwrap().statistic().unwrap().0;
        prop_assert!((t1 - t2).abs() <= 1e-9 * t1.max(1e-300));
    }

    #[test]
    fn pvp_equals_p(seed in any::<u64>(), n in 20usize..80, l in 1usize..8) {
        let inp = instance(seed, n, l);
        let model = DenseNullModel::new(&inp, 0.9, 1.1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let y = randn(&mut rng, n, 1).column(0).into_owned();
        let py = &model.p_mat * &y;
        let pvpy = &model.p_mat * (&model.v * &py);
        prop_assert!((pvpy - &py).norm() / py.norm() < 1e-9);
        let inp_y = TestInput::new(y, inp.x().clone(), 2, inp.g().clone()).unwrap();
        let fast = compute_py(&inp_y, 0.9, 1.1).unwrap();
        prop_assert!((fast - &py).norm() / py.norm() < 1e-9);
    }

    #[test]
    fn weight_spectra_agree_with_dense_route(seed in any::<u64>(), n in 20usize..300, l in 1usize..15) {
        let inp = instance(seed, n, l);
        let fast = NullProjection::new(&inp, 0.8, 1.2).unwrap().eigen_weights().unwrap();
        let dense = dense_eigen_weights(&inp, 0.8, 1.2).unwrap();
        prop_assert_eq!(fast.len(), dense.len());
        for (a, b) in fast.iter().zip(&dense) {
            prop_assert!(rel(*a, *b) < 1e-8);
        }
    }

    #[test]
    fn result_fields_respect_their_ranges(seed in any::<u64>(), n in 30usize..200, l in 1usize..12) {
        let inp = instance(seed, n, l);
        let r = run_test(&inp, &EmConfig::default(), &PvalueOptions::default()).unwrap();
        prop_assert!(r.statistic >= 0.0);
        prop_assert!(r.lambdas.windows(2).all(|w| w[0] >= w[1]));
        if let Some(&top) = r.lambdas.first() {
            let cut = EIG_ABS_FLOOR.max(EIG_REL_FLOOR * top);
            prop_assert!(r.lambdas.iter().all(|&v| v > cut));
        }
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        for p in [r.p_davies, r.p_liu].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        prop_assert!(r.sigma_hat >= EmConfig::default().floor);
    }
}
