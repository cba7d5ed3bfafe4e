//! Property tests over random small models.

mod common;

use common::{assert_close, random_signs, random_small_model, DenseOracle};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use signflip::flips::make_plan;
use signflip::glm::{fit_full, fit_null, null_loglik, Family, Link, ModelSpec};
use signflip::maxt_step_down;
use signflip::score::{build_matrix, decompose, Alternative};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // factored flipped variance equals the dense sandwich on random models
    #[test]
    fn collapse_identity_holds(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let family = if seed % 2 == 0 { Family::Gaussian } else { Family::Binomial };
        let model = random_small_model(&mut rng, family);
        let dec = decompose(&model.spec, &model.fit).unwrap();
        let oracle = DenseOracle::new(&model.spec, &model.fit);
        let g = random_signs(&mut rng, model.spec.n());
        if let Ok(var) = dec.flip_variance(&g) {
            let dense = oracle.flip_variance(&g);
            prop_assert!((var - dense).abs() <= 1e-9 * var.abs().max(dense.abs()));
        }
    }

    // replacing Z by Z A for invertible A leaves the constrained means alone
    #[test]
    fn reparameterization_invariance(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(31));
        let model = random_small_model(&mut rng, Family::Binomial);
        let q = model.spec.z.ncols();
        if q == 0 { return Ok(()); }
        // well-conditioned transform: identity plus small random offsets
        let mut a = DMatrix::identity(q, q);
        for r in 0..q {
            for c in 0..q {
                if r != c {
                    a[(r, c)] = 0.3 * (rand::Rng::random::<f64>(&mut rng) - 0.5);
                }
            }
        }
        let mut spec2 = model.spec.clone();
        spec2.z = &model.spec.z * &a;
        let fit2 = fit_null(&spec2).unwrap();
        prop_assert!(fit2.converged);
        for i in 0..model.spec.n() {
            prop_assert!((fit2.mu_hat[i] - model.fit.mu_hat[i]).abs() <= 1e-8);
        }
    }

    // holding beta at c on x equals holding it at 1 on c*x
    #[test]
    fn offset_correctness(seed in 0u64..10_000, c in -2.0f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(77));
        let model = random_small_model(&mut rng, Family::Binomial);
        let mut with_beta0 = model.spec.clone();
        with_beta0.beta0 = c;
        let fit_a = fit_null(&with_beta0).unwrap();
        let mut scaled = model.spec.clone();
        scaled.x *= c;
        scaled.beta0 = 1.0;
        let fit_b = fit_null(&scaled).unwrap();
        if fit_a.converged && fit_b.converged {
            for i in 0..model.spec.n() {
                prop_assert!((fit_a.mu_hat[i] - fit_b.mu_hat[i]).abs() <= 1e-8);
            }
        }
    }

    // the free optimum dominates the constrained one
    #[test]
    fn full_loglik_dominates_null(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(13));
        let family = if seed % 2 == 0 { Family::Gaussian } else { Family::Binomial };
        let model = random_small_model(&mut rng, family);
        if let Ok(full) = fit_full(&model.spec) {
            if full.converged {
                let ll0 = null_loglik(&model.spec, &model.fit);
                prop_assert!(full.loglik >= ll0 - 1e-8 * (1.0 + ll0.abs()));
            }
        }
    }

    // permuting responses permutes the matrix columns and nothing else
    #[test]
    fn shared_flip_coupling(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(5));
        let n = 9usize;
        let x = DVector::from_fn(n, |_, _| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0);
        let z = DMatrix::from_element(n, 1, 1.0);
        let mut decs = Vec::new();
        for _ in 0..3 {
            let y = DVector::from_fn(n, |_, _| rand::Rng::random::<f64>(&mut rng) * 2.0 - 1.0);
            let spec = ModelSpec::new(Family::Gaussian, Link::Identity, y, x.clone(), z.clone()).unwrap();
            let fit = fit_null(&spec).unwrap();
            decs.push(decompose(&spec, &fit).unwrap());
        }
        let plan = make_plan(n, 64, seed);
        let m1 = build_matrix(&decs, &plan, true, Alternative::TwoSided).unwrap();
        let perm = [1usize, 2, 0];
        let permuted: Vec<_> = perm.iter().map(|&l| decs[l].clone()).collect();
        let m2 = build_matrix(&permuted, &plan, true, Alternative::TwoSided).unwrap();
        for (pos, &l) in perm.iter().enumerate() {
            for j in 0..m1.n_flips() {
                prop_assert_eq!(m1.value(j, l), m2.value(j, pos));
            }
        }
        // and the step-down decisions permute identically
        let r1 = maxt_step_down(&m1, 0.1).unwrap();
        let r2 = maxt_step_down(&m2, 0.1).unwrap();
        for (pos, &l) in perm.iter().enumerate() {
            prop_assert_eq!(r1.adj_p[l], r2.adj_p[pos]);
        }
    }

    // negating a flip changes neither the variance nor |statistic|
    #[test]
    fn sign_symmetry(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(19));
        let model = random_small_model(&mut rng, Family::Gaussian);
        let dec = decompose(&model.spec, &model.fit).unwrap();
        let g = random_signs(&mut rng, model.spec.n());
        let gneg: Vec<f64> = g.iter().map(|s| -s).collect();
        match (dec.flip_variance(&g), dec.flip_variance(&gneg)) {
            (Ok(v1), Ok(v2)) => {
                prop_assert_eq!(v1, v2);
                let s1 = dec.flipped_stat(&g, true).unwrap();
                let s2 = dec.flipped_stat(&gneg, true).unwrap();
                prop_assert_eq!(s1.abs(), s2.abs());
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "degeneracy must be sign-symmetric"),
        }
    }
}

#[test]
fn projection_residual_property_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for case in 0..30 {
        let family = if case % 2 == 0 {
            Family::Gaussian
        } else {
            Family::Binomial
        };
        let model = random_small_model(&mut rng, family);
        let dec = decompose(&model.spec, &model.fit).unwrap();
        if model.spec.z.ncols() > 0 {
            let cross = dec.zw.tr_mul(&dec.b);
            assert!(cross.amax() <= 1e-8 * dec.b.norm().max(1e-12));
        }
        // standardized observed statistic equals the dense route
        let oracle = DenseOracle::new(&model.spec, &model.fit);
        let ones = vec![1.0; model.spec.n()];
        assert_close(
            dec.observed_stat(true).unwrap(),
            oracle.flipped_standardized(&ones),
            1e-10,
            1e-12,
            "observed standardized",
        );
    }
}
