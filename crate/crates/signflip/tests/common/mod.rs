//! Test-only oracles and model generators.
//!
//! The dense oracle evaluates every score quantity through the explicit
//! n x n projection matrix, independently of the factored path under test.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use signflip::glm::{fit_null, Family, Link, ModelSpec, NullFit};

/// Dense-matrix route to the effective score, flipped statistics, and
/// flipped variances.
pub struct DenseOracle {
    x: DVector<f64>,
    residual: DVector<f64>, // y - mu
    w_sqrt: DMatrix<f64>,
    v_inv_sqrt: DMatrix<f64>,
    i_minus_p: DMatrix<f64>,
    n: usize,
}

#[allow(dead_code)]
impl DenseOracle {
    pub fn new(spec: &ModelSpec, fit: &NullFit) -> Self {
        let n = spec.n();
        let w_sqrt = DMatrix::from_diagonal(&fit.w_diag.map(f64::sqrt));
        let v_inv_sqrt = DMatrix::from_diagonal(&fit.v_diag.map(|v| 1.0 / v.sqrt()));
        let i_minus_p = if spec.z.ncols() > 0 {
            let zw = &w_sqrt * &spec.z;
            let zwz = zw.tr_mul(&zw);
            let inv = zwz.try_inverse().expect("oracle: Z'WZ invertible");
            DMatrix::identity(n, n) - &zw * inv * zw.transpose()
        } else {
            DMatrix::identity(n, n)
        };
        DenseOracle {
            x: spec.x.clone(),
            residual: &spec.y - &fit.mu_hat,
            w_sqrt,
            v_inv_sqrt,
            i_minus_p,
            n,
        }
    }

    fn g_mat(&self, signs: &[f64]) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_row_slice(signs))
    }

    /// Row vector X' W^{1/2} (I-P) V^{-1/2} as a column of multipliers.
    pub fn multipliers(&self) -> DVector<f64> {
        (&self.v_inv_sqrt * &self.i_minus_p * &self.w_sqrt * &self.x)
            .column(0)
            .into()
    }

    /// Per-observation score contributions.
    pub fn contributions(&self) -> DVector<f64> {
        self.multipliers().component_mul(&self.residual)
    }

    /// n^{-1/2} X' W^{1/2} (I-P) V^{-1/2} G (y - mu).
    pub fn flipped_effective(&self, signs: &[f64]) -> f64 {
        let g = self.g_mat(signs);
        let row = self.x.transpose() * &self.w_sqrt * &self.i_minus_p * &self.v_inv_sqrt;
        ((row * g * &self.residual)[(0, 0)]) / (self.n as f64).sqrt()
    }

    /// n^{-1} X' W^{1/2} (I-P) G (I-P) G (I-P) W^{1/2} X.
    pub fn flip_variance(&self, signs: &[f64]) -> f64 {
        let g = self.g_mat(signs);
        let wx = &self.w_sqrt * &self.x;
        let v =
            wx.transpose() * &self.i_minus_p * &g * &self.i_minus_p * &g * &self.i_minus_p * &wx;
        v[(0, 0)] / self.n as f64
    }

    /// Identity-flip variance through a single projector application,
    /// `n^{-1} X' W^{1/2} (I-P) W^{1/2} X`.
    pub fn observed_variance(&self) -> f64 {
        let wx = &self.w_sqrt * &self.x;
        (wx.transpose() * &self.i_minus_p * &wx)[(0, 0)] / self.n as f64
    }

    pub fn flipped_standardized(&self, signs: &[f64]) -> f64 {
        self.flipped_effective(signs) / self.flip_variance(signs).sqrt()
    }
}

/// A randomly drawn small model with a converged null fit.
#[allow(dead_code)]
pub struct RandomModel {
    pub spec: ModelSpec,
    pub fit: NullFit,
}

/// Draw a random gaussian or binomial model with n <= 12, k <= 4 and a
/// converged constrained fit; retries until the fit succeeds.
#[allow(dead_code)]
pub fn random_small_model(rng: &mut ChaCha8Rng, family: Family) -> RandomModel {
    loop {
        let n = rng.random_range(6..=12usize);
        let q = rng.random_range(0..=3usize); // k - 1 nuisance columns
        if n < q + 2 {
            continue;
        }
        let x = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut z = DMatrix::zeros(n, q);
        for t in 0..q {
            for i in 0..n {
                z[(i, t)] = if t == 0 {
                    1.0
                } else {
                    rng.sample::<f64, _>(StandardNormal)
                };
            }
        }
        let beta_true: f64 = rng.random_range(-1.0..1.0);
        let (link, y) = match family {
            Family::Gaussian => {
                let y = DVector::from_fn(n, |i, _| {
                    let mut eta = x[i] * beta_true;
                    for t in 0..q {
                        eta += 0.5 * z[(i, t)];
                    }
                    eta + rng.sample::<f64, _>(StandardNormal)
                });
                (Link::Identity, y)
            }
            Family::Binomial => {
                let y = DVector::from_fn(n, |i, _| {
                    let mut eta = x[i] * beta_true;
                    for t in 0..q {
                        eta += 0.5 * z[(i, t)];
                    }
                    let p = Link::Logit.inverse(eta);
                    if rng.random::<f64>() < p {
                        1.0
                    } else {
                        0.0
                    }
                });
                (Link::Logit, y)
            }
            Family::Poisson => {
                let y = DVector::from_fn(n, |i, _| {
                    let mut eta = 0.3 * x[i] * beta_true;
                    for t in 0..q {
                        eta += 0.2 * z[(i, t)];
                    }
                    let lambda = eta.exp().min(20.0);
                    // crude but deterministic Poisson draw via inversion
                    let u: f64 = rng.random();
                    let mut acc = (-lambda).exp();
                    let mut cum = acc;
                    let mut kk = 0.0;
                    while u > cum && kk < 100.0 {
                        kk += 1.0;
                        acc *= lambda / kk;
                        cum += acc;
                    }
                    kk
                });
                (Link::Log, y)
            }
        };
        let Ok(spec) = ModelSpec::new(family, link, y, x, z) else {
            continue;
        };
        match fit_null(&spec) {
            // keep fits with usable variance everywhere
            Ok(fit) if fit.converged && fit.v_diag.iter().all(|&v| v > 1e-8) => {
                return RandomModel { spec, fit };
            }
            _ => {}
        }
    }
}

/// Random sign vector of length n.
#[allow(dead_code)]
pub fn random_signs(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect()
}

/// Relative closeness with a small absolute floor guarding exact-zero
/// cancellation in near-degenerate statistics.
#[allow(dead_code)]
pub fn assert_close(a: f64, b: f64, rel: f64, abs_floor: f64, what: &str) {
    let scale = a.abs().max(b.abs());
    let tol = rel * scale + abs_floor;
    assert!(
        (a - b).abs() <= tol,
        "{what}: {a} vs {b} (diff {:.3e}, tol {:.3e})",
        (a - b).abs(),
        tol
    );
}
