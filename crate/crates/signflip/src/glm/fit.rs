//! Constrained (null) and unconstrained GLM fits via IRLS.
//!
//! The null fit holds the target coefficient at `beta0` by moving `x * beta0`
//! into the offset and estimating only the nuisance coefficients; weight,
//! derivative, and variance diagonals are evaluated at the constrained
//! optimum, which is where the score machinery needs them.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::glm::family::{Family, Link};

/// Convergence tolerance on the largest absolute nuisance-score component.
pub const IRLS_TOL: f64 = 1e-8;
/// Iteration budget for IRLS.
pub const IRLS_MAX_ITER: usize = 100;

const SEPARATION_MU_EPS: f64 = 1e-10;
const SEPARATION_COND_MAX: f64 = 1e12;
const MAX_HALVINGS: usize = 30;

/// One response's GLM description: family, link, response, target covariate,
/// nuisance design (include an intercept column explicitly if wanted), and the
/// null value `beta0` for the target coefficient.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub family: Family,
    pub link: Link,
    pub y: DVector<f64>,
    pub x: DVector<f64>,
    /// n x (k-1) nuisance design; may have zero columns for a marginal test.
    pub z: DMatrix<f64>,
    pub beta0: f64,
}

impl ModelSpec {
    /// Build and validate a spec with `beta0 = 0`.
    pub fn new(
        family: Family,
        link: Link,
        y: DVector<f64>,
        x: DVector<f64>,
        z: DMatrix<f64>,
    ) -> Result<Self> {
        Self::with_beta0(family, link, y, x, z, 0.0)
    }

    pub fn with_beta0(
        family: Family,
        link: Link,
        y: DVector<f64>,
        x: DVector<f64>,
        z: DMatrix<f64>,
        beta0: f64,
    ) -> Result<Self> {
        let spec = Self {
            family,
            link,
            y,
            x,
            z,
            beta0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Build without validation; the caller asserts the invariants hold.
    /// Used on hot paths that construct many specs against one shared design.
    pub fn new_unchecked(
        family: Family,
        link: Link,
        y: DVector<f64>,
        x: DVector<f64>,
        z: DMatrix<f64>,
        beta0: f64,
    ) -> Self {
        Self {
            family,
            link,
            y,
            x,
            z,
            beta0,
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Total number of regression coefficients (target plus nuisance).
    pub fn k(&self) -> usize {
        1 + self.z.ncols()
    }

    /// Check shapes, response support, `n >= k + 1`, finiteness of the
    /// design, and full column rank of `z`.
    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.x.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "x has {} rows, y has {n}",
                self.x.len()
            )));
        }
        if self.z.ncols() > 0 && self.z.nrows() != n {
            return Err(Error::ShapeMismatch(format!(
                "z has {} rows, y has {n}",
                self.z.nrows()
            )));
        }
        if n < self.k() + 1 {
            return Err(Error::InvalidModel(format!(
                "n = {n} too small for k = {} coefficients",
                self.k()
            )));
        }
        if !self.beta0.is_finite() {
            return Err(Error::InvalidModel("beta0 is not finite".into()));
        }
        for v in self.x.iter().chain(self.z.iter()) {
            if !v.is_finite() {
                return Err(Error::InvalidModel(
                    "design contains a non-finite value".into(),
                ));
            }
        }
        self.family.check_support(self.y.as_slice())?;
        if self.z.ncols() > 0 {
            let rank = self.z.clone().svd(false, false).rank(1e-10);
            if rank < self.z.ncols() {
                return Err(Error::SingularDesign(format!(
                    "nuisance design has rank {rank} < {} columns",
                    self.z.ncols()
                )));
            }
        }
        Ok(())
    }
}

/// Constrained fit under the null, with the diagonals of D, V, and W
/// evaluated at `(beta0, gamma_hat)`.
#[derive(Debug, Clone)]
pub struct NullFit {
    pub gamma_hat: DVector<f64>,
    pub mu_hat: DVector<f64>,
    pub eta_hat: DVector<f64>,
    pub w_diag: DVector<f64>,
    pub d_diag: DVector<f64>,
    pub v_diag: DVector<f64>,
    pub converged: bool,
    pub iterations: usize,
}

/// Unconstrained fit over `(beta, gamma)` for the parametric competitors.
#[derive(Debug, Clone)]
pub struct FullFit {
    pub beta_hat: f64,
    pub gamma_hat: DVector<f64>,
    pub loglik: f64,
    pub beta_se: f64,
    pub converged: bool,
    pub iterations: usize,
}

struct IrlsState {
    coef: DVector<f64>,
    eta: DVector<f64>,
    mu: DVector<f64>,
    d: DVector<f64>,
    vf: DVector<f64>,
    converged: bool,
    iterations: usize,
}

fn eval_curves(
    family: Family,
    link: Link,
    eta: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let mu = eta.map(|e| family.clamp_mean(link.inverse(e)));
    let d = mu.map(|m| link.mu_eta_from_mean(m));
    let vf = mu.map(|m| family.variance(m));
    (mu, d, vf)
}

fn information(design: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let p = design.ncols();
    let mut a = DMatrix::zeros(p, p);
    for i in 0..design.nrows() {
        let wi = w[i];
        for r in 0..p {
            let dr = design[(i, r)] * wi;
            for c in r..p {
                a[(r, c)] += dr * design[(i, c)];
            }
        }
    }
    for r in 0..p {
        for c in 0..r {
            a[(r, c)] = a[(c, r)];
        }
    }
    a
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.amax();
    let min = eig
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn separation_or_singular(
    family: Family,
    mu: &DVector<f64>,
    info: &DMatrix<f64>,
    context: &str,
) -> Error {
    if family == Family::Binomial {
        let pinned = mu
            .iter()
            .any(|&m| !(SEPARATION_MU_EPS..=1.0 - SEPARATION_MU_EPS).contains(&m));
        if pinned {
            let cond = condition_number(info);
            if cond > SEPARATION_COND_MAX {
                return Error::SeparationDetected {
                    mu_eps: SEPARATION_MU_EPS,
                    cond,
                };
            }
        }
    }
    Error::SingularDesign(context.into())
}

/// IRLS under unit dispersion with step-halving on log-likelihood decrease.
/// Converges when the largest absolute score component drops to `IRLS_TOL`.
fn irls(
    y: &DVector<f64>,
    design: &DMatrix<f64>,
    offset: &DVector<f64>,
    family: Family,
    link: Link,
) -> Result<IrlsState> {
    let p = design.ncols();
    let mut coef = DVector::zeros(p);
    let mut eta = offset.clone();
    let (mut mu, mut d, mut vf) = eval_curves(family, link, &eta);
    let mut objective = family.halving_objective(y.as_slice(), mu.as_slice());
    let mut converged = p == 0;
    let mut iterations = 0;
    let mut last_score = 0.0;

    for _ in 0..IRLS_MAX_ITER {
        if p == 0 {
            break;
        }
        // score for the free coefficients: design' D V^{-1} (y - mu)
        let resid_scaled = DVector::from_fn(y.len(), |i, _| d[i] * (y[i] - mu[i]) / vf[i]);
        let score = design.tr_mul(&resid_scaled);
        last_score = score.amax();
        if last_score <= IRLS_TOL {
            converged = true;
            break;
        }
        iterations += 1;

        let w = DVector::from_fn(y.len(), |i, _| d[i] * d[i] / vf[i]);
        let info = information(design, &w);
        let chol = match info.clone().cholesky() {
            Some(c) => c,
            None => {
                return Err(separation_or_singular(
                    family,
                    &mu,
                    &info,
                    "weighted cross-product is not positive definite",
                ))
            }
        };
        // working response on the linear scale, relative to the offset
        let working =
            DVector::from_fn(y.len(), |i, _| (eta[i] - offset[i]) + (y[i] - mu[i]) / d[i]);
        let rhs = design.tr_mul(&working.component_mul(&w));
        let target = chol.solve(&rhs);

        // step-halving towards the previous iterate if the objective drops
        let mut t = 1.0;
        let mut halvings = 0;
        loop {
            let cand = &coef + (&target - &coef) * t;
            let eta_c = offset + design * &cand;
            let (mu_c, d_c, vf_c) = eval_curves(family, link, &eta_c);
            let obj_c = family.halving_objective(y.as_slice(), mu_c.as_slice());
            if obj_c + 1e-10 * (1.0 + obj_c.abs()) >= objective || halvings >= MAX_HALVINGS {
                coef = cand;
                eta = eta_c;
                mu = mu_c;
                d = d_c;
                vf = vf_c;
                objective = obj_c;
                break;
            }
            t *= 0.5;
            halvings += 1;
        }
    }

    if !converged && p > 0 {
        // report the score at the final iterate
        let resid_scaled = DVector::from_fn(y.len(), |i, _| d[i] * (y[i] - mu[i]) / vf[i]);
        last_score = design.tr_mul(&resid_scaled).amax();
        converged = last_score <= IRLS_TOL;
    }
    let _ = last_score;

    Ok(IrlsState {
        coef,
        eta,
        mu,
        d,
        vf,
        converged,
        iterations,
    })
}

/// Dispersion-adjusted diagonals at a fitted state. For the Gaussian the
/// dispersion is profiled as `rss / n`; binomial and Poisson use `a(phi) = 1`.
fn dispersion_diagonals(
    family: Family,
    y: &DVector<f64>,
    mu: &DVector<f64>,
    d: &DVector<f64>,
    vf: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    match family {
        Family::Gaussian => {
            let n = y.len() as f64;
            let rss: f64 = y
                .iter()
                .zip(mu.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            let s2 = rss / n;
            if s2 <= 0.0 {
                return Err(Error::InvalidModel(
                    "zero residual variance under the Gaussian fit".into(),
                ));
            }
            let v = DVector::from_element(y.len(), s2);
            let w = DVector::from_fn(y.len(), |i, _| d[i] * d[i] / s2);
            Ok((v, w))
        }
        _ => {
            let v = vf.clone();
            let w = DVector::from_fn(y.len(), |i, _| d[i] * d[i] / vf[i]);
            Ok((v, w))
        }
    }
}

/// Fit the nuisance-only model with the target held at `beta0` via offset.
///
/// Returns `Ok` with `converged = false` when the iteration budget runs out;
/// downstream consumers decide whether to proceed (see
/// [`crate::score::decompose`]).
pub fn fit_null(spec: &ModelSpec) -> Result<NullFit> {
    spec.validate()?;
    let offset = &spec.x * spec.beta0;
    let state = irls(&spec.y, &spec.z, &offset, spec.family, spec.link)?;

    // final separation screen: pinned means with a near-singular information
    if spec.family == Family::Binomial && spec.z.ncols() > 0 {
        let pinned = state
            .mu
            .iter()
            .any(|&m| !(SEPARATION_MU_EPS..=1.0 - SEPARATION_MU_EPS).contains(&m));
        if pinned {
            let w = DVector::from_fn(spec.n(), |i, _| state.d[i] * state.d[i] / state.vf[i]);
            let info = information(&spec.z, &w);
            let cond = condition_number(&info);
            if cond > SEPARATION_COND_MAX {
                return Err(Error::SeparationDetected {
                    mu_eps: SEPARATION_MU_EPS,
                    cond,
                });
            }
        }
    }

    let (v_diag, w_diag) =
        dispersion_diagonals(spec.family, &spec.y, &state.mu, &state.d, &state.vf)?;
    Ok(NullFit {
        gamma_hat: state.coef,
        mu_hat: state.mu,
        eta_hat: state.eta,
        w_diag,
        d_diag: state.d,
        v_diag,
        converged: state.converged,
        iterations: state.iterations,
    })
}

/// Unconstrained MLE over `(beta, gamma)` with the standard-error of the
/// target coefficient taken from the inverse information at the optimum.
pub fn fit_full(spec: &ModelSpec) -> Result<FullFit> {
    spec.validate()?;
    let n = spec.n();
    let k = spec.k();
    let mut design = DMatrix::zeros(n, k);
    design.set_column(0, &spec.x);
    for c in 0..spec.z.ncols() {
        design.set_column(c + 1, &spec.z.column(c));
    }
    let offset = DVector::zeros(n);
    let state = irls(&spec.y, &design, &offset, spec.family, spec.link)?;

    let (_, w_diag) = dispersion_diagonals(spec.family, &spec.y, &state.mu, &state.d, &state.vf)?;
    let info = information(&design, &w_diag);
    let chol = info.clone().cholesky().ok_or_else(|| {
        separation_or_singular(
            spec.family,
            &state.mu,
            &info,
            "information matrix not positive definite at the optimum",
        )
    })?;
    let cov = chol.inverse();
    let beta_se = cov[(0, 0)].sqrt();

    let loglik = spec
        .family
        .log_likelihood(spec.y.as_slice(), state.mu.as_slice());
    Ok(FullFit {
        beta_hat: state.coef[0],
        gamma_hat: DVector::from_iterator(k - 1, state.coef.iter().skip(1).cloned()),
        loglik,
        beta_se,
        converged: state.converged,
        iterations: state.iterations,
    })
}

/// Log-likelihood of the constrained fit, for likelihood-ratio comparisons.
pub fn null_loglik(spec: &ModelSpec, fit: &NullFit) -> f64 {
    spec.family
        .log_likelihood(spec.y.as_slice(), fit.mu_hat.as_slice())
}
