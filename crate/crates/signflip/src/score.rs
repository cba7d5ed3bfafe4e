//! Effective-score contributions and flipped statistics.
//!
//! The projection `P = W^{1/2} Z (Z'WZ)^{-1} Z' W^{1/2}` is never
//! materialized. With `b = (I - P) W^{1/2} x` and `u = G b`, idempotence
//! collapses the flipped-variance sandwich to `u'(I - P)u / n`, which is
//! evaluated with one Cholesky factor of `Z'WZ` and a forward solve per flip:
//! O(n k) per flip instead of O(n^2).

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flips::FlipPlan;
use crate::glm::{ModelSpec, NullFit};

/// Relative floor under which a flipped variance is declared degenerate:
/// `var <= DEGENERATE_REL_FLOOR * ||b||^2`.
pub const DEGENERATE_REL_FLOOR: f64 = 1e-12;

/// Orientation applied to the flipped statistics of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Alternative {
    TwoSided,
    Greater,
    Less,
}

impl Alternative {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Alternative::TwoSided => v.abs(),
            Alternative::Greater => v,
            Alternative::Less => -v,
        }
    }
}

impl std::str::FromStr for Alternative {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "two-sided" | "two_sided" | "twosided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(Error::Parse(format!("unknown alternative '{other}'"))),
        }
    }
}

/// Per-observation score contributions plus the factored pieces needed to
/// evaluate any flipped variance in O(n k).
#[derive(Debug, Clone)]
pub struct ScoreDecomposition {
    /// Score contributions `nu_i = a_i (y_i - mu_i)`.
    pub nu: DVector<f64>,
    /// Multipliers `a = V^{-1/2} (I - P) W^{1/2} x`.
    pub a: DVector<f64>,
    /// Projected target `b = (I - P) W^{1/2} x`.
    pub b: DVector<f64>,
    /// `W^{1/2} Z`, n x (k-1).
    pub zw: DMatrix<f64>,
    /// Lower Cholesky factor of `Z'WZ`; `None` when there is no nuisance.
    chol_zwz: Option<DMatrix<f64>>,
    /// Columns `cb[., t] = zw[., t] .* b`, so `zw' (g .* b) = cb' g`.
    cb: DMatrix<f64>,
    b_norm2: f64,
    n: usize,
}

#[inline]
fn forward_solve_norm2(l: &DMatrix<f64>, s: &mut [f64]) -> f64 {
    // solves L q = s in place and returns ||q||^2
    let q = s.len();
    let mut norm2 = 0.0;
    for r in 0..q {
        let mut v = s[r];
        for c in 0..r {
            v -= l[(r, c)] * s[c];
        }
        let qi = v / l[(r, r)];
        s[r] = qi;
        norm2 += qi * qi;
    }
    norm2
}

impl ScoreDecomposition {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Observed effective score `S* = n^{-1/2} sum nu_i`.
    pub fn effective_score(&self) -> f64 {
        self.nu.sum() / (self.n as f64).sqrt()
    }

    /// Identity-flip variance `n^{-1} b'b`.
    pub fn observed_variance(&self) -> f64 {
        self.b_norm2 / self.n as f64
    }

    fn check_signs(&self, signs: &[f64]) -> Result<()> {
        if signs.len() != self.n {
            return Err(Error::ShapeMismatch(format!(
                "sign vector has length {}, model has n = {}",
                signs.len(),
                self.n
            )));
        }
        if signs.iter().any(|&s| s != 1.0 && s != -1.0) {
            return Err(Error::InvalidModel(
                "sign vector entries must be +1 or -1".into(),
            ));
        }
        Ok(())
    }

    /// `n^{-1} (Gb)'(I - P)(Gb)` via the factored identity. Since the entries
    /// of `G b` square back to `b`, only the cross term `zw'(g .* b)` depends
    /// on the flip.
    pub fn flip_variance(&self, signs: &[f64]) -> Result<f64> {
        self.check_signs(signs)?;
        let (var, _) = self.flip_variance_unchecked(signs);
        let floor = DEGENERATE_REL_FLOOR * self.b_norm2;
        if var <= floor {
            return Err(Error::DegenerateVariance {
                variance: var,
                floor,
            });
        }
        Ok(var)
    }

    /// Returns `(variance, residual_norm2)` without the degeneracy check.
    fn flip_variance_unchecked(&self, signs: &[f64]) -> (f64, f64) {
        let q = self.cb.ncols();
        if q == 0 {
            return (self.b_norm2 / self.n as f64, self.b_norm2);
        }
        let mut s = vec![0.0; q];
        for (t, st) in s.iter_mut().enumerate() {
            let col = self.cb.column(t);
            *st = col.iter().zip(signs).map(|(cv, sv)| cv * sv).sum::<f64>();
        }
        let l = self.chol_zwz.as_ref().expect("factor present when q > 0");
        let proj = forward_solve_norm2(l, &mut s);
        let resid = self.b_norm2 - proj;
        (resid / self.n as f64, resid)
    }

    /// `S*^j = n^{-1/2} sum_i g_i nu_i`; standardized divides by the square
    /// root of the flip-dependent variance.
    pub fn flipped_stat(&self, signs: &[f64], standardized: bool) -> Result<f64> {
        self.check_signs(signs)?;
        let num: f64 = signs.iter().zip(self.nu.iter()).map(|(s, v)| s * v).sum();
        if standardized {
            let (var, resid) = self.flip_variance_unchecked(signs);
            let floor = DEGENERATE_REL_FLOOR * self.b_norm2;
            if var <= floor {
                return Err(Error::DegenerateVariance {
                    variance: var,
                    floor,
                });
            }
            Ok(num / resid.sqrt())
        } else {
            Ok(num / (self.n as f64).sqrt())
        }
    }

    /// The observed statistic (identity flip).
    pub fn observed_stat(&self, standardized: bool) -> Result<f64> {
        let ones = vec![1.0; self.n];
        self.flipped_stat(&ones, standardized)
    }
}

/// Factor the projection for one fitted model. Requires a converged fit; use
/// [`decompose_unchecked`] to override.
pub fn decompose(spec: &ModelSpec, fit: &NullFit) -> Result<ScoreDecomposition> {
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            score: f64::NAN,
        });
    }
    decompose_unchecked(spec, fit)
}

/// As [`decompose`] without the convergence check.
pub fn decompose_unchecked(spec: &ModelSpec, fit: &NullFit) -> Result<ScoreDecomposition> {
    let n = spec.n();
    let q = spec.z.ncols();
    if fit.mu_hat.len() != n || fit.w_diag.len() != n {
        return Err(Error::ShapeMismatch(
            "fit diagonals do not match the model dimension".into(),
        ));
    }

    let sw = fit.w_diag.map(f64::sqrt);
    let wx = sw.component_mul(&spec.x);

    let mut zw = DMatrix::zeros(n, q);
    for t in 0..q {
        for i in 0..n {
            zw[(i, t)] = sw[i] * spec.z[(i, t)];
        }
    }

    let (b, chol_zwz) = if q > 0 {
        let zwz = zw.tr_mul(&zw);
        let chol = zwz
            .cholesky()
            .ok_or_else(|| Error::SingularDesign("Z'WZ factorization failed".into()))?;
        let coef = chol.solve(&zw.tr_mul(&wx));
        (&wx - &zw * coef, Some(chol.l()))
    } else {
        (wx.clone(), None)
    };

    let a = DVector::from_fn(n, |i, _| b[i] / fit.v_diag[i].sqrt());
    let nu = DVector::from_fn(n, |i, _| a[i] * (spec.y[i] - fit.mu_hat[i]));
    let mut cb = DMatrix::zeros(n, q);
    for t in 0..q {
        for i in 0..n {
            cb[(i, t)] = zw[(i, t)] * b[i];
        }
    }
    let b_norm2 = b.norm_squared();

    Ok(ScoreDecomposition {
        nu,
        a,
        b,
        zw,
        chol_zwz,
        cb,
        b_norm2,
        n,
    })
}

/// The w x m matrix of flipped statistics, transformed per the alternative;
/// the single object all multiple-testing procedures consume. Row 0 holds the
/// observed (identity-flip) statistics.
#[derive(Debug, Clone)]
pub struct FlipStatMatrix {
    stats: DMatrix<f64>,
    pub standardized: bool,
    pub alternative: Alternative,
    /// Number of cells recorded as NaN because their flipped variance was
    /// degenerate.
    pub degenerate_cells: usize,
}

impl FlipStatMatrix {
    pub fn n_flips(&self) -> usize {
        self.stats.nrows()
    }

    pub fn n_hypotheses(&self) -> usize {
        self.stats.ncols()
    }

    pub fn value(&self, j: usize, l: usize) -> f64 {
        self.stats[(j, l)]
    }

    /// Observed (identity-flip) statistic of hypothesis `l`.
    pub fn observed(&self, l: usize) -> f64 {
        self.stats[(0, l)]
    }

    pub fn column(&self, l: usize) -> Vec<f64> {
        self.stats.column(l).iter().cloned().collect()
    }

    pub fn stats(&self) -> &DMatrix<f64> {
        &self.stats
    }

    /// Indices of hypotheses whose observed cell is degenerate.
    pub fn degenerate_observed(&self) -> Vec<usize> {
        (0..self.n_hypotheses())
            .filter(|&l| self.stats[(0, l)].is_nan())
            .collect()
    }

    /// Wrap an externally built matrix (row 0 observed) for the procedures.
    pub fn from_stats(stats: DMatrix<f64>, standardized: bool, alternative: Alternative) -> Self {
        let degenerate_cells = stats.iter().filter(|v| v.is_nan()).count();
        FlipStatMatrix {
            stats,
            standardized,
            alternative,
            degenerate_cells,
        }
    }
}

/// Fill the w x m matrix by applying the same flip row to every response.
/// Cells whose variance is degenerate are recorded as NaN and counted;
/// consuming procedures reject the run if row 0 contains any.
pub fn build_matrix(
    decs: &[ScoreDecomposition],
    plan: &FlipPlan,
    standardized: bool,
    alternative: Alternative,
) -> Result<FlipStatMatrix> {
    let m = decs.len();
    if m == 0 {
        return Err(Error::ShapeMismatch("no decompositions supplied".into()));
    }
    let n = plan.n();
    if decs.iter().any(|d| d.n() != n) {
        return Err(Error::ShapeMismatch(
            "all decompositions must share the plan's n".into(),
        ));
    }
    let w = plan.n_flips();
    let sqrt_n = (n as f64).sqrt();

    let mut data = vec![0.0f64; w * m];
    let degenerate: usize = data
        .par_chunks_mut(w)
        .zip(decs.par_iter())
        .map(|(col, dec)| {
            let mut bad = 0usize;
            let q = dec.cb.ncols();
            let floor_resid = DEGENERATE_REL_FLOOR * dec.b_norm2 * n as f64;
            let mut s = vec![0.0f64; q];
            for (j, cell) in col.iter_mut().enumerate() {
                let signs = plan.row(j);
                let mut num = 0.0;
                for (sv, nv) in signs.iter().zip(dec.nu.iter()) {
                    num += sv * nv;
                }
                let raw = if standardized {
                    let resid = if q == 0 {
                        dec.b_norm2
                    } else {
                        for (t, st) in s.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for (cv, sv) in dec.cb.column(t).iter().zip(signs) {
                                acc += cv * sv;
                            }
                            *st = acc;
                        }
                        let l = dec.chol_zwz.as_ref().expect("factor present");
                        dec.b_norm2 - forward_solve_norm2(l, &mut s)
                    };
                    if resid <= floor_resid {
                        bad += 1;
                        f64::NAN
                    } else {
                        num / resid.sqrt()
                    }
                } else {
                    num / sqrt_n
                };
                *cell = alternative.apply(raw);
            }
            bad
        })
        .sum();

    Ok(FlipStatMatrix {
        stats: DMatrix::from_vec(w, m, data),
        standardized,
        alternative,
        degenerate_cells: degenerate,
    })
}
