//! Permutation p-values and familywise-error procedures over a flip matrix.
//!
//! The p-value convention counts ties in favor of the null,
//! `p = #{j : T_j >= T_1} / w`, and every procedure rejects at
//! `p <= floor(alpha w) / w`, which reproduces the quantile rule
//! `T_1 > T_(ceil((1-alpha) w))` for distinct values. NaN sentinel cells
//! (degenerate flipped variances) count as exceedances wherever they appear
//! below the observed row; a sentinel in the observed row aborts the
//! procedure.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::score::FlipStatMatrix;

/// Largest m for which the 2^m closed-testing sweep is allowed.
pub const CLOSED_TESTING_MAX_M: usize = 20;

/// Ridge added to the empirical score covariance: `1e-8 * trace / m`.
pub const COVARIANCE_RIDGE_REL: f64 = 1e-8;

/// Decision record for a family of hypotheses.
#[derive(Debug, Clone)]
pub struct TestResult {
    pub raw_stat: Vec<f64>,
    pub raw_p: Vec<f64>,
    pub adj_p: Vec<f64>,
    pub rejected: Vec<bool>,
    pub method: Method,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    MaxtSingle,
    MaxtStepdown,
    Closed,
    GlobalOnly,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Method::MaxtSingle => "maxt",
            Method::MaxtStepdown => "maxt-sd",
            Method::Closed => "closed",
            Method::GlobalOnly => "global",
        };
        f.write_str(s)
    }
}

/// Discrete rejection threshold `floor(alpha w) / w`.
pub fn rejection_level(alpha: f64, w: usize) -> f64 {
    (alpha * w as f64).floor() / w as f64
}

#[inline]
fn ge_or_nan(v: f64, t: f64) -> bool {
    v >= t || v.is_nan()
}

/// Permutation p-value of a derived column whose first entry is the observed
/// statistic: `#{j : column[j] >= column[0]} / w`.
pub fn perm_pvalue(column: &[f64]) -> f64 {
    let obs = column[0];
    let count = column.iter().filter(|&&v| ge_or_nan(v, obs)).count();
    count as f64 / column.len() as f64
}

/// Coordinate-wise non-decreasing combination of per-hypothesis statistics
/// into one global statistic; Mahalanobis carries its covariance estimate and
/// is meant for untransformed effective-score matrices.
#[derive(Debug, Clone)]
pub enum CombiningFunction {
    MaxAbs,
    SumAbs,
    SumSquare,
    Mahalanobis { cov: DMatrix<f64> },
}

impl CombiningFunction {
    pub fn name(&self) -> &'static str {
        match self {
            CombiningFunction::MaxAbs => "maxabs",
            CombiningFunction::SumAbs => "sumabs",
            CombiningFunction::SumSquare => "sumsq",
            CombiningFunction::Mahalanobis { .. } => "mahalanobis",
        }
    }
}

impl std::str::FromStr for CombiningFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "maxabs" | "max_abs" | "max" => Ok(CombiningFunction::MaxAbs),
            "sumabs" | "sum_abs" => Ok(CombiningFunction::SumAbs),
            "sumsq" | "sum_square" | "sumsquare" => Ok(CombiningFunction::SumSquare),
            other => Err(Error::Parse(format!(
                "unknown combining function '{other}'"
            ))),
        }
    }
}

fn check_observed_row(m: &FlipStatMatrix, subset: &[usize]) -> Result<()> {
    let bad = subset.iter().filter(|&&l| m.value(0, l).is_nan()).count();
    if bad > 0 {
        return Err(Error::DegenerateObserved { count: bad });
    }
    Ok(())
}

fn validate_subset(m: &FlipStatMatrix, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::ShapeMismatch("empty hypothesis subset".into()));
    }
    if let Some(&l) = subset.iter().find(|&&l| l >= m.n_hypotheses()) {
        return Err(Error::ShapeMismatch(format!(
            "hypothesis index {l} out of range (m = {})",
            m.n_hypotheses()
        )));
    }
    Ok(())
}

/// Combined column for a subset: one value per flip row.
fn psi_column(m: &FlipStatMatrix, subset: &[usize], psi: &CombiningFunction) -> Result<Vec<f64>> {
    let w = m.n_flips();
    match psi {
        CombiningFunction::MaxAbs => Ok((0..w)
            .map(|j| {
                subset
                    .iter()
                    .map(|&l| m.value(j, l))
                    .fold(f64::NEG_INFINITY, |acc, v| {
                        if v.is_nan() {
                            f64::INFINITY
                        } else {
                            acc.max(v)
                        }
                    })
            })
            .collect()),
        CombiningFunction::SumAbs => Ok((0..w)
            .map(|j| subset.iter().map(|&l| m.value(j, l)).sum())
            .collect()),
        CombiningFunction::SumSquare => Ok((0..w)
            .map(|j| {
                subset
                    .iter()
                    .map(|&l| {
                        let v = m.value(j, l);
                        v * v
                    })
                    .sum()
            })
            .collect()),
        CombiningFunction::Mahalanobis { cov } => {
            let sub = extract_cov(cov, subset)?;
            let chol = sub.cholesky().ok_or(Error::SingularCovariance)?;
            let l = chol.l();
            let q = subset.len();
            Ok((0..w)
                .map(|j| {
                    let mut s: Vec<f64> = subset.iter().map(|&c| m.value(j, c)).collect();
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
                })
                .collect())
        }
    }
}

fn extract_cov(cov: &DMatrix<f64>, subset: &[usize]) -> Result<DMatrix<f64>> {
    let m = cov.nrows();
    if cov.ncols() != m {
        return Err(Error::ShapeMismatch("covariance must be square".into()));
    }
    if let Some(&l) = subset.iter().find(|&&l| l >= m) {
        return Err(Error::ShapeMismatch(format!(
            "hypothesis index {l} out of covariance range (m = {m})"
        )));
    }
    let q = subset.len();
    Ok(DMatrix::from_fn(q, q, |r, c| cov[(subset[r], subset[c])]))
}

/// Test of the intersection hypothesis over `subset`: the combined statistic
/// per flip fed through the permutation p-value.
pub fn global_test(m: &FlipStatMatrix, subset: &[usize], psi: &CombiningFunction) -> Result<f64> {
    validate_subset(m, subset)?;
    check_observed_row(m, subset)?;
    let column = psi_column(m, subset, psi)?;
    Ok(perm_pvalue(&column))
}

fn raw_pvalues(m: &FlipStatMatrix) -> Vec<f64> {
    (0..m.n_hypotheses())
        .map(|l| {
            let obs = m.value(0, l);
            let count = (0..m.n_flips())
                .filter(|&j| ge_or_nan(m.value(j, l), obs))
                .count();
            count as f64 / m.n_flips() as f64
        })
        .collect()
}

fn result_from_adj(m: &FlipStatMatrix, adj_p: Vec<f64>, method: Method, alpha: f64) -> TestResult {
    let level = rejection_level(alpha, m.n_flips());
    let rejected = adj_p.iter().map(|&p| p <= level).collect();
    TestResult {
        raw_stat: (0..m.n_hypotheses()).map(|l| m.value(0, l)).collect(),
        raw_p: raw_pvalues(m),
        adj_p,
        rejected,
        method,
        alpha,
    }
}

/// Single-step max-T: each observed statistic is compared against the
/// permutation distribution of the row-wise maximum.
pub fn maxt_single_step(m: &FlipStatMatrix, alpha: f64) -> Result<TestResult> {
    let all: Vec<usize> = (0..m.n_hypotheses()).collect();
    check_observed_row(m, &all)?;
    let w = m.n_flips();
    let rowmax: Vec<f64> = (0..w)
        .map(|j| {
            (0..m.n_hypotheses())
                .map(|l| m.value(j, l))
                .fold(f64::NEG_INFINITY, |acc, v| {
                    if v.is_nan() {
                        f64::INFINITY
                    } else {
                        acc.max(v)
                    }
                })
        })
        .collect();
    let adj_p: Vec<f64> = (0..m.n_hypotheses())
        .map(|l| {
            let obs = m.value(0, l);
            rowmax.iter().filter(|&&v| v >= obs).count() as f64 / w as f64
        })
        .collect();
    Ok(result_from_adj(m, adj_p, Method::MaxtSingle, alpha))
}

/// Sequential (step-down) max-T: single-step on the remaining hypotheses,
/// remove rejections, repeat. Computed as suffix maxima along the order of
/// decreasing observed statistics with a running maximum enforcing
/// monotonicity, so the rejected set nests the single-step one.
pub fn maxt_step_down(m: &FlipStatMatrix, alpha: f64) -> Result<TestResult> {
    let n_hyp = m.n_hypotheses();
    let all: Vec<usize> = (0..n_hyp).collect();
    check_observed_row(m, &all)?;
    let w = m.n_flips();

    let mut order: Vec<usize> = (0..n_hyp).collect();
    order.sort_by(|&a, &b| {
        m.value(0, b)
            .partial_cmp(&m.value(0, a))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    // tail_p[i] = p of rank i against the max over ranks i..end
    let mut tailmax = vec![f64::NEG_INFINITY; w];
    let mut tail_p = vec![0.0; n_hyp];
    for i in (0..n_hyp).rev() {
        let l = order[i];
        for (j, t) in tailmax.iter_mut().enumerate() {
            let v = m.value(j, l);
            let v = if v.is_nan() { f64::INFINITY } else { v };
            if v > *t {
                *t = v;
            }
        }
        let obs = m.value(0, l);
        let count = tailmax.iter().filter(|&&v| v >= obs).count();
        tail_p[i] = count as f64 / w as f64;
    }

    let mut adj_p = vec![0.0; n_hyp];
    let mut running = 0.0f64;
    for i in 0..n_hyp {
        running = running.max(tail_p[i]);
        adj_p[order[i]] = running;
    }
    Ok(result_from_adj(m, adj_p, Method::MaxtStepdown, alpha))
}

/// Closed testing: the adjusted p of a hypothesis is the largest global-test
/// p over all subsets containing it; rejects at `floor(alpha w)/w`.
pub fn closed_testing(
    m: &FlipStatMatrix,
    psi: &CombiningFunction,
    alpha: f64,
) -> Result<TestResult> {
    let n_hyp = m.n_hypotheses();
    if n_hyp > CLOSED_TESTING_MAX_M {
        return Err(Error::TooManyHypotheses {
            m: n_hyp,
            max: CLOSED_TESTING_MAX_M,
        });
    }
    let all: Vec<usize> = (0..n_hyp).collect();
    check_observed_row(m, &all)?;

    let n_subsets: u64 = (1u64 << n_hyp) - 1;
    let adj_p = (1..=n_subsets)
        .into_par_iter()
        .try_fold(
            || vec![0.0f64; n_hyp],
            |mut acc, mask| -> Result<Vec<f64>> {
                let subset: Vec<usize> = (0..n_hyp).filter(|&l| mask >> l & 1 == 1).collect();
                let column = psi_column(m, &subset, psi)?;
                let p = perm_pvalue(&column);
                for &l in &subset {
                    if p > acc[l] {
                        acc[l] = p;
                    }
                }
                Ok(acc)
            },
        )
        .try_reduce(
            || vec![0.0f64; n_hyp],
            |mut a, b| {
                for (av, bv) in a.iter_mut().zip(b) {
                    if bv > *av {
                        *av = bv;
                    }
                }
                Ok(a)
            },
        )?;
    Ok(result_from_adj(m, adj_p, Method::Closed, alpha))
}

/// Empirical covariance of the flipped score rows with a relative ridge,
/// for the Mahalanobis global statistic.
pub fn flip_covariance(scores: &DMatrix<f64>) -> DMatrix<f64> {
    let w = scores.nrows();
    let m = scores.ncols();
    let means: Vec<f64> = (0..m).map(|l| scores.column(l).mean()).collect();
    let mut cov = DMatrix::zeros(m, m);
    for r in 0..m {
        for c in r..m {
            let mut acc = 0.0;
            for j in 0..w {
                acc += (scores[(j, r)] - means[r]) * (scores[(j, c)] - means[c]);
            }
            let v = acc / (w as f64 - 1.0);
            cov[(r, c)] = v;
            cov[(c, r)] = v;
        }
    }
    let ridge = COVARIANCE_RIDGE_REL * cov.trace() / m as f64;
    for d in 0..m {
        cov[(d, d)] += ridge;
    }
    cov
}

/// Full-standardization global test: the quadratic form of each flipped score
/// row in the inverse covariance, one factorization shared across flips.
/// `scores` holds untransformed effective scores with the observed row first.
pub fn mahalanobis_global(scores: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let m = scores.ncols();
    if cov.nrows() != m || cov.ncols() != m {
        return Err(Error::ShapeMismatch(
            "covariance dimension does not match the score matrix".into(),
        ));
    }
    let chol = cov.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let l = chol.l();
    let column: Vec<f64> = (0..scores.nrows())
        .map(|j| {
            let mut s: Vec<f64> = (0..m).map(|c| scores[(j, c)]).collect();
            let mut norm2 = 0.0;
            for r in 0..m {
                let mut v = s[r];
                for c in 0..r {
                    v -= l[(r, c)] * s[c];
                }
                let qi = v / l[(r, r)];
                s[r] = qi;
                norm2 += qi * qi;
            }
            norm2
        })
        .collect();
    Ok(perm_pvalue(&column))
}

/// Holm's step-down Bonferroni adjustment with running-maximum monotonicity.
pub fn bonferroni_holm(pvalues: &[f64]) -> Vec<f64> {
    let m = pvalues.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        pvalues[a]
            .partial_cmp(&pvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut adj = vec![0.0; m];
    let mut running = 0.0f64;
    for (rank, &idx) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * pvalues[idx]).min(1.0);
        running = running.max(scaled);
        adj[idx] = running;
    }
    adj
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::Alternative;
    use approx::assert_relative_eq;

    fn matrix_from_columns(cols: &[Vec<f64>]) -> FlipStatMatrix {
        let w = cols[0].len();
        let m = cols.len();
        let mut data = Vec::with_capacity(w * m);
        for col in cols {
            data.extend_from_slice(col);
        }
        FlipStatMatrix::from_stats(DMatrix::from_vec(w, m, data), true, Alternative::TwoSided)
    }

    #[test]
    fn perm_pvalue_strict_max() {
        let mut col = vec![10.0];
        col.extend((1..20).map(|j| j as f64 / 10.0));
        assert_relative_eq!(perm_pvalue(&col), 1.0 / 20.0);
    }

    #[test]
    fn perm_pvalue_all_ties() {
        let col = vec![2.5; 17];
        assert_relative_eq!(perm_pvalue(&col), 1.0);
    }

    #[test]
    fn pvalues_bounded_below_by_one_over_w() {
        let col = vec![5.0, 1.0, 2.0, 0.5];
        let p = perm_pvalue(&col);
        assert!((0.25..=1.0).contains(&p));
    }

    #[test]
    fn global_test_reduces_to_univariate_for_singleton() {
        let c0 = vec![3.0, 1.0, 0.5, 2.0, 4.0, 0.1, 2.5, 1.5];
        let c1 = vec![0.2, 0.9, 1.1, 0.3, 0.8, 0.4, 0.6, 0.7];
        let m = matrix_from_columns(&[c0.clone(), c1]);
        let p = global_test(&m, &[0], &CombiningFunction::MaxAbs).unwrap();
        assert_relative_eq!(p, perm_pvalue(&c0));
    }

    #[test]
    fn identical_columns_agree_across_monotone_psis() {
        let c = vec![1.3, 0.4, 2.2, 0.9, 1.8, 0.2, 0.6, 1.1];
        let m = matrix_from_columns(&[c.clone(), c.clone(), c]);
        let subset = [0usize, 1, 2];
        let p_max = global_test(&m, &subset, &CombiningFunction::MaxAbs).unwrap();
        let p_sum = global_test(&m, &subset, &CombiningFunction::SumAbs).unwrap();
        let p_sq = global_test(&m, &subset, &CombiningFunction::SumSquare).unwrap();
        assert_eq!(p_max, p_sum);
        assert_eq!(p_max, p_sq);
    }

    #[test]
    fn combining_functions_are_coordinatewise_nondecreasing() {
        let lower = [0.2, 1.1, 0.0, 2.4];
        let upper = [0.5, 1.1, 0.3, 2.4]; // dominates coordinate-wise
        let m = matrix_from_columns(&[
            vec![lower[0], upper[0]],
            vec![lower[1], upper[1]],
            vec![lower[2], upper[2]],
            vec![lower[3], upper[3]],
        ]);
        let subset = [0usize, 1, 2, 3];
        for psi in [
            CombiningFunction::MaxAbs,
            CombiningFunction::SumAbs,
            CombiningFunction::SumSquare,
        ] {
            let col = psi_column(&m, &subset, &psi).unwrap();
            assert!(
                col[0] <= col[1],
                "{} not non-decreasing: {} > {}",
                psi.name(),
                col[0],
                col[1]
            );
        }
    }

    #[test]
    fn single_step_reduces_to_univariate_for_m1() {
        let c = vec![2.0, 0.5, 1.0, 2.5, 0.2, 1.5, 0.8, 1.2];
        let m = matrix_from_columns(std::slice::from_ref(&c));
        let res = maxt_single_step(&m, 0.25).unwrap();
        assert_relative_eq!(res.adj_p[0], perm_pvalue(&c));
        assert_eq!(res.rejected[0], res.adj_p[0] <= rejection_level(0.25, 8));
    }

    #[test]
    fn identical_columns_have_no_multiplicity_penalty() {
        let c = vec![2.0, 0.5, 1.0, 2.5, 0.2, 1.5, 0.8, 1.2];
        let m = matrix_from_columns(&[c.clone(), c.clone(), c.clone(), c]);
        let res = maxt_single_step(&m, 0.1).unwrap();
        for l in 0..4 {
            assert_eq!(res.adj_p[l], res.raw_p[l]);
        }
        let sd = maxt_step_down(&m, 0.1).unwrap();
        for l in 0..4 {
            assert_eq!(sd.adj_p[l], sd.raw_p[l]);
        }
    }

    #[test]
    fn stepdown_dominates_single_step() {
        let cols = vec![
            vec![3.0, 0.2, 1.5, 0.7, 2.0, 0.4, 1.1, 0.9],
            vec![1.9, 2.5, 0.3, 1.2, 0.8, 1.7, 0.5, 2.2],
            vec![0.6, 1.0, 2.8, 0.1, 1.4, 2.1, 0.2, 1.6],
        ];
        let m = matrix_from_columns(&cols);
        let ss = maxt_single_step(&m, 0.25).unwrap();
        let sd = maxt_step_down(&m, 0.25).unwrap();
        for l in 0..3 {
            assert!(sd.adj_p[l] <= ss.adj_p[l]);
            assert!(sd.adj_p[l] >= sd.raw_p[l]);
            assert!(ss.adj_p[l] >= ss.raw_p[l]);
            if ss.rejected[l] {
                assert!(sd.rejected[l]);
            }
        }
    }

    #[test]
    fn no_single_step_rejection_means_no_stepdown_rejection() {
        let cols = vec![
            vec![0.5, 3.0, 1.5, 2.7, 2.0, 0.4, 1.1, 0.9],
            vec![0.3, 2.5, 1.3, 1.2, 0.8, 1.7, 0.5, 2.2],
        ];
        let m = matrix_from_columns(&cols);
        let ss = maxt_single_step(&m, 0.2).unwrap();
        assert!(ss.rejected.iter().all(|r| !r));
        let sd = maxt_step_down(&m, 0.2).unwrap();
        assert!(sd.rejected.iter().all(|r| !r));
    }

    #[test]
    fn closed_testing_m1_equals_raw() {
        let c = vec![2.0, 0.5, 1.0, 2.5, 0.2, 1.5, 0.8, 1.2];
        let m = matrix_from_columns(&[c]);
        let res = closed_testing(&m, &CombiningFunction::MaxAbs, 0.2).unwrap();
        assert_eq!(res.adj_p[0], res.raw_p[0]);
    }

    #[test]
    fn closed_testing_m2_explicit_maximum() {
        let c0 = vec![2.0, 0.5, 1.0, 2.5, 0.2, 1.5, 0.8, 1.2];
        let c1 = vec![1.1, 1.9, 0.4, 0.9, 2.3, 0.7, 1.6, 0.3];
        let m = matrix_from_columns(&[c0.clone(), c1.clone()]);
        let res = closed_testing(&m, &CombiningFunction::MaxAbs, 0.2).unwrap();
        let p0 = perm_pvalue(&c0);
        let p1 = perm_pvalue(&c1);
        let joint: Vec<f64> = c0.iter().zip(&c1).map(|(a, b)| a.max(*b)).collect();
        let p01 = perm_pvalue(&joint);
        assert_relative_eq!(res.adj_p[0], p0.max(p01));
        assert_relative_eq!(res.adj_p[1], p1.max(p01));
    }

    #[test]
    fn closed_testing_guard() {
        let cols: Vec<Vec<f64>> = (0..21).map(|l| vec![l as f64, 0.0]).collect();
        let m = matrix_from_columns(&cols);
        assert!(matches!(
            closed_testing(&m, &CombiningFunction::MaxAbs, 0.05),
            Err(Error::TooManyHypotheses { m: 21, .. })
        ));
    }

    #[test]
    fn degenerate_observed_row_rejected() {
        let c0 = vec![f64::NAN, 0.5, 1.0, 2.5];
        let c1 = vec![1.1, 1.9, 0.4, 0.9];
        let m = matrix_from_columns(&[c0, c1]);
        assert!(matches!(
            maxt_single_step(&m, 0.05),
            Err(Error::DegenerateObserved { count: 1 })
        ));
        assert!(matches!(
            maxt_step_down(&m, 0.05),
            Err(Error::DegenerateObserved { count: 1 })
        ));
    }

    #[test]
    fn column_permutation_equivariance() {
        let cols = vec![
            vec![3.0, 0.2, 1.5, 0.7, 2.0, 0.4, 1.1, 0.9],
            vec![1.9, 2.5, 0.3, 1.2, 0.8, 1.7, 0.5, 2.2],
            vec![0.6, 1.0, 2.8, 0.1, 1.4, 2.1, 0.2, 1.6],
        ];
        let perm = [2usize, 0, 1];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&l| cols[l].clone()).collect();
        let m1 = matrix_from_columns(&cols);
        let m2 = matrix_from_columns(&permuted);
        for alpha in [0.1, 0.25] {
            let r1 = maxt_step_down(&m1, alpha).unwrap();
            let r2 = maxt_step_down(&m2, alpha).unwrap();
            for (pos, &l) in perm.iter().enumerate() {
                assert_eq!(r1.adj_p[l], r2.adj_p[pos]);
                assert_eq!(r1.rejected[l], r2.rejected[pos]);
            }
        }
    }

    #[test]
    fn stepdown_monotone_in_observed_stat() {
        let cols = vec![
            vec![1.4, 0.2, 1.5, 0.7, 2.0, 0.4, 1.1, 0.9],
            vec![1.9, 2.5, 0.3, 1.2, 0.8, 1.7, 0.5, 2.2],
        ];
        let m = matrix_from_columns(&cols);
        let base = maxt_step_down(&m, 0.1).unwrap();
        let mut bumped = cols.clone();
        bumped[0][0] = 1.8; // larger observed statistic, all else fixed
        let m2 = matrix_from_columns(&bumped);
        let res = maxt_step_down(&m2, 0.1).unwrap();
        assert!(res.adj_p[0] <= base.adj_p[0]);
    }

    #[test]
    fn mahalanobis_identity_covariance_equals_sum_square() {
        let c0 = vec![1.0, -0.5, 0.3, -2.0, 0.8, 1.2, -0.9, 0.4];
        let c1 = vec![-0.2, 1.4, -1.1, 0.6, -0.7, 0.1, 2.0, -0.3];
        let mut data = c0.clone();
        data.extend(c1.clone());
        let scores = DMatrix::from_vec(8, 2, data);
        let p_mahal = mahalanobis_global(&scores, &DMatrix::identity(2, 2)).unwrap();
        let m = matrix_from_columns(&[c0, c1]);
        let p_sq = global_test(&m, &[0, 1], &CombiningFunction::SumSquare).unwrap();
        assert_eq!(p_mahal, p_sq);
    }

    #[test]
    fn mahalanobis_m1_equals_two_sided_univariate() {
        let signed = vec![1.0, -0.5, 0.3, -2.0, 0.8, 1.2, -0.9, 0.4, -1.7, 0.6];
        let scores = DMatrix::from_vec(10, 1, signed.clone());
        let cov = DMatrix::from_element(1, 1, 0.37);
        let p = mahalanobis_global(&scores, &cov).unwrap();
        let abs_col: Vec<f64> = signed.iter().map(|v| v.abs()).collect();
        assert_eq!(p, perm_pvalue(&abs_col));
    }

    #[test]
    fn holm_single_p_unchanged() {
        assert_eq!(bonferroni_holm(&[0.031]), vec![0.031]);
    }

    #[test]
    fn holm_hand_computed_pair() {
        let adj = bonferroni_holm(&[0.01, 0.04]);
        assert_relative_eq!(adj[0], 0.02);
        assert_relative_eq!(adj[1], 0.04);
    }

    #[test]
    fn flip_covariance_is_spd_with_ridge() {
        let mut data = Vec::new();
        for l in 0..3 {
            for j in 0..16 {
                data.push(((j * 7 + l * 3) % 5) as f64 - 2.0 + 0.1 * l as f64);
            }
        }
        let scores = DMatrix::from_vec(16, 3, data);
        let cov = flip_covariance(&scores);
        assert!(cov.clone().cholesky().is_some());
        assert_relative_eq!(cov[(0, 1)], cov[(1, 0)]);
    }
}
