//! Size, FWER, and power studies at desk scale.
//!
//! Data generation follows the logistic designs of the studies this crate
//! reproduces: a shared bivariate-normal `(x, z)` pair with configurable
//! correlation, a common nuisance coefficient, and correlated binary
//! responses drawn through an exchangeable Gaussian copula on the latent
//! scale. Replicates derive independent ChaCha8 streams from
//! `(seed, replicate index)`, so a study is reproducible regardless of
//! scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::flips::make_plan;
use crate::glm::{fit_full, fit_null, null_loglik, Family, Link, ModelSpec, NullFit};
use crate::multitest::{bonferroni_holm, maxt_step_down, rejection_level};
use crate::score::{build_matrix, decompose, Alternative};

/// One simulation scenario. `frac_alt * m` must be an integer count of
/// non-null responses; those occupy the leading columns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub n: usize,
    pub m: usize,
    pub family: Family,
    pub beta_alt: f64,
    pub frac_alt: f64,
    pub gamma_true: f64,
    pub rho_xz: f64,
    pub rho_y: f64,
    pub n_sims: usize,
    pub w: usize,
    pub alpha_grid: Vec<f64>,
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn n_alternatives(&self) -> usize {
        (self.frac_alt * self.m as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.m == 0 || self.n_sims == 0 || self.w < 2 {
            return Err(Error::InvalidModel(
                "scenario needs n, m, n_sims >= 1 and w >= 2".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.frac_alt) {
            return Err(Error::InvalidModel("frac_alt must lie in [0, 1]".into()));
        }
        let exact = self.frac_alt * self.m as f64;
        if (exact - exact.round()).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!(
                "frac_alt * m = {exact} is not an integer"
            )));
        }
        if !(-1.0..1.0).contains(&self.rho_xz) {
            return Err(Error::InvalidModel("rho_xz must lie in (-1, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.rho_y) {
            return Err(Error::InvalidModel("rho_y must lie in [0, 1)".into()));
        }
        if self.alpha_grid.iter().any(|&a| !(0.0 < a && a < 1.0)) {
            return Err(Error::InvalidModel("alpha grid must lie in (0, 1)".into()));
        }
        if self.family != Family::Binomial {
            return Err(Error::InvalidModel(
                "the study generator covers the logistic model only".into(),
            ));
        }
        Ok(())
    }
}

/// A generated replicate: `y` is n x m, `x` and `z` are the shared covariates.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub x: DVector<f64>,
    pub z: DVector<f64>,
}

fn replicate_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Correlated binary responses with marginals `expit(x beta_l + z gamma)`.
///
/// `(x_i, z_i)` is bivariate standard normal with correlation `rho_xz`. The
/// first `frac_alt * m` responses carry `beta_alt`; the rest are null. Cross-
/// response dependence comes from an exchangeable Gaussian copula with latent
/// correlation `rho_y`: `latent = sqrt(rho_y) c_i + sqrt(1 - rho_y) e_il`,
/// thresholded at the normal quantile of each marginal probability.
pub fn gen_dataset(cfg: &ScenarioConfig, replicate_seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = replicate_rng(cfg.seed, replicate_seed);
    let n = cfg.n;
    let m = cfg.m;
    let n_alt = cfg.n_alternatives();
    let norm = Normal::standard();

    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let cross = (1.0 - cfg.rho_xz * cfg.rho_xz).sqrt();
    let x = DVector::from_fn(n, |i, _| {
        cfg.rho_xz * z[i] + cross * rng.sample::<f64, _>(StandardNormal)
    });

    let shared = cfg.rho_y.sqrt();
    let own = (1.0 - cfg.rho_y).sqrt();
    let mut y = DMatrix::zeros(n, m);
    for i in 0..n {
        let common: f64 = rng.sample(StandardNormal);
        for l in 0..m {
            let beta = if l < n_alt { cfg.beta_alt } else { 0.0 };
            let eta = x[i] * beta + z[i] * cfg.gamma_true;
            let p = Link::Logit.inverse(eta);
            let latent = shared * common + own * rng.sample::<f64, _>(StandardNormal);
            y[(i, l)] = if latent <= norm.inverse_cdf(p) {
                1.0
            } else {
                0.0
            };
        }
    }
    Ok(Dataset { y, x, z })
}

/// Two-sided p-values of the Wald, parametric score, and likelihood-ratio
/// tests of `beta = beta0`, each against chi-squared with one degree of
/// freedom.
#[derive(Debug, Clone, Copy)]
pub struct CompetitorPvalues {
    pub wald: f64,
    pub score: f64,
    pub lrt: f64,
}

fn chisq1_sf(x: f64) -> f64 {
    statrs::function::erf::erfc((x.max(0.0) / 2.0).sqrt())
}

/// As [`competitor_tests`], reusing an existing null fit.
pub fn competitor_tests_with_null(spec: &ModelSpec, null: &NullFit) -> Result<CompetitorPvalues> {
    if !null.converged {
        return Err(Error::NonConvergence {
            iterations: null.iterations,
            score: f64::NAN,
        });
    }
    let full = fit_full(spec)?;
    if !full.converged {
        return Err(Error::NonConvergence {
            iterations: full.iterations,
            score: f64::NAN,
        });
    }

    let wald_chi = ((full.beta_hat - spec.beta0) / full.beta_se).powi(2);

    let dec = decompose(spec, null)?;
    let s = dec.effective_score();
    let score_chi = s * s / dec.observed_variance();

    let lrt_chi = (2.0 * (full.loglik - null_loglik(spec, null))).max(0.0);

    Ok(CompetitorPvalues {
        wald: chisq1_sf(wald_chi),
        score: chisq1_sf(score_chi),
        lrt: chisq1_sf(lrt_chi),
    })
}

/// Fit both models and return the three parametric p-values.
pub fn competitor_tests(spec: &ModelSpec) -> Result<CompetitorPvalues> {
    let null = fit_null(spec)?;
    competitor_tests_with_null(spec, &null)
}

/// One aggregated line of a study: empirical rate (size or FWER) and power
/// for a method at one scenario/alpha combination.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub study: String,
    pub method: String,
    pub n: usize,
    pub m: usize,
    pub n_sims: usize,
    pub w: usize,
    pub gamma: f64,
    pub rho_xz: f64,
    pub rho_y: f64,
    pub alpha: f64,
    /// Empirical size (univariate) or FWER over the true nulls.
    pub rate: f64,
    pub power: Option<f64>,
    /// Binomial Monte Carlo standard error of `rate`.
    pub mc_se: f64,
    /// Standard error of the mean per-replicate power.
    pub power_se: Option<f64>,
    pub avg_response_correlation: Option<f64>,
    pub excluded: usize,
    /// Set when excluded replicates exceed 1% of the requested count.
    pub flagged_invalid: bool,
}

#[derive(Debug, Clone, Default)]
pub struct StudyReport {
    pub rows: Vec<StudyRow>,
}

impl StudyReport {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "study,method,n,m,n_sims,w,gamma,rho_xz,rho_y,alpha,rate,power,mc_se,power_se,avg_response_correlation,excluded,flagged_invalid"
        )?;
        for r in &self.rows {
            let fmt_opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{:.6},{},{:.6},{},{},{},{}",
                r.study,
                r.method,
                r.n,
                r.m,
                r.n_sims,
                r.w,
                r.gamma,
                r.rho_xz,
                r.rho_y,
                r.alpha,
                r.rate,
                fmt_opt(r.power),
                r.mc_se,
                fmt_opt(r.power_se),
                fmt_opt(r.avg_response_correlation),
                r.excluded,
                r.flagged_invalid
            )?;
        }
        Ok(())
    }
}

/// The four univariate settings `(gamma, rho_xz)`.
pub fn univariate_settings() -> Vec<(f64, f64)> {
    vec![(0.0, 0.0), (1.0, 0.0), (0.0, 0.5), (1.0, 0.5)]
}

/// The four multivariate settings `(gamma, rho_xz)`.
pub fn multivariate_settings() -> Vec<(f64, f64)> {
    vec![(0.0, 0.0), (-1.0, 0.0), (0.0, 0.5), (-1.0, 0.5)]
}

/// Binomial confidence half-width around a nominal rate, in ratio units.
pub fn nominal_band_ratio_halfwidth(alpha: f64, n_sims: usize, z: f64) -> f64 {
    z * (alpha * (1.0 - alpha) / n_sims as f64).sqrt() / alpha
}

const METHODS: [&str; 4] = ["flipscores", "wald", "score", "lrt"];

fn binomial_se(rate: f64, n: usize) -> f64 {
    (rate * (1.0 - rate) / n as f64).sqrt()
}

struct UnivariateOutcome {
    p_flip: f64,
    p_wald: f64,
    p_score: f64,
    p_lrt: f64,
}

fn univariate_replicate(cfg: &ScenarioConfig, stream: u64) -> Result<UnivariateOutcome> {
    let data = gen_dataset(cfg, stream)?;
    let n = cfg.n;
    let mut z_design = DMatrix::from_element(n, 2, 1.0);
    z_design.set_column(1, &data.z);
    let spec = ModelSpec::new(
        cfg.family,
        Family::Binomial.canonical_link(),
        data.y.column(0).into_owned(),
        data.x.clone(),
        z_design,
    )?;
    let null = fit_null(&spec)?;
    if !null.converged {
        return Err(Error::NonConvergence {
            iterations: null.iterations,
            score: f64::NAN,
        });
    }
    let comp = competitor_tests_with_null(&spec, &null)?;
    let dec = decompose(&spec, &null)?;
    let plan_seed = stream
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(cfg.seed);
    let plan = make_plan(n, cfg.w, plan_seed);
    let m = build_matrix(&[dec], &plan, true, Alternative::TwoSided)?;
    if m.value(0, 0).is_nan() {
        return Err(Error::DegenerateObserved { count: 1 });
    }
    let p_flip = crate::multitest::perm_pvalue(&m.column(0));
    Ok(UnivariateOutcome {
        p_flip,
        p_wald: comp.wald,
        p_score: comp.score,
        p_lrt: comp.lrt,
    })
}

/// Empirical size of the sign-flip test and the three parametric competitors
/// over a grid of `(gamma, rho_xz)` settings and the configured alpha grid.
pub fn run_univariate_study(base: &ScenarioConfig, settings: &[(f64, f64)]) -> Result<StudyReport> {
    let mut cfg = base.clone();
    cfg.m = 1;
    cfg.validate()?;
    let mut report = StudyReport::default();

    for (s_idx, &(gamma, rho_xz)) in settings.iter().enumerate() {
        let mut scen = cfg.clone();
        scen.gamma_true = gamma;
        scen.rho_xz = rho_xz;

        let outcomes: Vec<Option<UnivariateOutcome>> = (0..scen.n_sims)
            .into_par_iter()
            .map(|rep| {
                let stream = ((s_idx as u64) << 32) | rep as u64;
                univariate_replicate(&scen, stream).ok()
            })
            .collect();
        let kept: Vec<&UnivariateOutcome> = outcomes.iter().flatten().collect();
        let excluded = scen.n_sims - kept.len();
        let flagged = excluded as f64 > 0.01 * scen.n_sims as f64;

        for &alpha in &scen.alpha_grid {
            let level = rejection_level(alpha, scen.w);
            for method in METHODS {
                let rate = if kept.is_empty() {
                    0.0
                } else {
                    kept.iter()
                        .filter(|o| match method {
                            "flipscores" => o.p_flip <= level,
                            "wald" => o.p_wald <= alpha,
                            "score" => o.p_score <= alpha,
                            _ => o.p_lrt <= alpha,
                        })
                        .count() as f64
                        / kept.len() as f64
                };
                report.rows.push(StudyRow {
                    study: "univariate".into(),
                    method: method.into(),
                    n: scen.n,
                    m: 1,
                    n_sims: kept.len(),
                    w: scen.w,
                    gamma,
                    rho_xz,
                    rho_y: scen.rho_y,
                    alpha,
                    rate,
                    power: None,
                    mc_se: binomial_se(rate, kept.len().max(1)),
                    power_se: None,
                    avg_response_correlation: None,
                    excluded,
                    flagged_invalid: flagged,
                });
            }
        }
    }
    Ok(report)
}

/// Mean off-diagonal correlation across response columns; columns with zero
/// variance are skipped.
pub fn mean_offdiag_correlation(y: &DMatrix<f64>) -> f64 {
    let n = y.nrows();
    let m = y.ncols();
    let mut centered = DMatrix::zeros(n, m);
    let mut keep = Vec::with_capacity(m);
    for l in 0..m {
        let col = y.column(l);
        let mean = col.mean();
        let mut ss = 0.0;
        for i in 0..n {
            let c = col[i] - mean;
            centered[(i, l)] = c;
            ss += c * c;
        }
        if ss > 0.0 {
            let inv = 1.0 / ss.sqrt();
            for i in 0..n {
                centered[(i, l)] *= inv;
            }
            keep.push(l);
        }
    }
    if keep.len() < 2 {
        return 0.0;
    }
    let gram = centered.tr_mul(&centered);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, &r) in keep.iter().enumerate() {
        for &c in keep.iter().skip(a + 1) {
            sum += gram[(r, c)];
            count += 1;
        }
    }
    sum / count as f64
}

struct MultivariateOutcome {
    /// Step-down adjusted p-values for the sign-flip test.
    flip_adj: Vec<f64>,
    /// Holm-adjusted p-values per competitor.
    wald_adj: Vec<f64>,
    score_adj: Vec<f64>,
    lrt_adj: Vec<f64>,
    avg_corr: f64,
}

fn multivariate_replicate(cfg: &ScenarioConfig, stream: u64) -> Result<MultivariateOutcome> {
    let data = gen_dataset(cfg, stream)?;
    let n = cfg.n;
    let mut z_design = DMatrix::from_element(n, 2, 1.0);
    z_design.set_column(1, &data.z);

    // the shared design is validated once; per-response specs reuse it
    ModelSpec::new(
        cfg.family,
        Family::Binomial.canonical_link(),
        data.y.column(0).into_owned(),
        data.x.clone(),
        z_design.clone(),
    )?;

    let mut decs = Vec::with_capacity(cfg.m);
    let mut wald = Vec::with_capacity(cfg.m);
    let mut score = Vec::with_capacity(cfg.m);
    let mut lrt = Vec::with_capacity(cfg.m);
    for l in 0..cfg.m {
        let spec = ModelSpec::new_unchecked(
            cfg.family,
            Family::Binomial.canonical_link(),
            data.y.column(l).into_owned(),
            data.x.clone(),
            z_design.clone(),
            0.0,
        );
        let null = fit_null(&spec)?;
        if !null.converged {
            return Err(Error::NonConvergence {
                iterations: null.iterations,
                score: f64::NAN,
            });
        }
        let comp = competitor_tests_with_null(&spec, &null)?;
        wald.push(comp.wald);
        score.push(comp.score);
        lrt.push(comp.lrt);
        decs.push(decompose(&spec, &null)?);
    }

    let plan_seed = stream
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(cfg.seed);
    let plan = make_plan(n, cfg.w, plan_seed);
    let m = build_matrix(&decs, &plan, true, Alternative::TwoSided)?;
    let flip = maxt_step_down(&m, cfg.alpha_grid.first().copied().unwrap_or(0.05))?;

    Ok(MultivariateOutcome {
        flip_adj: flip.adj_p,
        wald_adj: bonferroni_holm(&wald),
        score_adj: bonferroni_holm(&score),
        lrt_adj: bonferroni_holm(&lrt),
        avg_corr: mean_offdiag_correlation(&data.y),
    })
}

/// FWER over the true nulls and average power over the true alternatives,
/// for the step-down max-T sign-flip test against Holm-corrected Wald,
/// score, and LRT, swept over `(gamma, rho_xz)` settings and a latent
/// correlation grid.
pub fn run_multivariate_study(
    base: &ScenarioConfig,
    settings: &[(f64, f64)],
    rho_y_grid: &[f64],
) -> Result<StudyReport> {
    base.validate()?;
    let n_alt = base.n_alternatives();
    let mut report = StudyReport::default();

    for (s_idx, &(gamma, rho_xz)) in settings.iter().enumerate() {
        for (r_idx, &rho_y) in rho_y_grid.iter().enumerate() {
            let mut scen = base.clone();
            scen.gamma_true = gamma;
            scen.rho_xz = rho_xz;
            scen.rho_y = rho_y;
            scen.validate()?;

            let outcomes: Vec<Option<MultivariateOutcome>> = (0..scen.n_sims)
                .into_par_iter()
                .map(|rep| {
                    let cell = (s_idx * rho_y_grid.len() + r_idx) as u64;
                    let stream = (cell << 32) | rep as u64;
                    multivariate_replicate(&scen, stream).ok()
                })
                .collect();
            let kept: Vec<&MultivariateOutcome> = outcomes.iter().flatten().collect();
            let excluded = scen.n_sims - kept.len();
            let flagged = excluded as f64 > 0.01 * scen.n_sims as f64;
            let avg_corr = if kept.is_empty() {
                0.0
            } else {
                kept.iter().map(|o| o.avg_corr).sum::<f64>() / kept.len() as f64
            };

            for &alpha in &scen.alpha_grid {
                let flip_level = rejection_level(alpha, scen.w);
                for method in METHODS {
                    let mut fwer_events = 0usize;
                    let mut powers = Vec::with_capacity(kept.len());
                    for o in &kept {
                        let (adj, level): (&Vec<f64>, f64) = match method {
                            "flipscores" => (&o.flip_adj, flip_level),
                            "wald" => (&o.wald_adj, alpha),
                            "score" => (&o.score_adj, alpha),
                            _ => (&o.lrt_adj, alpha),
                        };
                        if adj[n_alt..].iter().any(|&p| p <= level) {
                            fwer_events += 1;
                        }
                        if n_alt > 0 {
                            let hits = adj[..n_alt].iter().filter(|&&p| p <= level).count();
                            powers.push(hits as f64 / n_alt as f64);
                        }
                    }
                    let n_eff = kept.len().max(1);
                    let rate = fwer_events as f64 / n_eff as f64;
                    let (power, power_se) = if powers.is_empty() {
                        (None, None)
                    } else {
                        let mean = powers.iter().sum::<f64>() / powers.len() as f64;
                        let var = powers.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>()
                            / (powers.len().saturating_sub(1).max(1)) as f64;
                        (Some(mean), Some((var / powers.len() as f64).sqrt()))
                    };
                    report.rows.push(StudyRow {
                        study: "multivariate".into(),
                        method: method.into(),
                        n: scen.n,
                        m: scen.m,
                        n_sims: kept.len(),
                        w: scen.w,
                        gamma,
                        rho_xz,
                        rho_y,
                        alpha,
                        rate,
                        power,
                        mc_se: binomial_se(rate, n_eff),
                        power_se,
                        avg_response_correlation: Some(avg_corr),
                        excluded,
                        flagged_invalid: flagged,
                    });
                }
            }
        }
    }
    Ok(report)
}
