//! The `analyze` pipeline: ingest delimited matrices, run the chosen
//! procedure, emit the TSV report.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use nalgebra::{DMatrix, DVector};
use signflip::glm::{fit_null, Family, Link, ModelSpec};
use signflip::make_plan;
use signflip::multitest::{
    closed_testing, flip_covariance, global_test, mahalanobis_global, maxt_single_step,
    maxt_step_down, perm_pvalue, rejection_level, CombiningFunction,
};
use signflip::score::{build_matrix, decompose, Alternative};

use crate::io::{write_report, DelimiterChoice, ReportHeader, ReportRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalysisMethod {
    MaxtSingle,
    MaxtStepDown,
    Closed,
    Mahalanobis,
    Global,
}

impl AnalysisMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AnalysisMethod::MaxtSingle => "maxt",
            AnalysisMethod::MaxtStepDown => "maxt-sd",
            AnalysisMethod::Closed => "closed",
            AnalysisMethod::Mahalanobis => "mahalanobis",
            AnalysisMethod::Global => "global",
        }
    }
}

impl std::str::FromStr for AnalysisMethod {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "maxt" => Ok(AnalysisMethod::MaxtSingle),
            "maxt-sd" => Ok(AnalysisMethod::MaxtStepDown),
            "closed" => Ok(AnalysisMethod::Closed),
            "mahalanobis" => Ok(AnalysisMethod::Mahalanobis),
            "global" => Ok(AnalysisMethod::Global),
            other => bail!("unknown method '{other}' (maxt|maxt-sd|closed|mahalanobis|global)"),
        }
    }
}

pub struct AnalysisConfig {
    pub y_file: PathBuf,
    pub x_file: PathBuf,
    pub z_file: Option<PathBuf>,
    pub family: Family,
    pub link: Link,
    pub method: AnalysisMethod,
    pub psi: CombiningFunction,
    pub alternative: Alternative,
    pub standardized: bool,
    pub alpha: f64,
    pub flips: usize,
    pub seed: u64,
    pub beta0: f64,
    pub out: PathBuf,
    pub delimiter: DelimiterChoice,
}

/// One validation finding; all findings are fatal for `analyze`.
#[derive(Debug, Clone)]
pub struct Finding {
    pub code: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct Diagnostics {
    pub findings: Vec<Finding>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, code: &'static str, message: String) {
        self.findings.push(Finding { code, message });
    }
}

pub struct LoadedInputs {
    pub y: DMatrix<f64>,
    pub x: DVector<f64>,
    pub z: DMatrix<f64>,
}

pub fn load_inputs(cfg: &AnalysisConfig) -> Result<LoadedInputs> {
    let y = crate::io::read_matrix(&cfg.y_file, cfg.delimiter)?;
    let n = y.nrows();
    let x_mat = crate::io::read_matrix(&cfg.x_file, cfg.delimiter)?;
    if x_mat.ncols() != 1 {
        bail!(
            "{}: expected a single column, found {}",
            cfg.x_file.display(),
            x_mat.ncols()
        );
    }
    if x_mat.nrows() != n {
        bail!(
            "row-count mismatch: y has {n} rows, x has {}",
            x_mat.nrows()
        );
    }
    let z = match &cfg.z_file {
        Some(path) => {
            let z = crate::io::read_matrix(path, cfg.delimiter)?;
            if z.nrows() != n {
                bail!("row-count mismatch: y has {n} rows, z has {}", z.nrows());
            }
            z
        }
        None => DMatrix::zeros(n, 0),
    };
    Ok(LoadedInputs {
        y,
        x: x_mat.column(0).into_owned(),
        z,
    })
}

/// Rank deficiency, target-in-nuisance-span, support violations, and missing
/// values. Always returns the diagnostics object; never errors.
pub fn validate_inputs(inputs: &LoadedInputs, family: Family) -> Diagnostics {
    let mut diag = Diagnostics::default();
    let n = inputs.y.nrows();

    let count_nan = |it: &mut dyn Iterator<Item = f64>| it.filter(|v| v.is_nan()).count();
    let y_missing = count_nan(&mut inputs.y.iter().cloned());
    if y_missing > 0 {
        diag.push(
            "missing-values",
            format!(
                "y contains {y_missing} missing value(s); missing data are rejected, not imputed"
            ),
        );
    }
    let x_missing = count_nan(&mut inputs.x.iter().cloned());
    if x_missing > 0 {
        diag.push(
            "missing-values",
            format!("x contains {x_missing} missing value(s)"),
        );
    }
    let z_missing = count_nan(&mut inputs.z.iter().cloned());
    if z_missing > 0 {
        diag.push(
            "missing-values",
            format!("z contains {z_missing} missing value(s)"),
        );
    }
    if !diag.is_clean() {
        return diag; // rank and span checks need complete data
    }

    if n < inputs.z.ncols() + 2 {
        diag.push(
            "too-few-rows",
            format!(
                "n = {n} rows cannot support {} coefficients",
                inputs.z.ncols() + 1
            ),
        );
    }

    for l in 0..inputs.y.ncols() {
        let col: Vec<f64> = inputs.y.column(l).iter().cloned().collect();
        if let Err(e) = family.check_support(&col) {
            diag.push(
                "support-violation",
                format!("response column {}: {e}", l + 1),
            );
        }
    }

    if inputs.z.ncols() > 0 {
        let rank = inputs.z.clone().svd(false, false).rank(1e-10);
        if rank < inputs.z.ncols() {
            diag.push(
                "rank-deficient-nuisance",
                format!(
                    "z has rank {rank} < {} columns; drop redundant columns",
                    inputs.z.ncols()
                ),
            );
        } else {
            // residual of x after projecting onto the span of z
            let ztz = inputs.z.tr_mul(&inputs.z);
            if let Some(chol) = ztz.cholesky() {
                let coef = chol.solve(&inputs.z.tr_mul(&inputs.x));
                let resid = &inputs.x - &inputs.z * coef;
                if resid.norm() <= 1e-10 * inputs.x.norm().max(1e-300) {
                    diag.push(
                        "target-collinear-with-nuisance",
                        "x lies in the span of z; the effective score is identically zero"
                            .to_string(),
                    );
                }
            }
        }
    }
    diag
}

pub fn run_analysis(cfg: &AnalysisConfig) -> Result<()> {
    let inputs = load_inputs(cfg)?;
    let diag = validate_inputs(&inputs, cfg.family);
    if !diag.is_clean() {
        for f in &diag.findings {
            eprintln!("[{}] {}", f.code, f.message);
        }
        bail!(
            "input validation failed with {} finding(s)",
            diag.findings.len()
        );
    }

    let n = inputs.y.nrows();
    let m = inputs.y.ncols();
    let mut decs = Vec::with_capacity(m);
    for l in 0..m {
        let spec = ModelSpec::with_beta0(
            cfg.family,
            cfg.link,
            inputs.y.column(l).into_owned(),
            inputs.x.clone(),
            inputs.z.clone(),
            cfg.beta0,
        )
        .with_context(|| format!("hypothesis {}", l + 1))?;
        let fit = fit_null(&spec).with_context(|| format!("hypothesis {}", l + 1))?;
        if !fit.converged {
            bail!(
                "hypothesis {}: null fit did not converge within the iteration budget",
                l + 1
            );
        }
        let dec = decompose(&spec, &fit).with_context(|| format!("hypothesis {}", l + 1))?;
        decs.push(dec);
    }

    let plan = make_plan(n, cfg.flips, cfg.seed);
    let matrix = build_matrix(&decs, &plan, cfg.standardized, cfg.alternative)?;
    let bad = matrix.degenerate_observed();
    if !bad.is_empty() {
        let ids: Vec<String> = bad.iter().map(|l| (l + 1).to_string()).collect();
        bail!(
            "degenerate flipped variance in the observed row for hypothesis(es) {}",
            ids.join(", ")
        );
    }

    let w = matrix.n_flips();
    let level = rejection_level(cfg.alpha, w);
    let all: Vec<usize> = (0..m).collect();

    let (adj_p, global_p, psi_name): (Vec<f64>, Option<f64>, Option<String>) = match cfg.method {
        AnalysisMethod::MaxtSingle => {
            let r = maxt_single_step(&matrix, cfg.alpha)?;
            (r.adj_p, None, None)
        }
        AnalysisMethod::MaxtStepDown => {
            let r = maxt_step_down(&matrix, cfg.alpha)?;
            (r.adj_p, None, None)
        }
        AnalysisMethod::Closed => {
            let r = closed_testing(&matrix, &cfg.psi, cfg.alpha)?;
            (r.adj_p, None, Some(cfg.psi.name().into()))
        }
        AnalysisMethod::Global => {
            let p = global_test(&matrix, &all, &cfg.psi)?;
            let raw = raw_pvalues(&matrix);
            let adj = raw.iter().map(|&r| r.max(p)).collect();
            (adj, Some(p), Some(cfg.psi.name().into()))
        }
        AnalysisMethod::Mahalanobis => {
            // quadratic form on untransformed effective scores
            let scores = build_matrix(&decs, &plan, false, Alternative::Greater)?;
            let cov = flip_covariance(scores.stats());
            let p = mahalanobis_global(scores.stats(), &cov)?;
            let raw = raw_pvalues(&matrix);
            let adj = raw.iter().map(|&r| r.max(p)).collect();
            (adj, Some(p), None)
        }
    };

    let raw_p = raw_pvalues(&matrix);
    let rows: Vec<ReportRow> = (0..m)
        .map(|l| ReportRow {
            hypothesis_id: l + 1,
            observed_stat: matrix.observed(l),
            raw_p: raw_p[l],
            adj_p: adj_p[l],
            rejected: adj_p[l] <= level,
        })
        .collect();

    let header = ReportHeader {
        seed: cfg.seed,
        flips: cfg.flips,
        method: cfg.method.name().into(),
        psi: psi_name,
        alpha: cfg.alpha,
        rejection_level: level,
        alternative: match cfg.alternative {
            Alternative::TwoSided => "two-sided".into(),
            Alternative::Greater => "greater".into(),
            Alternative::Less => "less".into(),
        },
        statistic: if cfg.standardized {
            "standardized".into()
        } else {
            "effective".into()
        },
        family: format!("{:?}", cfg.family).to_lowercase(),
        link: format!("{:?}", cfg.link).to_lowercase(),
        beta0: cfg.beta0,
        n,
        m,
        k_minus_1: inputs.z.ncols(),
        convergence_failures: 0,
        degenerate_cells: matrix.degenerate_cells,
        global_p,
    };

    let file =
        std::fs::File::create(&cfg.out).with_context(|| format!("create {}", cfg.out.display()))?;
    write_report(std::io::BufWriter::new(file), &header, &rows)?;
    Ok(())
}

fn raw_pvalues(matrix: &signflip::score::FlipStatMatrix) -> Vec<f64> {
    (0..matrix.n_hypotheses())
        .map(|l| perm_pvalue(&matrix.column(l)))
        .collect()
}
