//! Python bindings: model fitting, univariate sign-flip tests, and the
//! multi-response procedures, mirroring the CLI surface.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use signflip::glm::{fit_full, fit_null, Family, Link, ModelSpec};
use signflip::multitest::{
    bonferroni_holm, closed_testing, flip_covariance, global_test, mahalanobis_global,
    maxt_single_step, maxt_step_down, perm_pvalue, rejection_level, CombiningFunction,
};
use signflip::score::{build_matrix, decompose, Alternative};
use signflip::{make_plan, Error};

fn to_py_err(e: Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_family(s: &str) -> PyResult<Family> {
    s.parse().map_err(to_py_err)
}

fn parse_link(s: Option<&str>, family: Family) -> PyResult<Link> {
    match s {
        Some(s) => s.parse().map_err(to_py_err),
        None => Ok(family.canonical_link()),
    }
}

fn parse_alternative(s: &str) -> PyResult<Alternative> {
    s.parse().map_err(to_py_err)
}

fn parse_psi(s: &str) -> PyResult<CombiningFunction> {
    s.parse().map_err(to_py_err)
}

fn build_spec(
    family: &str,
    link: Option<&str>,
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    beta0: f64,
) -> PyResult<ModelSpec> {
    let family = parse_family(family)?;
    let link = parse_link(link, family)?;
    let n = y.len();
    let q = z.len();
    for (t, col) in z.iter().enumerate() {
        if col.len() != n {
            return Err(PyValueError::new_err(format!(
                "z column {t} has length {}, expected {n}",
                col.len()
            )));
        }
    }
    let zmat = DMatrix::from_fn(n, q, |i, t| z[t][i]);
    ModelSpec::with_beta0(
        family,
        link,
        DVector::from_vec(y),
        DVector::from_vec(x),
        zmat,
        beta0,
    )
    .map_err(to_py_err)
}

/// Constrained fit summary: gamma_hat, fitted means, convergence.
#[pyfunction]
#[pyo3(signature = (y, x, z, family="binomial", link=None, beta0=0.0))]
fn null_fit<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    family: &str,
    link: Option<&str>,
    beta0: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = build_spec(family, link, y, x, z, beta0)?;
    let fit = fit_null(&spec).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("gamma_hat", fit.gamma_hat.as_slice().to_vec())?;
    out.set_item("mu_hat", fit.mu_hat.as_slice().to_vec())?;
    out.set_item("converged", fit.converged)?;
    out.set_item("iterations", fit.iterations)?;
    Ok(out)
}

/// Unconstrained fit summary for the target coefficient.
#[pyfunction]
#[pyo3(signature = (y, x, z, family="binomial", link=None))]
fn full_fit<'py>(
    py: Python<'py>,
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    family: &str,
    link: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = build_spec(family, link, y, x, z, 0.0)?;
    let fit = fit_full(&spec).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("beta_hat", fit.beta_hat)?;
    out.set_item("beta_se", fit.beta_se)?;
    out.set_item("gamma_hat", fit.gamma_hat.as_slice().to_vec())?;
    out.set_item("loglik", fit.loglik)?;
    out.set_item("converged", fit.converged)?;
    Ok(out)
}

/// Univariate sign-flip score test; returns (observed_stat, p_value).
#[pyfunction]
#[pyo3(signature = (y, x, z, family="binomial", link=None, beta0=0.0, flips=2000,
                    seed=0, standardized=true, alternative="two-sided"))]
#[allow(clippy::too_many_arguments)]
fn score_test(
    y: Vec<f64>,
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    family: &str,
    link: Option<&str>,
    beta0: f64,
    flips: usize,
    seed: u64,
    standardized: bool,
    alternative: &str,
) -> PyResult<(f64, f64)> {
    let spec = build_spec(family, link, y, x, z, beta0)?;
    let alt = parse_alternative(alternative)?;
    let fit = fit_null(&spec).map_err(to_py_err)?;
    if !fit.converged {
        return Err(PyValueError::new_err("null fit did not converge"));
    }
    let dec = decompose(&spec, &fit).map_err(to_py_err)?;
    let plan = make_plan(spec.n(), flips, seed);
    let m =
        build_matrix(std::slice::from_ref(&dec), &plan, standardized, alt).map_err(to_py_err)?;
    if m.observed(0).is_nan() {
        return Err(PyValueError::new_err(
            "degenerate flipped variance for the observed statistic",
        ));
    }
    Ok((m.observed(0), perm_pvalue(&m.column(0))))
}

/// Multi-response analysis over a shared design. `y_columns` is a list of m
/// response vectors; returns one dict per hypothesis.
#[pyfunction]
#[pyo3(signature = (y_columns, x, z, family="binomial", link=None, method="maxt-sd",
                    psi="maxabs", alpha=0.05, flips=2000, seed=0, beta0=0.0,
                    alternative="two-sided", standardized=true))]
#[allow(clippy::too_many_arguments)]
fn analyze<'py>(
    py: Python<'py>,
    y_columns: Vec<Vec<f64>>,
    x: Vec<f64>,
    z: Vec<Vec<f64>>,
    family: &str,
    link: Option<&str>,
    method: &str,
    psi: &str,
    alpha: f64,
    flips: usize,
    seed: u64,
    beta0: f64,
    alternative: &str,
    standardized: bool,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    if y_columns.is_empty() {
        return Err(PyValueError::new_err("no response columns"));
    }
    let alt = parse_alternative(alternative)?;
    let n = x.len();
    let mut decs = Vec::with_capacity(y_columns.len());
    for (l, y) in y_columns.iter().enumerate() {
        let spec = build_spec(family, link, y.clone(), x.clone(), z.clone(), beta0)
            .map_err(|e| PyValueError::new_err(format!("hypothesis {}: {e}", l + 1)))?;
        let fit = fit_null(&spec)
            .map_err(|e| PyValueError::new_err(format!("hypothesis {}: {e}", l + 1)))?;
        if !fit.converged {
            return Err(PyValueError::new_err(format!(
                "hypothesis {}: null fit did not converge",
                l + 1
            )));
        }
        let dec = decompose(&spec, &fit)
            .map_err(|e| PyValueError::new_err(format!("hypothesis {}: {e}", l + 1)))?;
        decs.push(dec);
    }
    let plan = make_plan(n, flips, seed);
    let matrix = build_matrix(&decs, &plan, standardized, alt).map_err(to_py_err)?;
    let bad = matrix.degenerate_observed();
    if !bad.is_empty() {
        return Err(PyValueError::new_err(format!(
            "degenerate observed statistic for hypothesis(es) {:?}",
            bad.iter().map(|l| l + 1).collect::<Vec<_>>()
        )));
    }

    let m_hyp = matrix.n_hypotheses();
    let level = rejection_level(alpha, matrix.n_flips());
    let raw_p: Vec<f64> = (0..m_hyp).map(|l| perm_pvalue(&matrix.column(l))).collect();
    let adj_p: Vec<f64> = match method {
        "maxt" => maxt_single_step(&matrix, alpha).map_err(to_py_err)?.adj_p,
        "maxt-sd" => maxt_step_down(&matrix, alpha).map_err(to_py_err)?.adj_p,
        "closed" => {
            closed_testing(&matrix, &parse_psi(psi)?, alpha)
                .map_err(to_py_err)?
                .adj_p
        }
        "global" => {
            let all: Vec<usize> = (0..m_hyp).collect();
            let p = global_test(&matrix, &all, &parse_psi(psi)?).map_err(to_py_err)?;
            raw_p.iter().map(|&r| r.max(p)).collect()
        }
        "mahalanobis" => {
            let scores =
                build_matrix(&decs, &plan, false, Alternative::Greater).map_err(to_py_err)?;
            let cov = flip_covariance(scores.stats());
            let p = mahalanobis_global(scores.stats(), &cov).map_err(to_py_err)?;
            raw_p.iter().map(|&r| r.max(p)).collect()
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown method '{other}' (maxt|maxt-sd|closed|mahalanobis|global)"
            )))
        }
    };

    let mut rows = Vec::with_capacity(m_hyp);
    for l in 0..m_hyp {
        let row = PyDict::new(py);
        row.set_item("hypothesis", l + 1)?;
        row.set_item("observed_stat", matrix.observed(l))?;
        row.set_item("raw_p", raw_p[l])?;
        row.set_item("adj_p", adj_p[l])?;
        row.set_item("rejected", adj_p[l] <= level)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Holm's step-down adjustment.
#[pyfunction]
fn holm(pvalues: Vec<f64>) -> Vec<f64> {
    bonferroni_holm(&pvalues)
}

#[pymodule]
fn signflip_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(null_fit, m)?)?;
    m.add_function(wrap_pyfunction!(full_fit, m)?)?;
    m.add_function(wrap_pyfunction!(score_test, m)?)?;
    m.add_function(wrap_pyfunction!(analyze, m)?)?;
    m.add_function(wrap_pyfunction!(holm, m)?)?;
    Ok(())
}
