//! Delimited matrix input and the TSV report format.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use nalgebra::DMatrix;

/// Delimiter choice from the command line; `Auto` sniffs the first line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DelimiterChoice {
    Auto,
    Comma,
    Tab,
}

impl std::str::FromStr for DelimiterChoice {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(DelimiterChoice::Auto),
            "comma" | "," => Ok(DelimiterChoice::Comma),
            "tab" | "\\t" | "\t" => Ok(DelimiterChoice::Tab),
            other => bail!("unknown delimiter '{other}' (use auto, comma, or tab)"),
        }
    }
}

fn sniff(path: &Path) -> Result<u8> {
    let file = File::open(path).with_context(|| format!("open {}", path.display()))?;
    let mut first = String::new();
    BufReader::new(file)
        .read_line(&mut first)
        .with_context(|| format!("read {}", path.display()))?;
    if first.contains('\t') {
        Ok(b'\t')
    } else {
        Ok(b',')
    }
}

/// Read an n x m numeric matrix. Empty fields, `NA`, and `NaN` parse to NaN
/// so that the validator can report them; anything else non-numeric is a
/// parse error.
pub fn read_matrix(path: &Path, choice: DelimiterChoice) -> Result<DMatrix<f64>> {
    let delim = match choice {
        DelimiterChoice::Auto => sniff(path)?,
        DelimiterChoice::Comma => b',',
        DelimiterChoice::Tab => b'\t',
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delim)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("open {}", path.display()))?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        if record.len() == 1 && record[0].is_empty() {
            continue; // trailing blank line
        }
        let mut row = Vec::with_capacity(record.len());
        for (j, field) in record.iter().enumerate() {
            let v = match field {
                "" => f64::NAN,
                s if s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") => f64::NAN,
                s => s.parse::<f64>().with_context(|| {
                    format!(
                        "{}: row {}, column {}: '{s}' is not a number",
                        path.display(),
                        i + 1,
                        j + 1
                    )
                })?,
            };
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => bail!(
                "{}: row {} has {} fields, expected {w}",
                path.display(),
                i + 1,
                row.len()
            ),
            _ => {}
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    let n = rows.len();
    let m = width.unwrap();
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

/// Twelve significant digits; the report round-trips exactly at this width.
pub fn fmt12(v: f64) -> String {
    format!("{v:.11e}")
}

pub struct ReportHeader {
    pub seed: u64,
    pub flips: usize,
    pub method: String,
    pub psi: Option<String>,
    pub alpha: f64,
    pub rejection_level: f64,
    pub alternative: String,
    pub statistic: String,
    pub family: String,
    pub link: String,
    pub beta0: f64,
    pub n: usize,
    pub m: usize,
    pub k_minus_1: usize,
    pub convergence_failures: usize,
    pub degenerate_cells: usize,
    pub global_p: Option<f64>,
}

pub struct ReportRow {
    pub hypothesis_id: usize,
    pub observed_stat: f64,
    pub raw_p: f64,
    pub adj_p: f64,
    pub rejected: bool,
}

pub fn write_report<W: Write>(mut out: W, header: &ReportHeader, rows: &[ReportRow]) -> Result<()> {
    writeln!(out, "# signflip report")?;
    writeln!(out, "# seed: {}", header.seed)?;
    writeln!(out, "# flips: {}", header.flips)?;
    writeln!(out, "# method: {}", header.method)?;
    if let Some(psi) = &header.psi {
        writeln!(out, "# psi: {psi}")?;
    }
    writeln!(out, "# alpha: {}", header.alpha)?;
    writeln!(out, "# rejection_level: {}", fmt12(header.rejection_level))?;
    writeln!(out, "# alternative: {}", header.alternative)?;
    writeln!(out, "# statistic: {}", header.statistic)?;
    writeln!(out, "# family: {}", header.family)?;
    writeln!(out, "# link: {}", header.link)?;
    writeln!(out, "# beta0: {}", header.beta0)?;
    writeln!(
        out,
        "# shape: n={} m={} k_minus_1={}",
        header.n, header.m, header.k_minus_1
    )?;
    writeln!(
        out,
        "# convergence_failures: {}",
        header.convergence_failures
    )?;
    writeln!(out, "# degenerate_cells: {}", header.degenerate_cells)?;
    if let Some(p) = header.global_p {
        writeln!(out, "# global_p: {}", fmt12(p))?;
    }
    writeln!(out, "hypothesis_id\tobserved_stat\traw_p\tadj_p\trejected")?;
    for r in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.hypothesis_id,
            fmt12(r.observed_stat),
            fmt12(r.raw_p),
            fmt12(r.adj_p),
            r.rejected
        )?;
    }
    Ok(())
}
