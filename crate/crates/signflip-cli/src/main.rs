//! Batch front door for sign-flip score tests over delimited files.

mod analyze;
mod io;
mod simulate;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use signflip::glm::{Family, Link};
use signflip::multitest::CombiningFunction;
use signflip::score::Alternative;

use analyze::{load_inputs, run_analysis, validate_inputs, AnalysisConfig, AnalysisMethod};
use io::DelimiterChoice;

#[derive(Parser)]
#[command(
    name = "signflip",
    about = "Sign-flip score tests for many GLMs with permutation-based FWER control",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test every response column against the shared design and write a TSV report.
    Analyze(AnalyzeArgs),
    /// Report input diagnostics (rank, collinearity, support, missing values) and exit.
    Validate(ValidateArgs),
    /// Run a size/FWER/power study from a TOML scenario config.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Response matrix, n rows x m columns.
    #[arg(long)]
    y: PathBuf,
    /// Target covariate, n rows x 1 column.
    #[arg(long)]
    x: PathBuf,
    /// Nuisance design, n rows x (k-1) columns. An intercept is NOT added
    /// implicitly; include a constant column if you want one.
    #[arg(long)]
    z: Option<PathBuf>,
    /// Outcome family: gaussian, binomial, or poisson.
    #[arg(long)]
    family: Family,
    /// Link function; defaults to the family's canonical link.
    #[arg(long)]
    link: Option<Link>,
    /// Field delimiter: auto, comma, or tab.
    #[arg(long, default_value = "auto")]
    delimiter: DelimiterChoice,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Procedure: maxt, maxt-sd, closed, mahalanobis, or global.
    #[arg(long, default_value = "maxt-sd")]
    method: AnalysisMethod,
    /// Combining function for closed/global: maxabs, sumabs, or sumsq.
    #[arg(long, default_value = "maxabs")]
    psi: CombiningFunction,
    /// Familywise error level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Number of sign flips (the identity flip is row one of this count).
    #[arg(long, default_value_t = 2000)]
    flips: usize,
    /// Seed for the flip plan; required so runs are explicitly reproducible.
    #[arg(long)]
    seed: u64,
    /// Null value for the target coefficient.
    #[arg(long, default_value_t = 0.0)]
    beta0: f64,
    /// Alternative: two-sided, greater, or less.
    #[arg(long, default_value = "two-sided")]
    alternative: Alternative,
    /// Statistic: standardized or effective.
    #[arg(long, default_value = "standardized")]
    statistic: String,
    /// Output report path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: InputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// TOML scenario config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the tidy CSV.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Analyze(args) => {
            let standardized = match args.statistic.as_str() {
                "standardized" => true,
                "effective" => false,
                other => anyhow::bail!("unknown statistic '{other}' (standardized|effective)"),
            };
            if !(args.alpha > 0.0 && args.alpha < 1.0) {
                anyhow::bail!("alpha must lie in (0, 1)");
            }
            if args.flips < 2 {
                anyhow::bail!(
                    "--flips must be at least 2 (the identity flip plus one random flip)"
                );
            }
            let family = args.input.family;
            let cfg = AnalysisConfig {
                y_file: args.input.y,
                x_file: args.input.x,
                z_file: args.input.z,
                family,
                link: args.input.link.unwrap_or_else(|| family.canonical_link()),
                method: args.method,
                psi: args.psi,
                alternative: args.alternative,
                standardized,
                alpha: args.alpha,
                flips: args.flips,
                seed: args.seed,
                beta0: args.beta0,
                out: args.out,
                delimiter: args.input.delimiter,
            };
            run_analysis(&cfg)
        }
        Command::Validate(args) => {
            let family = args.input.family;
            let cfg = AnalysisConfig {
                y_file: args.input.y,
                x_file: args.input.x,
                z_file: args.input.z,
                family,
                link: args.input.link.unwrap_or_else(|| family.canonical_link()),
                method: AnalysisMethod::MaxtStepDown,
                psi: CombiningFunction::MaxAbs,
                alternative: Alternative::TwoSided,
                standardized: true,
                alpha: 0.05,
                flips: 2,
                seed: 0,
                beta0: 0.0,
                out: PathBuf::new(),
                delimiter: args.input.delimiter,
            };
            let inputs = load_inputs(&cfg)?;
            let diag = validate_inputs(&inputs, family);
            if diag.is_clean() {
                println!("clean: no findings");
            } else {
                for f in &diag.findings {
                    println!("[{}] {}", f.code, f.message);
                }
            }
            Ok(())
        }
        Command::Simulate(args) => simulate::run_simulate(&args.config, &args.out),
    }
}
