//! `mfda`: simulate, fit, summarise and test nested functional data.
//!
//! Exit codes: 0 success, 2 usage or input error, 3 model precondition not
//! met, 4 numerical failure. Diagnostics go to stderr; stdout only carries
//! the documented summary values.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mfda_core::{Error, ErrorKind};

#[derive(Debug, Parser)]
#[command(name = "mfda", version, about = "Multilevel functional PCA for repeated curves")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a synthetic dataset from a generator spec (TOML).
    Simulate(SimulateArgs),
    /// Fit a nested two- or three-level model to a long-format CSV file.
    Fit(FitArgs),
    /// Pointwise and global intraclass correlation of a fit.
    Icc(IccArgs),
    /// Compare level scores between two groups of measures.
    Test(TestArgs),
    /// Spearman correlation of scores with a per-subject covariate.
    Correlate(CorrelateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Generator spec file.
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed of the spec.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Long-format CSV dataset.
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub channel: Option<String>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub pve: Option<f64>,
    /// Smooth covariance surfaces before the eigendecomposition.
    #[arg(long)]
    pub smooth: bool,
    /// Kernel bandwidth; implies --smooth.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Fix the measure mean functions at zero.
    #[arg(long)]
    pub zero_measure_means: bool,
    /// `strict` or `intersect`.
    #[arg(long)]
    pub grid_policy: Option<String>,
    /// TOML file with defaults for the options above.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IccArgs {
    pub fit_dir: PathBuf,
    /// Output directory; defaults to the fit directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    pub fit_dir: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub level: usize,
    /// Measures of group A (comma separated or repeated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub group_a: Vec<String>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub group_b: Vec<String>,
    /// `ks`, `cvm` or `energy`.
    #[arg(long, default_value = "energy")]
    pub method: String,
    #[arg(long, default_value_t = 999)]
    pub perms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Permute group labels within subjects.
    #[arg(long)]
    pub paired: bool,
    /// Asymptotic KS p-values instead of permutations.
    #[arg(long)]
    pub ks_asymptotic: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    pub fit_dir: PathBuf,
    /// CSV with a `subject` column and one or more covariate columns.
    #[arg(long)]
    pub covariate: PathBuf,
    /// Covariate column; defaults to the first non-subject column.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub level: usize,
    /// Measure whose level-2 scores are used.
    #[arg(long)]
    pub measure: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Input => 2,
        ErrorKind::Model => 3,
        ErrorKind::Numerical => 4,
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("MFDA_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|n| *n >= 1)
        .ok_or_else(|| Error::InvalidParameter(format!("MFDA_THREADS={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParameter(format!("cannot configure threads: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Icc(a) => commands::icc(&a),
        Command::Test(a) => commands::test(&a),
        Command::Correlate(a) => commands::correlate(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mfda: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
