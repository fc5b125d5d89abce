use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

pub const CACHE_ENV: &str = "COVWATCH_CRITVAL_CACHE";

#[derive(Debug, Parser)]
#[command(name = "covwatch", version, about = "Online detection of covariance changes in high-dimensional streams")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output path.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightKind {
    /// `(1+t)^{γ−1} t^{−γ}`, threshold simulated.
    PowerLaw,
    /// Logarithmic boundary, threshold 1.
    Log,
}

/// Monitoring rule flags shared by `monitor` and `analyze`.
#[derive(Debug, Args)]
pub struct RuleArgs {
    /// Test function: linear, square, log1p or mix.
    #[arg(long, default_value = "log1p")]
    pub f: covwatch::TestFunction,
    #[arg(long, value_enum, default_value = "power-law")]
    pub weight: WeightKind,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Use this threshold instead of simulating one.
    #[arg(long)]
    pub c_alpha: Option<f64>,
    /// Override the default burn-in of ⌈ln n⌉ steps.
    #[arg(long)]
    pub burn_in: Option<usize>,
    /// Fix the fourth moment instead of estimating it from the baseline.
    #[arg(long)]
    pub nu4: Option<f64>,
    /// Brownian paths used when the threshold must be simulated.
    #[arg(long, default_value_t = 200_000)]
    pub paths: usize,
    #[arg(long, env = CACHE_ENV)]
    pub critval_cache: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the critical value of the power-law weighted detector.
    Critval {
        #[arg(long)]
        alpha: f64,
        #[arg(long)]
        gamma: f64,
        #[arg(long, default_value_t = 200_000)]
        paths: usize,
        #[arg(long, env = CACHE_ENV)]
        cache: Option<PathBuf>,
        /// Use the 19000-point grid instead of the 1000-point one.
        #[arg(long)]
        fine_grid: bool,
    },
    /// Monitor a stream of observations against a historical baseline.
    Monitor {
        /// Observation CSV, one row per time point; the first k1 rows form the baseline.
        #[arg(long)]
        history: PathBuf,
        /// Rows arriving after the history; `-` or absent reads stdin.
        #[arg(long)]
        stream: Option<PathBuf>,
        #[arg(long)]
        k1: usize,
        #[command(flatten)]
        rule: RuleArgs,
    },
    /// Run a batch of simulated scenarios from a JSON plan.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        /// Include wall-clock timings (makes reports non-reproducible).
        #[arg(long)]
        runtime: bool,
        #[arg(long, env = CACHE_ENV)]
        critval_cache: Option<PathBuf>,
    },
    /// Clean a price panel and monitor its log-returns.
    Analyze {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, default_value_t = 30)]
        top: usize,
        #[arg(long, default_value_t = 40)]
        k1: usize,
        #[arg(long, default_value_t = 40)]
        k2: usize,
        #[arg(long, default_value_t = covwatch::ingest::DEFAULT_WINSOR_SD)]
        winsor_sd: f64,
        #[arg(long, default_value_t = covwatch::ingest::DEFAULT_MAX_MISSING_RATE)]
        max_missing: f64,
        /// Rank volatility on raw instead of winsorized returns.
        #[arg(long)]
        rank_raw: bool,
        #[command(flatten)]
        rule: RuleArgs,
    },
    /// Report whether a test function can see a given covariance change.
    DetectCheck {
        #[arg(long)]
        c1: f64,
        #[arg(long)]
        c2: f64,
        #[arg(long)]
        tau1: f64,
        #[arg(long)]
        tau2: f64,
        #[arg(long, default_value = "log1p")]
        f: covwatch::TestFunction,
        #[arg(long)]
        kstar: usize,
        #[arg(long)]
        n: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.common.log_level).init();
    if let Some(t) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 3 } else { 2 })
        }
    }
}
