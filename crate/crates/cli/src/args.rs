use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use redistill::verify::Suite;

#[derive(Debug, Parser)]
#[command(name = "redistill", version, about = "Distillation experiments and statistics with power divergences")]
pub struct Cli {
    /// Experiment config (JSON). Required by train-teacher, distill, sweep-lambda and compare.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Directory for checkpoints and metrics.
    #[arg(long, global = true, value_name = "DIR", env = "REDISTILL_OUT", default_value = "redistill-out")]
    pub out: PathBuf,

    /// Master seed. For experiments it replaces the config seeds with
    /// `seed, seed+1, ...`, keeping their count.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the randomized divergence and loss self-checks.
    Verify(VerifyArgs),
    /// Train one teacher per seed with cross-entropy.
    TrainTeacher,
    /// Distill one student per seed with the configured loss.
    Distill(DistillArgs),
    /// Distill across divergence orders and aggregate accuracy per order.
    SweepLambda(SweepArgs),
    /// Compare KD, DKD and REDistill on matched seeds.
    Compare,
    /// Influence of an added observation on the simplex estimator.
    Influence(InfluenceArgs),
    /// Power-divergence goodness-of-fit test against a null distribution.
    Gof(GofArgs),
    /// Monte-Carlo power against a bump or dip alternative.
    Power(PowerArgs),
    /// Summarize a stored metrics file.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Suite to run; repeat for several. Defaults to all.
    #[arg(long = "suite", value_parser = parse_suite)]
    pub suites: Vec<Suite>,

    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    /// Offset added to analytic gradients, to exercise the failure path.
    #[arg(long, hide = true, default_value_t = 0.0, allow_negative_numbers = true)]
    pub perturb_gradient: f64,
}

#[derive(Debug, Args)]
pub struct DistillArgs {
    /// Teacher checkpoint used for every seed. Without it a teacher is
    /// trained per seed.
    #[arg(long, value_name = "PATH")]
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Comma-separated orders; fractions such as 2/3 are accepted.
    #[arg(long, value_delimiter = ',', value_parser = parse_real, allow_negative_numbers = true)]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct InfluenceArgs {
    /// Fitted distribution, comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_real, required = true)]
    pub q: Vec<f64>,

    #[arg(long, value_delimiter = ',', value_parser = parse_real, allow_negative_numbers = true)]
    pub lambdas: Option<Vec<f64>>,

    /// Class receiving a one-hot outlier; adds the empirical re-fit and the
    /// exact influence for a sample concentrated at `q`.
    #[arg(long)]
    pub outlier: Option<usize>,

    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct GofArgs {
    /// Observed counts, comma-separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub counts: Vec<u64>,

    /// Null distribution; uniform when omitted.
    #[arg(long, value_delimiter = ',', value_parser = parse_real)]
    pub expected: Option<Vec<f64>>,

    #[arg(long, value_parser = parse_real, default_value = "2/3", allow_negative_numbers = true)]
    pub lambda: f64,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    #[arg(long)]
    pub k: usize,

    /// Bump size on class 0; negative values give a dip.
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,

    /// Sample size per trial.
    #[arg(long)]
    pub n: u64,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    #[arg(long, default_value_t = 1000)]
    pub trials: usize,

    #[arg(long, value_parser = parse_real, default_value = "2/3", allow_negative_numbers = true)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics file written by distill, sweep-lambda or compare.
    #[arg(value_name = "METRICS")]
    pub metrics: PathBuf,
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

/// A real number, or a fraction `a/b`.
pub fn parse_real(s: &str) -> Result<f64, String> {
    let s = s.trim();
    let value = match s.split_once('/') {
        Some((num, den)) => {
            let num: f64 = num.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            let den: f64 = den.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
            num / den
        }
        None => s.parse().map_err(|_| format!("`{s}` is not a number"))?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}
