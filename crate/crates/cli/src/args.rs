use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Parser)]
#[command(name = "condreg", version, about = "Conditional inference for regression coefficients")]
pub struct Cli {
    /// Worker threads for replicate loops; output does not depend on it.
    #[arg(long, global = true, env = "CONDREG_WORKERS")]
    pub workers: Option<usize>,

    /// Write the report here instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Fit the model and report residuals and design diagnostics (JSON).
    Fit(FitArgs),
    /// Confidence intervals for the coefficients (JSON).
    Interval(IntervalArgs),
    /// Conditional coverage of interval methods on a fixed configuration.
    Coverage(CoverageArgs),
    /// Conditional MSE of least squares and polysampling rules (CSV).
    Polysample(PolysampleArgs),
    /// Mean and median intervals for a 15-value sample (JSON).
    Darwin(DarwinArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV with columns `y, x1..xp`.
    #[arg(long)]
    pub data: PathBuf,

    /// `reg` (location shift) or `regscale` (location and scale).
    #[arg(long, default_value = "regscale")]
    pub model: String,

    /// `ls` (alias `mean`) or `median`.
    #[arg(long, default_value = "ls")]
    pub estimator: String,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Exponent η of the moment condition n⁻¹Σ‖x_i‖^{2(1+η)}.
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
}

/// Settings shared by every command that builds interval methods.
#[derive(Debug, Clone, Args)]
pub struct MethodArgs {
    /// PI plug-in bandwidth; defaults to the rate bandwidth h0.
    #[arg(long)]
    pub h: Option<f64>,

    /// NPI density bandwidth; needs `--h1` as well.
    #[arg(long, requires = "h1")]
    pub h0: Option<f64>,

    /// NPI derivative bandwidth; needs `--h0` as well.
    #[arg(long, requires = "h0")]
    pub h1: Option<f64>,

    /// gaussian, quartic or triweight.
    #[arg(long, default_value = "gaussian")]
    pub kernel: String,

    /// Resamples for RB and draws for the exact-unconditional method.
    /// Raised to 20/α when the smallest α needs more.
    #[arg(long = "B")]
    pub b: Option<usize>,

    /// Conditional draws for PI.
    #[arg(long, default_value_t = condreg::intervals::DEFAULT_PI_DRAWS)]
    pub draws: usize,

    /// PI quantiles by quadrature instead of draws (one coefficient only).
    #[arg(long)]
    pub quadrature: bool,

    /// PI and NPI use the true density named by `--dist`.
    #[arg(long)]
    pub oracle: bool,

    /// Confidence levels, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with = "alpha")]
    pub levels: Option<Vec<f64>>,

    /// Two-sided α values, comma separated; level = 1 − α.
    #[arg(long, value_delimiter = ',')]
    pub alpha: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Args)]
pub struct IntervalArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// exact, rb, pi or npi.
    #[arg(long)]
    pub method: String,

    #[command(flatten)]
    pub methods: MethodArgs,

    /// True error density, e.g. `normal`, `t(5)`, `cbeta(2,2)`.
    #[arg(long)]
    pub dist: Option<String>,

    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CoverageArgs {
    /// Configuration from a data file; otherwise drawn from `--dist`.
    #[arg(long, conflicts_with_all = ["n", "inject"])]
    pub data: Option<PathBuf>,

    /// Sample size of the drawn configuration (location design).
    #[arg(long)]
    pub n: Option<usize>,

    /// Replace the first draw by this many sample standard deviations.
    #[arg(long, allow_hyphen_values = true)]
    pub inject: Option<f64>,

    /// Seed of the drawn configuration; defaults to `--seed`.
    #[arg(long)]
    pub ancillary_seed: Option<u64>,

    #[arg(long, default_value = "regscale")]
    pub model: String,

    #[arg(long, default_value = "ls")]
    pub estimator: String,

    /// True error density of the replicates.
    #[arg(long, default_value = "t(5)")]
    pub dist: String,

    /// Interval methods, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "pi,exact")]
    pub method: Vec<String>,

    #[command(flatten)]
    pub methods: MethodArgs,

    /// Conditional replicates.
    #[arg(long = "R", default_value_t = 5000)]
    pub r: usize,

    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    pub beta: f64,

    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,

    /// Coefficient whose coverage is reported.
    #[arg(long, default_value_t = 0)]
    pub coordinate: usize,

    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,

    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct PolysampleArgs {
    /// Confrontations: `i` normal vs slash, `ii` LS vs PI, `iii` PI vs PI,
    /// or `F:G` for two named densities.
    #[arg(long, value_delimiter = ',', default_value = "i,ii,iii")]
    pub confrontation: Vec<String>,

    /// Multipliers C of the (ii) bandwidth C·n^{−1/9}.
    #[arg(long = "C", value_delimiter = ',', default_value = "0.1,0.5,1.0,1.5,2.0,2.5")]
    pub c: Vec<f64>,

    #[arg(long, default_value_t = 0.1)]
    pub ha: f64,

    #[arg(long, default_value_t = 2.0)]
    pub hb: f64,

    /// Error distributions; repeat the flag or separate with commas.
    #[arg(long = "dist", num_args = 1..)]
    pub dist: Vec<String>,

    #[arg(long, default_value_t = 15)]
    pub n: usize,

    /// Use this data's residual configuration for every distribution.
    #[arg(long, conflicts_with = "n")]
    pub data: Option<PathBuf>,

    /// Conditional replicates per distribution.
    #[arg(long = "R", default_value_t = 10_000)]
    pub r: usize,

    /// `minimax`, `bioptimal` or both.
    #[arg(long, value_delimiter = ',', default_value = "minimax")]
    pub rule: Vec<String>,

    /// Bioptimal prices P_F,P_G.
    #[arg(long, value_delimiter = ',', default_values_t = [1.0, 1.0])]
    pub prices: Vec<f64>,

    /// Location-only equivariance (raw residuals, no scale).
    #[arg(long)]
    pub location_only: bool,

    /// Kernel of the plug-in members.
    #[arg(long, default_value = "gaussian")]
    pub kernel: String,

    #[arg(long)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DarwinArgs {
    /// 15 numbers, separated by commas or whitespace; a leading `y` header
    /// line is allowed.
    #[arg(long)]
    pub data: PathBuf,

    /// RB resamples.
    #[arg(long = "B", default_value_t = 50_000)]
    pub b: usize,

    /// Multipliers of the normal-reference bandwidth for PI.
    #[arg(long, value_delimiter = ',', default_value = "0.2,0.5,0.7,1.0,1.3,1.5")]
    pub multipliers: Vec<f64>,

    #[arg(long, default_value = "gaussian")]
    pub kernel: String,

    /// Conditional draws for PI.
    #[arg(long, default_value_t = condreg::intervals::DEFAULT_PI_DRAWS)]
    pub draws: usize,

    #[arg(long)]
    pub quadrature: bool,

    #[arg(long, value_delimiter = ',', default_value = "0.95")]
    pub levels: Vec<f64>,

    #[arg(long)]
    pub seed: u64,
}
