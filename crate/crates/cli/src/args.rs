use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ngdim_core::estimator::Strategy;
use ngdim_core::hypothesis::{NoiseStrategy, TkSplit};
use ngdim_core::scatter::{HuberTail, LocationKind, ScatterKind, ScatterSpec, Symmetrization, WeightKind};
use ngdim_core::simulation::{Method, ModelName};
use ngdim_core::unmixing::ModelAssumption;

/// Test for and estimate the dimension of the non-Gaussian signal subspace.
#[derive(Debug, Clone, Parser)]
#[command(name = "ngdim", version)]
pub struct RunConfig {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads; defaults to the available parallelism. Results do not
    /// depend on it.
    #[arg(long, global = true, env = "NGDIM_THREADS")]
    pub threads: Option<usize>,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Bootstrap or asymptotic test of H0: the signal dimension is k.
    Test(TestArgs),
    /// Sequential estimate of the signal dimension.
    Estimate(EstimateArgs),
    /// Rejection-rate or estimator-frequency experiments on simulated models.
    Simulate(SimulateArgs),
    /// Two-scatter unmixing; writes the latent components as CSV.
    Unmix(UnmixArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Test(_) => "test",
            Command::Estimate(_) => "estimate",
            Command::Simulate(_) => "simulate",
            Command::Unmix(_) => "unmix",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file, one observation per row, optional header.
    #[arg(long, conflicts_with_all = ["data_model", "n", "data_seed"])]
    pub input: Option<PathBuf>,

    /// Draw the data from a simulation model instead (M1, M2, M1x, M2x, M1*, M2*).
    #[arg(long, requires = "n")]
    pub data_model: Option<ModelName>,

    /// Sample size for --data-model.
    #[arg(long)]
    pub n: Option<usize>,

    /// Seed for --data-model; defaults to --seed.
    #[arg(long)]
    pub data_seed: Option<u64>,
}

/// Scatter pair selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MethodChoice {
    Named(Method),
    Custom,
}

impl FromStr for MethodChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s.trim().eq_ignore_ascii_case("custom") {
            return Ok(MethodChoice::Custom);
        }
        s.parse().map(MethodChoice::Named).map_err(|e: ngdim_core::Error| e.to_string())
    }
}

impl std::fmt::Display for MethodChoice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MethodChoice::Named(m) => write!(f, "{m}"),
            MethodChoice::Custom => f.write_str("custom"),
        }
    }
}

/// Parse a scatter description for `--s1`/`--s2`.
///
/// `cov`, `cov4`, `cauchy`, `t<nu>`, `huber` or `huber<q>`, optionally
/// prefixed by `sym:` (all pairwise differences) or `isym<d>:` (incomplete
/// differences of degree d, permutation drawn from --seed).
pub fn parse_scatter(s: &str) -> Result<ScatterSpec, String> {
    let s = s.trim().to_ascii_lowercase();
    let (symmetrization, base) = if let Some(rest) = s.strip_prefix("sym:") {
        (Symmetrization::Complete, rest)
    } else if let Some(rest) = s.strip_prefix("isym") {
        let (d, base) = rest.split_once(':').ok_or_else(|| format!("expected isym<d>:<scatter>, got '{s}'"))?;
        let d = d.parse().map_err(|_| format!("bad incomplete degree in '{s}'"))?;
        (Symmetrization::Incomplete { d, seed: 0 }, base)
    } else {
        (Symmetrization::None, s.as_str())
    };
    let number = |t: &str| t.parse::<f64>().map_err(|_| format!("bad number in scatter '{s}'"));
    let kind = match base {
        "cov" => ScatterKind::Cov,
        "cov4" => ScatterKind::Cov4,
        "cauchy" => ScatterKind::M(WeightKind::cauchy()),
        "huber" => ScatterKind::M(WeightKind::huber()),
        b if b.starts_with("huber") => ScatterKind::M(WeightKind::Huber { q: number(&b[5..])?, tail: HuberTail::Standard }),
        b if b.starts_with('t') => ScatterKind::M(WeightKind::TLikelihood { nu: number(&b[1..])? }),
        _ => return Err(format!("unknown scatter '{s}'")),
    };
    let spec = ScatterSpec { kind, symmetrization };
    spec.validate().map_err(|e| e.to_string())?;
    Ok(spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LocationArg {
    Mean,
    FirstScatter,
}

impl From<LocationArg> for LocationKind {
    fn from(l: LocationArg) -> Self {
        match l {
            LocationArg::Mean => LocationKind::Mean,
            LocationArg::FirstScatter => LocationKind::FirstScatter,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct PairArgs {
    /// fobi, cov-cov4, cau-hub, scau-shub, scaui-shubi, scaui-shubi(<d>) or custom.
    #[arg(long, default_value = "cau-hub")]
    pub method: MethodChoice,

    /// First scatter for --method custom.
    #[arg(long, value_parser = parse_scatter, required_if_eq("method", "custom"))]
    pub s1: Option<ScatterSpec>,

    /// Second scatter for --method custom.
    #[arg(long, value_parser = parse_scatter, required_if_eq("method", "custom"))]
    pub s2: Option<ScatterSpec>,

    /// Location used to centre the data before whitening.
    #[arg(long, value_enum, default_value_t = LocationArg::Mean)]
    pub location: LocationArg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AssumptionArg {
    Ngca,
    Ngica,
}

impl From<AssumptionArg> for ModelAssumption {
    fn from(a: AssumptionArg) -> Self {
        match a {
            AssumptionArg::Ngca => ModelAssumption::Ngca,
            AssumptionArg::Ngica => ModelAssumption::Ngica,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoiseArg {
    Parametric,
    Rotation,
}

impl From<NoiseArg> for NoiseStrategy {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Parametric => NoiseStrategy::Parametric,
            NoiseArg::Rotation => NoiseStrategy::Rotation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Decomposition,
    Unnormalized,
}

impl From<SplitArg> for TkSplit {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Decomposition => TkSplit::Decomposition,
            SplitArg::Unnormalized => TkSplit::Unnormalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Incremental,
    DivideConquer,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Incremental => Strategy::Incremental,
            StrategyArg::DivideConquer => Strategy::DivideConquer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Rejection,
    Estimator,
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    /// Latent model assumed when resampling the signal.
    #[arg(long, value_enum, default_value_t = AssumptionArg::Ngca)]
    pub model: AssumptionArg,

    #[arg(long, value_enum, default_value_t = NoiseArg::Parametric)]
    pub noise: NoiseArg,

    /// Bootstrap samples per test.
    #[arg(long = "M", default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: u64,

    #[arg(long, env = "NGDIM_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Write a TOML report.
    #[arg(long)]
    pub report: Option<PathBuf>,

    /// Write replicate-level data as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub boot: BootstrapArgs,

    /// Hypothesized signal dimension.
    #[arg(long)]
    pub k: usize,

    /// Use the limit law of the FOBI statistic and the χ² tests on its two
    /// parts instead of the bootstrap (Cov-Cov4 only).
    #[arg(long)]
    pub asymptotic: bool,

    /// How the FOBI statistic is split into its two parts.
    #[arg(long, value_enum, default_value_t = SplitArg::Decomposition)]
    pub tk_split: SplitArg,

    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pair: PairArgs,
    #[command(flatten)]
    pub boot: BootstrapArgs,

    #[arg(long, value_enum, default_value_t = StrategyArg::Incremental)]
    pub strategy: StrategyArg,

    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Data model: M1, M2, M1x, M2x, M1*, M2*.
    #[arg(long, default_value = "M1")]
    pub model: ModelName,

    #[arg(long, default_value_t = 1000)]
    pub n: usize,

    #[arg(long, default_value_t = 200)]
    pub reps: usize,

    #[arg(long, value_delimiter = ',', default_value = "cov-cov4")]
    pub methods: Vec<Method>,

    /// Hypothesized dimensions for the rejection experiment.
    #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
    pub ks: Vec<usize>,

    #[arg(long, value_enum, default_value_t = ExperimentArg::Rejection)]
    pub experiment: ExperimentArg,

    /// Strategies for the estimator experiment.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "incremental,divide-conquer")]
    pub strategies: Vec<StrategyArg>,

    #[arg(long, value_enum, default_value_t = AssumptionArg::Ngca)]
    pub assumption: AssumptionArg,

    #[arg(long, value_enum, default_value_t = NoiseArg::Parametric)]
    pub noise: NoiseArg,

    #[arg(long = "M", default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub replicates: u64,

    #[arg(long, env = "NGDIM_SEED", default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,

    /// Run the complete simulation grid (1000 repetitions, four sample sizes,
    /// all methods). Takes days on a desktop.
    #[arg(long, conflicts_with_all = ["n", "reps", "methods", "ks", "experiment"])]
    pub full: bool,

    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct UnmixArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub pair: PairArgs,

    /// Order the rows as k signal components followed by the noise block.
    #[arg(long)]
    pub k: Option<usize>,

    /// Seed for incomplete symmetrization and --data-model.
    #[arg(long, env = "NGDIM_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Latent components, one observation per row.
    #[arg(long)]
    pub output: PathBuf,

    /// Write a TOML report with the unmixing matrix and eigenvalues.
    #[arg(long)]
    pub report: Option<PathBuf>,
}
