use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// Variance-function estimation and inference for paired log-intensities.
#[derive(Debug, Parser)]
#[command(name = "hetvar", version, about)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GlobalOpts {
    /// Seed for simulation studies (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Write results here instead of standard output; the run manifest goes
    /// to `<out>.manifest.json`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Output format. Fits default to JSON lines, tables to CSV.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,

    /// Worker threads for parallel loops (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Suppress log messages and the manifest on standard error.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Log,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    Exact,
    Naive,
    Region,
    Bonferroni,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PvalueMethod {
    Naive,
    Conservative,
    BergerBoos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PivotArg {
    PairMean,
    TwoObs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyArg {
    Estimator,
    Coverage,
    Power,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plug-in (MACL) estimating-equation fit of the variance function.
    FitMacl(FitMaclArgs),
    /// Mixture-model fit by EM on a variance-adaptive support grid.
    FitMixture(FitMixtureArgs),
    /// Confidence sets for a mean or a difference of means.
    Ci(CiArgs),
    /// p-values for equal means of each pair.
    Pvalue(PvalueArgs),
    /// Seeded Monte Carlo studies driven by a key=value config file.
    Simulate(SimulateArgs),
    /// Closed-form expectation of the MACL estimating equations.
    BiasOracle(BiasOracleArgs),
    /// Fit on control data, then intervals and p-values on experiment data.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BoundsArgs {
    /// Lower bound on the means.
    #[arg(long, default_value_t = 7.3, allow_negative_numbers = true)]
    pub a: f64,
    /// Upper bound on the means.
    #[arg(long, default_value_t = 13.9, allow_negative_numbers = true)]
    pub b: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ModelArgs {
    /// Variance coefficients, comma separated.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub theta: Vec<f64>,
    /// Variance form.
    #[arg(long, default_value = "exp-linear")]
    pub form: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitMaclArgs {
    /// Pair CSV with header id,y1,y2.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "exp-linear")]
    pub form: String,
    /// Starting coefficients (default: least squares on log S^2).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub init: Option<Vec<f64>>,
    #[arg(long, default_value_t = hetvar::macl::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = hetvar::macl::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Take the natural log of raw intensities on ingestion.
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FitMixtureArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "exp-linear")]
    pub form: String,
    /// Grid spacing in units of the pilot standard deviation.
    #[arg(long, default_value_t = hetvar::mixture_em::DEFAULT_D)]
    pub d: f64,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    #[arg(long, default_value_t = hetvar::mixture_em::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = hetvar::mixture_em::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    /// Leave the mixing weights out of the output record.
    #[arg(long)]
    pub no_weights: bool,
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CiArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// First observation (single-mean sets use this alone).
    #[arg(long, allow_negative_numbers = true)]
    pub y1: Option<f64>,
    /// Second observation; selects a difference interval.
    #[arg(long, allow_negative_numbers = true)]
    pub y2: Option<f64>,
    /// Batch mode: pair CSV; output appends lo,hi,disconnected,method.
    #[arg(long, conflicts_with_all = ["y1", "y2"])]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = hetvar::intervals::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, value_enum)]
    pub method: CiMethod,
    /// Bounds for the region and Bonferroni methods, and for the exact
    /// single-mean set when given explicitly.
    #[arg(long, allow_negative_numbers = true)]
    pub a: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub b: Option<f64>,
    #[arg(long, value_enum, default_value = "log")]
    pub scale: Scale,
    /// Resolution of the region scan, in log units.
    #[arg(long, default_value_t = hetvar::intervals::DEFAULT_GRID_RES)]
    pub grid_res: f64,
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PvalueArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Pair CSV; output appends statistic,p_value,mu_sup.
    #[arg(long, required_unless_present = "y1")]
    pub input: Option<PathBuf>,
    /// Single pair instead of a file.
    #[arg(long, requires = "y2", conflicts_with = "input", allow_negative_numbers = true)]
    pub y1: Option<f64>,
    #[arg(long, requires = "y1", allow_negative_numbers = true)]
    pub y2: Option<f64>,
    #[arg(long, value_enum)]
    pub method: PvalueMethod,
    /// Size of the nuisance confidence set deficit (Berger-Boos only).
    #[arg(long, default_value_t = hetvar::hypothesis::DEFAULT_BETA)]
    pub beta: f64,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    /// Also flag p-values at or below 0.05/N.
    #[arg(long)]
    pub bonferroni: bool,
    /// Pivot for the Berger-Boos nuisance set.
    #[arg(long, value_enum, default_value = "pair-mean")]
    pub cbeta_pivot: PivotArg,
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub study: StudyArg,
    /// Flat key=value study configuration.
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BiasOracleArgs {
    /// Exp-linear coefficients t1,t2.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub theta: Vec<f64>,
    /// Latent means, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, required_unless_present = "means")]
    pub mu: Option<Vec<f64>>,
    /// File of means (a `mu` column, or a pair file whose pair means are used).
    #[arg(long, conflicts_with = "mu")]
    pub means: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct PipelineArgs {
    /// Control pairs used to fit the variance function.
    #[arg(long)]
    pub control: PathBuf,
    /// Experiment pairs to test and bracket.
    #[arg(long)]
    pub experiment: PathBuf,
    #[arg(long, default_value = "exp-linear")]
    pub form: String,
    #[arg(long, default_value_t = hetvar::mixture_em::DEFAULT_D)]
    pub d: f64,
    #[command(flatten)]
    pub bounds: BoundsArgs,
    #[arg(long, default_value_t = hetvar::intervals::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = hetvar::hypothesis::DEFAULT_BETA)]
    pub beta: f64,
    #[arg(long, default_value_t = hetvar::intervals::DEFAULT_GRID_RES)]
    pub grid_res: f64,
    #[arg(long, value_enum, default_value = "log")]
    pub scale: Scale,
    #[arg(long, value_enum, default_value = "pair-mean")]
    pub cbeta_pivot: PivotArg,
    #[arg(long)]
    pub raw: bool,
}
