use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use survexplain::metrics::default_eval_grid;
use survexplain::{SurvivalDataset, TimeGrid};

use crate::{usage, CliResult};

#[derive(Parser)]
#[command(
    name = "survexplain",
    version,
    about = "Explain right-censored survival models"
)]
pub struct Cli {
    /// Worker threads; results do not depend on this value
    #[arg(long, global = true, env = "SURVEXPLAIN_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset (data.csv, schema.json)
    Synth(SynthArgs),
    /// Fit a model and write its JSON document
    Fit(FitArgs),
    /// Brier curve, integrated Brier score, C-index and D-calibration
    Evaluate(EvaluateArgs),
    /// Run an explainer
    Explain(ExplainArgs),
}

#[derive(Args, Serialize, Clone)]
pub struct DataArgs {
    /// CSV file with a header row
    #[arg(long)]
    pub data: PathBuf,
    /// JSON schema sidecar
    #[arg(long)]
    pub schema: PathBuf,
    /// Fill missing cells (numeric median, categorical mode)
    #[arg(long)]
    pub impute: bool,
}

#[derive(Args, Serialize, Clone)]
pub struct TimeArgs {
    /// `auto` for the clipped event-time grid, or a comma-separated list
    #[arg(long, default_value = "auto")]
    pub times: String,
    /// Thin the `auto` grid to this many event times
    #[arg(long)]
    pub n_times: Option<usize>,
}

impl TimeArgs {
    pub fn resolve(&self, data: &SurvivalDataset) -> CliResult<TimeGrid> {
        if self.times.trim() == "auto" {
            let grid = default_eval_grid(data)?;
            return Ok(match self.n_times {
                Some(0) => return Err(usage("--n-times must be positive")),
                Some(k) if k < grid.len() => thin(&grid, k)?,
                _ => grid,
            });
        }
        if self.n_times.is_some() {
            return Err(usage("--n-times only applies to --times auto"));
        }
        let points = self
            .times
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| usage(format!("cannot parse time `{s}`")))
            })
            .collect::<CliResult<Vec<f64>>>()?;
        Ok(TimeGrid::new(points)?)
    }
}

/// `k` evenly spaced entries of the grid by rank, ends included.
fn thin(grid: &TimeGrid, k: usize) -> CliResult<TimeGrid> {
    let pts = grid.points();
    let m = pts.len();
    let mut out: Vec<f64> = if k == 1 {
        vec![pts[0]]
    } else {
        (0..k)
            .map(|i| pts[((i * (m - 1)) as f64 / (k - 1) as f64).round() as usize])
            .collect()
    };
    out.dedup();
    Ok(TimeGrid::new(out)?)
}

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    pub n: usize,
    /// Number of features when --coefficients is not given
    #[arg(long)]
    pub p: Option<usize>,
    /// True coefficients, comma-separated
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coefficients: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.3)]
    pub censoring_rate: f64,
    /// Exponential baseline rate (Weibull: inverse scale)
    #[arg(long, default_value_t = 0.1)]
    pub baseline_rate: f64,
    /// Use a Weibull baseline with this shape
    #[arg(long)]
    pub weibull_shape: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Cox,
    Rsf,
}

#[derive(Args, Serialize)]
pub struct FitArgs {
    pub family: Family,
    #[command(flatten)]
    pub data: DataArgs,
    /// Model JSON file to write
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 1e-9)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 100)]
    pub n_trees: usize,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long, default_value_t = 15)]
    pub min_node_size: usize,
    #[arg(long, default_value_t = 64)]
    pub split_candidates: usize,
    #[arg(long)]
    pub no_bootstrap: bool,
}

#[derive(Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Report JSON file to write
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub times: TimeArgs,
    /// D-calibration bins
    #[arg(long, default_value_t = 10)]
    pub bins: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Ice,
    Pdp,
    Ale,
    Mplot,
    Hstat,
    Pfi,
    Cpi,
    Loco,
    Survlime,
    Survshap,
    Counterfactual,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Ice => "ice",
            Method::Pdp => "pdp",
            Method::Ale => "ale",
            Method::Mplot => "mplot",
            Method::Hstat => "hstat",
            Method::Pfi => "pfi",
            Method::Cpi => "cpi",
            Method::Loco => "loco",
            Method::Survlime => "survlime",
            Method::Survshap => "survshap",
            Method::Counterfactual => "counterfactual",
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scale {
    Survival,
    Chf,
    LogChf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKindArg {
    Equidistant,
    Quantile,
    Sample,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    Mean,
    Sum,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Weights {
    /// Each grid time counts once
    Unique,
    /// Each grid time counts once per observed event at that time
    Observed,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    Difference,
    Quotient,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LimeBaseline {
    Breslow,
    NelsonAalen,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Sampling,
    Kernel,
}

#[derive(Args, Serialize)]
pub struct ExplainArgs {
    pub method: Method,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub times: TimeArgs,
    /// Model output explained by effects and interactions
    #[arg(long, value_enum, default_value_t = Scale::Survival)]
    pub scale: Scale,

    /// Feature name (effects, hstat)
    #[arg(long)]
    pub feature: Option<String>,
    #[arg(long, value_enum, default_value_t = GridKindArg::Quantile)]
    pub grid_kind: GridKindArg,
    #[arg(long, default_value_t = 20)]
    pub grid_size: usize,
    /// Center ICE/PDP curves at this feature value
    #[arg(long, allow_hyphen_values = true)]
    pub center_at: Option<f64>,
    /// Seeded ICE instance subsample
    #[arg(long, default_value_t = 100)]
    pub ice_rows: usize,
    /// Collapse the time axis of effect surfaces
    #[arg(long, value_enum)]
    pub marginalize: Option<Aggregate>,
    #[arg(long, value_enum, default_value_t = Weights::Unique)]
    pub time_weights: Weights,
    /// ALE intervals
    #[arg(long, default_value_t = 10)]
    pub intervals: usize,
    /// Report ALE without centering
    #[arg(long)]
    pub uncentered: bool,
    /// M-plot neighborhood fraction
    #[arg(long, default_value_t = 0.1)]
    pub fraction: f64,

    /// Second feature for a two-way H-statistic (total H without it)
    #[arg(long)]
    pub with: Option<String>,
    #[arg(long, default_value_t = 200)]
    pub eval_rows: usize,

    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Difference)]
    pub mode: ModeArg,
    /// Held-out data for LOCO (defaults to --data)
    #[arg(long)]
    pub test_data: Option<PathBuf>,

    /// Row index of the explained instance
    #[arg(long)]
    pub instance: Option<usize>,
    /// SurvLIME neighborhood size
    #[arg(long, default_value_t = 100)]
    pub g: usize,
    #[arg(long, default_value_t = 0.5)]
    pub radius: f64,
    #[arg(long, value_enum, default_value_t = LimeBaseline::Breslow)]
    pub lime_baseline: LimeBaseline,

    #[arg(long, value_enum, default_value_t = Estimator::Sampling)]
    pub estimator: Estimator,
    /// Permutations or coalitions: a count or `all` (default: exact up to 6 features, else 200)
    #[arg(long)]
    pub samples: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub background: usize,
    /// Instances explained for the global SurvSHAP summary
    #[arg(long, default_value_t = 20)]
    pub shap_rows: usize,

    /// Required gain in restricted mean survival time
    #[arg(long)]
    pub r_gap: Option<f64>,
    /// Distance penalty C
    #[arg(long, default_value_t = 0.1)]
    pub penalty: f64,
    #[arg(long, default_value_t = 50)]
    pub particles: usize,
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
}
