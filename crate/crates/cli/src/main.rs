//! `survexplain` command-line driver.

mod args;
mod explain;
mod output;

use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use survexplain::dataio::{generate_synthetic, write_csv, Baseline, DatasetSchema, SyntheticSpec};
use survexplain::metrics::evaluate;
use survexplain::models::{fit_cox, fit_rsf, CoxConfig, ModelDocument, RsfConfig};

use args::{Cli, Command, EvaluateArgs, Family, FitArgs, SynthArgs};
use output::{load_dataset, load_model_document, write_artifact};

pub enum Failure {
    Usage(String),
    Compute(survexplain::Error),
}

impl From<survexplain::Error> for Failure {
    fn from(e: survexplain::Error) -> Self {
        Failure::Compute(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Compute(e.into())
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn main() -> ExitCode {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .parse_env("SURVEXPLAIN_LOG")
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!(
                "{}",
                json!({ "error": { "kind": "usage", "message": msg } })
            );
            ExitCode::from(2)
        }
        Err(Failure::Compute(e)) => {
            eprintln!(
                "{}",
                json!({ "error": { "kind": e.kind(), "message": e.to_string() } })
            );
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| usage(e.to_string()))?;
    }
    let threads = rayon::current_num_threads();
    match &cli.command {
        Command::Synth(a) => synth(a, threads),
        Command::Fit(a) => fit(a, threads),
        Command::Evaluate(a) => evaluate_cmd(a, threads),
        Command::Explain(a) => explain::run(a, threads),
    }
}

fn synth(a: &SynthArgs, threads: usize) -> CliResult<()> {
    let seed = a.seed.ok_or_else(|| usage("synth needs --seed"))?;
    let coefficients = match (&a.coefficients, a.p) {
        (Some(c), None) => c.clone(),
        (Some(c), Some(p)) if c.len() == p => c.clone(),
        (Some(_), Some(_)) => return Err(usage("--p disagrees with --coefficients")),
        (None, p) => default_coefficients(p.unwrap_or(2)),
    };
    let baseline = match a.weibull_shape {
        Some(shape) => Baseline::Weibull {
            shape,
            scale: 1.0 / a.baseline_rate,
        },
        None => Baseline::Exponential {
            rate: a.baseline_rate,
        },
    };
    let spec = SyntheticSpec {
        n: a.n,
        coefficients,
        baseline,
        censoring_rate: a.censoring_rate,
        correlation: None,
        interactions: Vec::new(),
        seed,
    };
    let data = generate_synthetic(&spec)?;
    std::fs::create_dir_all(&a.out)?;
    write_csv(&data, std::fs::File::create(a.out.join("data.csv"))?)?;
    DatasetSchema::for_dataset(&data).to_file(&a.out.join("schema.json"))?;
    let summary = json!({
        "n": data.n_rows(),
        "events": data.n_events(),
        "censored_fraction": 1.0 - data.n_events() as f64 / data.n_rows() as f64,
    });
    write_artifact(
        &a.out.join("synth.json"),
        "synth",
        &spec,
        Some(seed),
        threads,
        &summary,
    )
}

/// `b_j = (-1)^j / (1 + j/2)`: alternating, slowly decaying effects.
fn default_coefficients(p: usize) -> Vec<f64> {
    (0..p)
        .map(|j| {
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign / (1.0 + j as f64 / 2.0)
        })
        .collect()
}

fn fit(a: &FitArgs, threads: usize) -> CliResult<()> {
    let (data, _) = load_dataset(&a.data)?;
    let (doc, config, seed) = match a.family {
        Family::Cox => {
            let cfg = CoxConfig {
                max_iter: a.max_iter,
                tolerance: a.tolerance,
                ..CoxConfig::default()
            };
            let m = fit_cox(&data, &cfg)?;
            (
                ModelDocument::from(&m),
                json!({ "family": "cox", "cox": cfg, "data": a.data }),
                None,
            )
        }
        Family::Rsf => {
            let seed = a.seed.ok_or_else(|| usage("fit rsf needs --seed"))?;
            let cfg = RsfConfig {
                n_trees: a.n_trees,
                mtry: a.mtry,
                min_node_size: a.min_node_size,
                bootstrap: !a.no_bootstrap,
                split_candidates: a.split_candidates,
                seed,
            };
            let m = fit_rsf(&data, &cfg)?;
            (
                ModelDocument::from(&m),
                json!({ "family": "rsf", "rsf": cfg, "data": a.data }),
                Some(seed),
            )
        }
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_artifact(&a.out, "fit", &config, seed, threads, &doc)
}

fn evaluate_cmd(a: &EvaluateArgs, threads: usize) -> CliResult<()> {
    let (data, _) = load_dataset(&a.data)?;
    let model = load_model_document(&a.model)?.into_model()?;
    let times = a.times.resolve(&data)?;
    let report = evaluate(model.as_ref(), &data, &times, a.bins)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_artifact(&a.out, "evaluate", a, None, threads, &report)
}
