use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use survexplain::dataio::{load_csv, DatasetSchema, ImputationReport};
use survexplain::models::ModelDocument;
use survexplain::SurvivalDataset;

use crate::args::DataArgs;
use crate::CliResult;

/// Self-describing result file: the resolved configuration travels with the
/// numbers.
#[derive(Serialize)]
struct Artifact<'a, C: Serialize, R: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seed: Option<u64>,
    threads: usize,
    config: &'a C,
    result: &'a R,
}

pub fn write_artifact<C: Serialize, R: Serialize>(
    path: &Path,
    command: &str,
    config: &C,
    seed: Option<u64>,
    threads: usize,
    result: &R,
) -> CliResult<()> {
    write_json(
        path,
        &Artifact {
            tool: "survexplain",
            version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            threads,
            config,
            result,
        },
    )
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(survexplain::Error::from)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn load_dataset(args: &DataArgs) -> CliResult<(SurvivalDataset, ImputationReport)> {
    let schema = DatasetSchema::from_file(&args.schema)?;
    let (data, report) = load_csv(&args.data, &schema, args.impute)?;
    if report.total() > 0 {
        log::warn!("imputed {} missing cells", report.total());
    }
    Ok((data, report))
}

/// Model written by `fit` (the document sits under `result`) or a bare
/// model document.
pub fn load_model_document(path: &Path) -> CliResult<ModelDocument> {
    let text = std::fs::read_to_string(path)?;
    let mut value: Value = serde_json::from_str(&text).map_err(survexplain::Error::from)?;
    if let Some(inner) = value.get_mut("result") {
        value = inner.take();
    }
    Ok(serde_json::from_value(value).map_err(survexplain::Error::from)?)
}
