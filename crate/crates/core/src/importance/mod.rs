//! Loss-based global feature importance: permutation (PFI), conditional
//! predictive impact with knockoffs (CPI) and leave-one-covariate-out (LOCO).
//!
//! Differences are `L(perturbed) − L(original)` and quotients
//! `L(perturbed) / L(original)`, so larger values mean more important.

mod knockoffs;
mod loco;
mod loss;
mod significance;

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use knockoffs::{cpi, sample_knockoffs, KnockoffMatrix};
pub use loco::loco;
pub use loss::{BrierLoss, Loss, LossEval};
pub use significance::{fi_significance, one_sided_t_test, sign_test, significance_p_value};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::task_rng;
use crate::survival::TimeGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiMethod {
    Pfi,
    Cpi,
    Loco,
}

impl FiMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            FiMethod::Pfi => "pfi",
            FiMethod::Cpi => "cpi",
            FiMethod::Loco => "loco",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiMode {
    Difference,
    Quotient,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FiConfig {
    pub repeats: usize,
    pub mode: FiMode,
    pub seed: u64,
}

impl Default for FiConfig {
    fn default() -> Self {
        Self {
            repeats: 10,
            mode: FiMode::Difference,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    /// Importance at each evaluation time (NaN where the loss is undefined).
    pub values: Vec<f64>,
    pub aggregate: f64,
    /// Aggregate loss differences feeding the significance test: one per
    /// repeat (PFI) or one per row (CPI, LOCO).
    pub differences: Vec<f64>,
    pub p_value: Option<f64>,
    /// Set when the feature could not be evaluated (LOCO refit failure).
    pub failed: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceResult {
    pub method: FiMethod,
    pub mode: FiMode,
    pub repeats: usize,
    pub loss: String,
    pub times: TimeGrid,
    pub baseline_loss: Vec<f64>,
    pub baseline_aggregate: f64,
    pub features: Vec<FeatureImportance>,
}

impl ImportanceResult {
    /// Long-format CSV `method,feature,t,value,mode,p_value`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["method", "feature", "t", "value", "mode", "p_value"])?;
        let mode = match self.mode {
            FiMode::Difference => "difference",
            FiMode::Quotient => "quotient",
        };
        let num = |v: f64| {
            if v.is_finite() {
                format!("{v}")
            } else {
                "NA".into()
            }
        };
        for f in &self.features {
            let p = f.p_value.map_or("NA".to_string(), |p| format!("{p}"));
            for (t, v) in self.times.points().iter().zip(&f.values) {
                w.write_record([
                    self.method.as_str(),
                    &f.feature,
                    &format!("{t}"),
                    &num(*v),
                    mode,
                    "NA",
                ])?;
            }
            w.write_record([
                self.method.as_str(),
                &f.feature,
                "aggregate",
                &num(f.aggregate),
                mode,
                &p,
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Combine perturbed losses with the original loss in the chosen mode.
pub(crate) fn contrast(perturbed: f64, original: f64, mode: FiMode) -> f64 {
    match mode {
        FiMode::Difference => perturbed - original,
        FiMode::Quotient => perturbed / original,
    }
}

/// Mean over repeats of the per-time and aggregate contrasts.
pub(crate) fn summarize(
    feature: String,
    runs: &[LossEval],
    base: &LossEval,
    mode: FiMode,
    differences: Vec<f64>,
) -> FeatureImportance {
    let r = runs.len() as f64;
    let m = base.per_time.len();
    let values = (0..m)
        .map(|s| {
            runs.iter()
                .map(|e| contrast(e.per_time[s], base.per_time[s], mode))
                .sum::<f64>()
                / r
        })
        .collect();
    let aggregate = runs
        .iter()
        .map(|e| contrast(e.aggregate, base.aggregate, mode))
        .sum::<f64>()
        / r;
    FeatureImportance {
        feature,
        values,
        aggregate,
        differences,
        p_value: None,
        failed: None,
    }
}

/// Permutation feature importance. The permutation for feature `j` and
/// repeat `r` comes from a generator keyed by `(seed, j, r)`.
pub fn pfi(
    predictor: &dyn Predictor,
    data: &SurvivalDataset,
    loss: &dyn Loss,
    config: &FiConfig,
    times: &TimeGrid,
) -> Result<ImportanceResult> {
    if config.repeats == 0 {
        return Err(Error::invalid("repeats must be positive"));
    }
    let base = LossEval::compute(loss, predictor, data.features(), data, times)?;
    let p = data.n_features();
    let tasks: Vec<(usize, usize)> = (0..p)
        .flat_map(|j| (0..config.repeats).map(move |r| (j, r)))
        .collect();
    let evals: Vec<LossEval> = tasks
        .par_iter()
        .map(|&(j, r)| {
            let mut col = data.features().column(j);
            col.shuffle(&mut task_rng(config.seed, &[j as u64, r as u64]));
            let permuted = data.features().with_column(j, &col)?;
            LossEval::compute(loss, predictor, &permuted, data, times)
        })
        .collect::<Result<_>>()?;
    let features = evals
        .chunks(config.repeats)
        .enumerate()
        .map(|(j, runs)| {
            let diffs = runs.iter().map(|e| e.aggregate - base.aggregate).collect();
            let mut fi = summarize(
                data.schema()[j].name.clone(),
                runs,
                &base,
                config.mode,
                diffs,
            );
            fi.p_value = Some(significance_p_value(&fi.differences));
            fi
        })
        .collect();
    Ok(ImportanceResult {
        method: FiMethod::Pfi,
        mode: config.mode,
        repeats: config.repeats,
        loss: loss.name().to_string(),
        times: times.clone(),
        baseline_loss: base.per_time,
        baseline_aggregate: base.aggregate,
        features,
    })
}
