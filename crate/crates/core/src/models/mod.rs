//! Fit targets and the black-box prediction interface the explainers use.

mod cox;
mod document;
mod rsf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cox::{fit_cox, log_partial_likelihood, CoxConfig, CoxFitReport, CoxModel};
pub use document::{load_model, save_model, ModelDocument};
pub use rsf::{fit_rsf, RsfConfig, RsfModel, Split, TreeNode};

use crate::data::{FeatureSpec, FeatureTable, SurvivalDataset};
use crate::error::{Error, Result};
use crate::survival::{chf_to_survival, CurveKind, StepCurve, TimeGrid, SURVIVAL_FLOOR};

/// Black-box survival model: anything that maps a feature row to a
/// cumulative hazard curve.
pub trait SurvivalModel: Send + Sync {
    fn schema(&self) -> &[FeatureSpec];

    fn predict_chf(&self, row: &[f64], grid: &TimeGrid) -> Result<StepCurve>;

    fn predict_survival(&self, row: &[f64], grid: &TimeGrid) -> Result<StepCurve> {
        chf_to_survival(&self.predict_chf(row, grid)?)
    }

    /// Predictions for every row of `features`; row `i` equals the per-row
    /// prediction exactly.
    fn predict_surface(
        &self,
        features: &FeatureTable,
        grid: &TimeGrid,
        kind: CurveKind,
    ) -> Result<PredictionSurface> {
        let scale = match kind {
            CurveKind::Survival => OutputScale::Survival,
            CurveKind::Chf => OutputScale::Chf,
            CurveKind::Generic => {
                return Err(Error::invalid("prediction surfaces are survival or chf"))
            }
        };
        let out = ModelOutput::new(self, scale);
        let values = out.predict_batch(features.values(), features.n_features(), grid)?;
        Ok(PredictionSurface {
            grid: grid.clone(),
            n_rows: features.n_rows(),
            values,
            kind,
        })
    }
}

/// `n × m` model outputs over instances and time points (row-major).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSurface {
    pub grid: TimeGrid,
    pub n_rows: usize,
    pub values: Vec<f64>,
    pub kind: CurveKind,
}

impl PredictionSurface {
    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.grid.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn curve(&self, i: usize) -> Result<StepCurve> {
        StepCurve::new(self.grid.clone(), self.row(i).to_vec(), self.kind)
    }
}

/// Scale on which an explainer reads a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputScale {
    Survival,
    Chf,
    LogChf,
}

/// A function `f(t | x)` evaluated on a time grid. This is what every
/// explainer consumes; survival models are adapted through [`ModelOutput`].
pub trait Predictor: Send + Sync {
    fn n_features(&self) -> usize;

    /// Kind of the values produced (survival, chf or generic).
    fn kind(&self) -> CurveKind;

    /// `f(t_s | row)` for every grid point.
    fn predict_row(&self, row: &[f64], times: &TimeGrid) -> Result<Vec<f64>>;

    /// Row-major `n × m` predictions for the row-major `rows` of width `width`.
    /// Rows are evaluated in parallel; output order follows input order.
    fn predict_batch(&self, rows: &[f64], width: usize, times: &TimeGrid) -> Result<Vec<f64>> {
        if width == 0 || rows.len() % width != 0 {
            return Err(Error::invalid("row buffer does not match width"));
        }
        let per_row: Vec<Vec<f64>> = rows
            .par_chunks(width)
            .enumerate()
            .map(|(i, row)| {
                self.predict_row(row, times).map_err(|e| Error::Prediction {
                    instance: i,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_>>()?;
        Ok(per_row.concat())
    }
}

/// Adapts a [`SurvivalModel`] to a [`Predictor`] on a chosen scale.
#[derive(Clone, Copy)]
pub struct ModelOutput<'a, M: SurvivalModel + ?Sized> {
    model: &'a M,
    scale: OutputScale,
}

impl<'a, M: SurvivalModel + ?Sized> ModelOutput<'a, M> {
    pub fn new(model: &'a M, scale: OutputScale) -> Self {
        Self { model, scale }
    }

    pub fn survival(model: &'a M) -> Self {
        Self::new(model, OutputScale::Survival)
    }

    pub fn model(&self) -> &'a M {
        self.model
    }
}

impl<M: SurvivalModel + ?Sized> Predictor for ModelOutput<'_, M> {
    fn n_features(&self) -> usize {
        self.model.schema().len()
    }

    fn kind(&self) -> CurveKind {
        match self.scale {
            OutputScale::Survival => CurveKind::Survival,
            OutputScale::Chf => CurveKind::Chf,
            OutputScale::LogChf => CurveKind::Generic,
        }
    }

    fn predict_row(&self, row: &[f64], times: &TimeGrid) -> Result<Vec<f64>> {
        Ok(match self.scale {
            OutputScale::Survival => self.model.predict_survival(row, times)?.values().to_vec(),
            OutputScale::Chf => self.model.predict_chf(row, times)?.values().to_vec(),
            OutputScale::LogChf => self
                .model
                .predict_chf(row, times)?
                .values()
                .iter()
                .map(|h| h.max(SURVIVAL_FLOOR).ln())
                .collect(),
        })
    }
}

/// Predictions of `predictor` on every row of a dataset's features.
pub fn predict_table(
    predictor: &dyn Predictor,
    table: &FeatureTable,
    times: &TimeGrid,
) -> Result<Vec<f64>> {
    predictor.predict_batch(table.values(), table.n_features(), times)
}

/// How to refit a model from data (used by leave-one-covariate-out).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelSpec {
    Cox(CoxConfig),
    Rsf(RsfConfig),
}

impl ModelSpec {
    pub fn fit(&self, data: &SurvivalDataset) -> Result<Box<dyn SurvivalModel>> {
        Ok(match self {
            ModelSpec::Cox(cfg) => Box::new(fit_cox(data, cfg)?),
            ModelSpec::Rsf(cfg) => Box::new(fit_rsf(data, cfg)?),
        })
    }
}
