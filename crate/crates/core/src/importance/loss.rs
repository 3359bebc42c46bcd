//! Loss contract for loss-based feature importance.

use crate::data::{FeatureTable, SurvivalDataset};
use crate::error::{Error, Result};
use crate::metrics::{brier_pointwise, censoring_weights, integrate_normalized};
use crate::models::Predictor;
use crate::survival::{CurveKind, TimeGrid};

/// A loss made of per-row, per-time contributions: the loss at `t_s` is the
/// mean of column `s`. Columns the loss cannot evaluate are NaN.
pub trait Loss: Send + Sync {
    fn name(&self) -> &str;

    /// Prediction kind the loss expects.
    fn expects(&self) -> CurveKind;

    /// Row-major `n × m` contributions for predictions of the same shape.
    fn contributions(
        &self,
        data: &SurvivalDataset,
        predictions: &[f64],
        times: &TimeGrid,
    ) -> Result<Vec<f64>>;

    /// Scalar summary of a per-time curve; NaN entries are skipped.
    fn aggregate(&self, per_time: &[f64], times: &TimeGrid) -> f64 {
        let (t, v): (Vec<f64>, Vec<f64>) = times
            .points()
            .iter()
            .zip(per_time)
            .filter(|(_, v)| v.is_finite())
            .map(|(t, v)| (*t, *v))
            .unzip();
        match v.len() {
            0 => f64::NAN,
            1 => v[0],
            _ => integrate_normalized(&t, &v).unwrap_or(f64::NAN),
        }
    }
}

/// IPCW Brier score per time; integrated Brier score as the aggregate.
#[derive(Debug, Clone, Copy, Default)]
pub struct BrierLoss;

impl Loss for BrierLoss {
    fn name(&self) -> &str {
        "brier"
    }

    fn expects(&self) -> CurveKind {
        CurveKind::Survival
    }

    fn contributions(
        &self,
        data: &SurvivalDataset,
        predictions: &[f64],
        times: &TimeGrid,
    ) -> Result<Vec<f64>> {
        let g = censoring_weights(data)?;
        let (mut terms, dropped) =
            brier_pointwise(data.time(), data.event(), &g, predictions, times)?;
        if dropped > 0 {
            log::warn!("{dropped} Brier terms dropped where the censoring survival is 0");
        }
        let m = times.len();
        for (s, &t) in times.points().iter().enumerate() {
            let usable = data.time().iter().zip(data.event()).any(|(&ti, &ei)| {
                (ti <= t && ei && g.eval_left(ti) > 0.0) || (ti > t && g.eval(t) > 0.0)
            });
            if !usable {
                for i in 0..data.n_rows() {
                    terms[i * m + s] = f64::NAN;
                }
            }
        }
        Ok(terms)
    }
}

/// Loss of a predictor on a feature table paired with outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub per_time: Vec<f64>,
    pub aggregate: f64,
    /// Each row's contributions aggregated over time.
    pub per_row: Vec<f64>,
}

impl LossEval {
    pub fn compute(
        loss: &dyn Loss,
        predictor: &dyn Predictor,
        features: &FeatureTable,
        data: &SurvivalDataset,
        times: &TimeGrid,
    ) -> Result<Self> {
        if predictor.kind() != loss.expects() {
            return Err(Error::invalid(format!(
                "loss `{}` expects {:?} predictions, model gives {:?}",
                loss.name(),
                loss.expects(),
                predictor.kind()
            )));
        }
        let preds = predictor.predict_batch(features.values(), features.n_features(), times)?;
        let contrib = loss.contributions(data, &preds, times)?;
        Ok(Self::from_contributions(
            loss,
            &contrib,
            data.n_rows(),
            times,
        ))
    }

    pub fn from_contributions(
        loss: &dyn Loss,
        contrib: &[f64],
        n: usize,
        times: &TimeGrid,
    ) -> Self {
        let m = times.len();
        let per_time: Vec<f64> = (0..m)
            .map(|s| (0..n).map(|i| contrib[i * m + s]).sum::<f64>() / n as f64)
            .collect();
        let per_row = contrib
            .chunks(m)
            .map(|row| loss.aggregate(row, times))
            .collect();
        Self {
            aggregate: loss.aggregate(&per_time, times),
            per_time,
            per_row,
        }
    }
}
