//! Leave-one-covariate-out importance.

use rayon::prelude::*;

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::models::{ModelOutput, ModelSpec};
use crate::survival::TimeGrid;

use super::{
    contrast, significance_p_value, FeatureImportance, FiMethod, FiMode, ImportanceResult, Loss,
    LossEval,
};

fn fit_and_score(
    spec: &ModelSpec,
    train: &SurvivalDataset,
    test: &SurvivalDataset,
    loss: &dyn Loss,
    times: &TimeGrid,
) -> Result<LossEval> {
    let model = spec.fit(train)?;
    LossEval::compute(
        loss,
        &ModelOutput::survival(model.as_ref()),
        test.features(),
        test,
        times,
    )
}

/// Refit without each feature in turn and compare test losses with the full
/// model. A failed refit marks that feature as failed instead of aborting.
pub fn loco(
    spec: &ModelSpec,
    train: &SurvivalDataset,
    test: &SurvivalDataset,
    loss: &dyn Loss,
    mode: FiMode,
    times: &TimeGrid,
) -> Result<ImportanceResult> {
    let p = train.n_features();
    if p < 2 {
        return Err(Error::invalid(
            "leave-one-covariate-out needs at least two features",
        ));
    }
    if test.schema() != train.schema() {
        return Err(Error::invalid("train and test schemas differ"));
    }
    let base = fit_and_score(spec, train, test, loss, times)?;
    let features: Vec<FeatureImportance> = (0..p)
        .into_par_iter()
        .map(|j| {
            let name = train.schema()[j].name.clone();
            let reduced = train
                .drop_feature(j)
                .and_then(|tr| fit_and_score(spec, &tr, &test.drop_feature(j)?, loss, times));
            match reduced {
                Ok(e) => {
                    let differences: Vec<f64> = e
                        .per_row
                        .iter()
                        .zip(&base.per_row)
                        .map(|(a, b)| a - b)
                        .collect();
                    FeatureImportance {
                        feature: name,
                        values: e
                            .per_time
                            .iter()
                            .zip(&base.per_time)
                            .map(|(a, b)| contrast(*a, *b, mode))
                            .collect(),
                        aggregate: contrast(e.aggregate, base.aggregate, mode),
                        p_value: Some(significance_p_value(&differences)),
                        differences,
                        failed: None,
                    }
                }
                Err(err) => {
                    log::warn!("refit without `{name}` failed: {err}");
                    FeatureImportance {
                        feature: name,
                        values: vec![f64::NAN; times.len()],
                        aggregate: f64::NAN,
                        differences: Vec::new(),
                        p_value: None,
                        failed: Some(err.to_string()),
                    }
                }
            }
        })
        .collect();
    Ok(ImportanceResult {
        method: FiMethod::Loco,
        mode,
        repeats: 1,
        loss: loss.name().to_string(),
        times: times.clone(),
        baseline_loss: base.per_time,
        baseline_aggregate: base.aggregate,
        features,
    })
}
