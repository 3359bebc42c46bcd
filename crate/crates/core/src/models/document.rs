//! Self-describing JSON documents for fitted models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio::Encoding;
use crate::error::Result;
use crate::survival::{CurveKind, StepCurve, TimeGrid};

use super::{CoxFitReport, CoxModel, RsfConfig, RsfModel, SurvivalModel, TreeNode};

/// On-disk model format, tagged by `"type"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelDocument {
    Cox {
        encoding: Encoding,
        coefficients: Vec<f64>,
        baseline_grid: Vec<f64>,
        baseline_chf: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        fit_report: Option<CoxFitReport>,
    },
    Rsf {
        encoding: Encoding,
        config: RsfConfig,
        trees: Vec<Vec<TreeNode>>,
        baseline_grid: Vec<f64>,
        baseline_chf: Vec<f64>,
    },
}

impl From<&CoxModel> for ModelDocument {
    fn from(m: &CoxModel) -> Self {
        ModelDocument::Cox {
            encoding: m.encoding.clone(),
            coefficients: m.coefficients.clone(),
            baseline_grid: m.baseline_chf.grid().points().to_vec(),
            baseline_chf: m.baseline_chf.values().to_vec(),
            fit_report: m.fit_report.clone(),
        }
    }
}

impl From<&RsfModel> for ModelDocument {
    fn from(m: &RsfModel) -> Self {
        ModelDocument::Rsf {
            encoding: Encoding::new(&m.features, true),
            config: m.config.clone(),
            trees: m.trees.clone(),
            baseline_grid: m.baseline_chf.grid().points().to_vec(),
            baseline_chf: m.baseline_chf.values().to_vec(),
        }
    }
}

impl ModelDocument {
    pub fn into_model(self) -> Result<Box<dyn SurvivalModel>> {
        Ok(match self {
            ModelDocument::Cox {
                encoding,
                coefficients,
                baseline_grid,
                baseline_chf,
                fit_report,
            } => {
                let base =
                    StepCurve::new(TimeGrid::new(baseline_grid)?, baseline_chf, CurveKind::Chf)?;
                let mut m = CoxModel::from_parts(&encoding.features, coefficients, base)?;
                m.fit_report = fit_report;
                Box::new(m)
            }
            ModelDocument::Rsf {
                encoding,
                config,
                trees,
                baseline_grid,
                baseline_chf,
            } => Box::new(RsfModel {
                features: encoding.features,
                config,
                trees,
                baseline_chf: StepCurve::new(
                    TimeGrid::new(baseline_grid)?,
                    baseline_chf,
                    CurveKind::Chf,
                )?,
                oob: Vec::new(),
            }),
        })
    }
}

pub fn save_model(doc: &ModelDocument, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(doc)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Box<dyn SurvivalModel>> {
    let doc: ModelDocument = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    doc.into_model()
}
