//! Grid-based feature effects: ICE, PDP, M-plots and accumulated local effects.
//!
//! Every surface is a tensor indexed by `(instance, grid point, time)` stored
//! row-major. Aggregated surfaces (PDP, M-plot, ALE) have a single instance,
//! and time-marginalized surfaces have a single time slot.

mod ale;
mod ice;

use std::io::Write;

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

pub use ale::{ale_curves, ale_t, category_coordinates, order_categories};
pub use ice::{ice_curves, m_plot, marginalize_time, pdp_curves, pdp_from_ice};

use crate::data::{FeatureSpec, FeatureTable};
use crate::error::{Error, Result};
use crate::rng::task_rng;
use crate::survival::{quantile_sorted, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Equidistant,
    Quantile,
    Sample,
    Levels,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectGrid {
    pub feature: usize,
    pub kind: GridKind,
    /// Grid values; level codes for categorical features.
    pub points: Vec<f64>,
}

impl EffectGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Grid of `g` values for one feature. `seed` is used by the sample kind only.
pub fn build_grid(
    data: &FeatureTable,
    feature: usize,
    kind: GridKind,
    g: usize,
    seed: u64,
) -> Result<EffectGrid> {
    let spec = feature_spec(data, feature)?;
    let column = data.column(feature);
    if spec.is_categorical() {
        let mut seen = vec![false; spec.levels().map_or(0, <[String]>::len)];
        for v in &column {
            seen[*v as usize] = true;
        }
        let points = seen
            .iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(l, _)| l as f64)
            .collect();
        return Ok(EffectGrid {
            feature,
            kind: GridKind::Levels,
            points,
        });
    }
    if g < 2 {
        return Err(Error::invalid("numeric grids need at least two points"));
    }
    let mut sorted = column;
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        log::warn!(
            "feature `{}` is constant; grid has a single point",
            spec.name
        );
        return Ok(EffectGrid {
            feature,
            kind,
            points: vec![lo],
        });
    }
    let mut points: Vec<f64> = match kind {
        GridKind::Equidistant => (0..g)
            .map(|k| {
                if k + 1 == g {
                    hi
                } else {
                    lo + (hi - lo) * k as f64 / (g - 1) as f64
                }
            })
            .collect(),
        GridKind::Quantile => (0..g)
            .map(|k| quantile_sorted(&sorted, k as f64 / (g - 1) as f64))
            .collect(),
        GridKind::Sample => {
            let mut unique = sorted.clone();
            unique.dedup();
            if unique.len() <= g {
                unique
            } else {
                let mut rng = task_rng(seed, &[feature as u64]);
                sample_indices(&mut rng, unique.len(), g)
                    .into_iter()
                    .map(|i| unique[i])
                    .collect()
            }
        }
        GridKind::Levels => return Err(Error::invalid("level grids are for categorical features")),
    };
    points.sort_by(f64::total_cmp);
    points.dedup();
    Ok(EffectGrid {
        feature,
        kind,
        points,
    })
}

/// Seeded subset of `k` row indices in ascending order (all rows if `k >= n`).
pub fn sample_rows(n: usize, k: usize, seed: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut idx = sample_indices(&mut task_rng(seed, &[]), n, k).into_vec();
    idx.sort_unstable();
    idx
}

pub(crate) fn feature_spec(data: &FeatureTable, feature: usize) -> Result<&FeatureSpec> {
    data.schema()
        .get(feature)
        .ok_or_else(|| Error::invalid(format!("feature index {feature} out of range")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EffectMethod {
    #[serde(rename = "ice")]
    Ice,
    #[serde(rename = "c-ice")]
    CenteredIce,
    #[serde(rename = "pdp")]
    Pdp,
    #[serde(rename = "c-pdp")]
    CenteredPdp,
    #[serde(rename = "mplot")]
    MPlot,
    #[serde(rename = "ale-uncentered")]
    AleUncentered,
    #[serde(rename = "ale-centered")]
    AleCentered,
}

impl EffectMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            EffectMethod::Ice => "ice",
            EffectMethod::CenteredIce => "c-ice",
            EffectMethod::Pdp => "pdp",
            EffectMethod::CenteredPdp => "c-pdp",
            EffectMethod::MPlot => "mplot",
            EffectMethod::AleUncentered => "ale-uncentered",
            EffectMethod::AleCentered => "ale-centered",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Marginalization {
    None,
    MeanTime,
    SumTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeAggregate {
    Mean,
    Sum,
}

/// Weights over the time grid when collapsing the time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeWeights {
    /// Each grid point counts once.
    UniqueTimes,
    /// Each grid point counts as often as it occurs among these observed
    /// times; every observed time must be a grid point.
    ObservedTimes(Vec<f64>),
}

impl TimeWeights {
    pub(crate) fn resolve(&self, times: &TimeGrid) -> Result<Vec<f64>> {
        match self {
            TimeWeights::UniqueTimes => Ok(vec![1.0; times.len()]),
            TimeWeights::ObservedTimes(obs) => {
                let mut w = vec![0.0; times.len()];
                for &t in obs {
                    match times.locate(t) {
                        Some(s) if times.points()[s] == t => w[s] += 1.0,
                        _ => {
                            return Err(Error::invalid(format!(
                                "observed time {t} is not on the time grid"
                            )))
                        }
                    }
                }
                Ok(w)
            }
        }
    }
}

pub(crate) fn aggregate(values: &[f64], weights: &[f64], mode: TimeAggregate) -> f64 {
    let sum: f64 = values.iter().zip(weights).map(|(v, w)| v * w).sum();
    match mode {
        TimeAggregate::Sum => sum,
        TimeAggregate::Mean => sum / weights.iter().sum::<f64>(),
    }
}

/// Feature effect tensor `values[i][k][s]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectSurface {
    pub feature: String,
    pub feature_spec: FeatureSpec,
    pub grid: EffectGrid,
    pub times: TimeGrid,
    /// Source row of each instance slice; empty for aggregated surfaces.
    pub instances: Vec<usize>,
    /// Missing cells (empty M-plot neighborhoods) are NaN.
    pub values: Vec<f64>,
    pub method: EffectMethod,
    pub reference: Option<f64>,
    pub marginalized: Marginalization,
}

impl EffectSurface {
    pub fn n_instances(&self) -> usize {
        self.instances.len().max(1)
    }

    /// Length of the time axis (1 once marginalized).
    pub fn n_time_slots(&self) -> usize {
        match self.marginalized {
            Marginalization::None => self.times.len(),
            _ => 1,
        }
    }

    pub fn value(&self, instance: usize, k: usize, s: usize) -> f64 {
        let g = self.grid.len();
        let m = self.n_time_slots();
        self.values[(instance * g + k) * m + s]
    }

    /// Curve over the grid for one instance and time slot.
    pub fn curve(&self, instance: usize, s: usize) -> Vec<f64> {
        (0..self.grid.len())
            .map(|k| self.value(instance, k, s))
            .collect()
    }

    /// Long-format CSV: `feature,instance,grid_value,time,value,method`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "feature",
            "instance",
            "grid_value",
            "time",
            "value",
            "method",
        ])?;
        let time_label = |s: usize| match self.marginalized {
            Marginalization::None => format!("{}", self.times.points()[s]),
            Marginalization::MeanTime => "mean-time".to_string(),
            Marginalization::SumTime => "sum-time".to_string(),
        };
        for i in 0..self.n_instances() {
            let inst = self
                .instances
                .get(i)
                .map(|r| r.to_string())
                .unwrap_or_default();
            for (k, &gv) in self.grid.points.iter().enumerate() {
                for s in 0..self.n_time_slots() {
                    let v = self.value(i, k, s);
                    w.write_record([
                        self.feature.as_str(),
                        &inst,
                        &self.feature_spec.display_value(gv),
                        &time_label(s),
                        &if v.is_nan() {
                            "NA".to_string()
                        } else {
                            format!("{v}")
                        },
                        self.method.as_str(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
