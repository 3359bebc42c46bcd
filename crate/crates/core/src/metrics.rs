//! Time-dependent and scalar performance measures.
//!
//! The Brier score uses inverse probability of censoring weights (Graf et
//! al.): an event at `t_i <= t` is weighted by `1 / G(t_i-)`, a row still at
//! risk after `t` by `1 / G(t)`, and rows censored before `t` contribute 0.
//! Scores are averaged over all `n` rows.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};
use crate::models::{predict_table, ModelOutput, SurvivalModel};
use crate::survival::{
    kaplan_meier_from, quantile_sorted, unique_event_times, unique_times_from, CurveKind,
    StepCurve, TimeGrid,
};

/// Kaplan–Meier estimate of the censoring survival function `G`.
pub fn censoring_weights(data: &SurvivalDataset) -> Result<StepCurve> {
    censoring_curve(data.time(), data.event())
}

pub fn censoring_curve(time: &[f64], event: &[bool]) -> Result<StepCurve> {
    let censored: Vec<bool> = event.iter().map(|e| !e).collect();
    if !censored.iter().any(|&c| c) {
        return StepCurve::new(TimeGrid::new(vec![0.0])?, vec![1.0], CurveKind::Survival);
    }
    kaplan_meier_from(time, &censored)
}

/// Per-row Brier contributions, `n × m` row-major, plus the number of
/// terms dropped because `G` vanished.
pub fn brier_pointwise(
    time: &[f64],
    event: &[bool],
    censoring: &StepCurve,
    survival: &[f64],
    grid: &TimeGrid,
) -> Result<(Vec<f64>, usize)> {
    let n = time.len();
    let m = grid.len();
    if survival.len() != n * m {
        return Err(Error::invalid(
            "prediction matrix does not match rows × times",
        ));
    }
    let mut out = vec![0.0; n * m];
    let mut dropped = 0;
    for (s, &t) in grid.points().iter().enumerate() {
        let g_t = censoring.eval(t);
        for i in 0..n {
            let pred = survival[i * m + s];
            let term = if time[i] <= t && event[i] {
                let g = censoring.eval_left(time[i]);
                if g > 0.0 {
                    pred * pred / g
                } else {
                    dropped += 1;
                    0.0
                }
            } else if time[i] > t {
                if g_t > 0.0 {
                    (1.0 - pred) * (1.0 - pred) / g_t
                } else {
                    dropped += 1;
                    0.0
                }
            } else {
                0.0
            };
            out[i * m + s] = term;
        }
    }
    Ok((out, dropped))
}

/// Brier score curve on a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrierCurve {
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub dropped: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl BrierCurve {
    pub fn to_curve(&self) -> Result<StepCurve> {
        StepCurve::new(
            TimeGrid::new(self.t.clone())?,
            self.value.clone(),
            CurveKind::Generic,
        )
    }
}

/// Brier scores from a precomputed survival matrix.
pub fn brier_curve_from(
    data: &SurvivalDataset,
    survival: &[f64],
    grid: &TimeGrid,
) -> Result<BrierCurve> {
    let censoring = censoring_weights(data)?;
    let (terms, dropped) = brier_pointwise(data.time(), data.event(), &censoring, survival, grid)?;
    let n = data.n_rows();
    let m = grid.len();
    let mut value = Vec::with_capacity(m);
    for (s, &t) in grid.points().iter().enumerate() {
        let usable = (0..n).any(|i| {
            (data.time()[i] <= t && data.event()[i] && censoring.eval_left(data.time()[i]) > 0.0)
                || (data.time()[i] > t && censoring.eval(t) > 0.0)
        });
        if !usable {
            return Err(Error::invalid(format!(
                "no usable rows for the Brier score at t = {t}"
            )));
        }
        let sum: f64 = (0..n).map(|i| terms[i * m + s]).sum();
        value.push(sum / n as f64);
    }
    if dropped > 0 {
        log::warn!("{dropped} Brier terms dropped where the censoring survival is 0");
    }
    Ok(BrierCurve {
        t: grid.points().to_vec(),
        value,
        dropped,
    })
}

fn survival_matrix(
    model: &dyn SurvivalModel,
    data: &SurvivalDataset,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    predict_table(&ModelOutput::survival(model), data.features(), grid)
}

pub fn brier_curve(
    model: &dyn SurvivalModel,
    data: &SurvivalDataset,
    grid: &TimeGrid,
) -> Result<BrierCurve> {
    brier_curve_from(data, &survival_matrix(model, data, grid)?, grid)
}

/// IPCW Brier score at a single time.
pub fn brier_at_t(model: &dyn SurvivalModel, data: &SurvivalDataset, t: f64) -> Result<f64> {
    if !(t >= 0.0) {
        return Err(Error::invalid("evaluation time must be nonnegative"));
    }
    let grid = TimeGrid::new(vec![t])?;
    Ok(brier_curve(model, data, &grid)?.value[0])
}

/// Trapezoid integral of `values` over `times`, divided by the time span.
pub fn integrate_normalized(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() < 2 || times[times.len() - 1] <= times[0] {
        return Err(Error::invalid(
            "integration needs a grid with positive span",
        ));
    }
    let area: f64 = times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (v[0] + v[1]) * (t[1] - t[0]))
        .sum();
    Ok(area / (times[times.len() - 1] - times[0]))
}

pub fn integrated_brier(
    model: &dyn SurvivalModel,
    data: &SurvivalDataset,
    grid: &TimeGrid,
) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::invalid(
            "integrated Brier score needs at least two time points",
        ));
    }
    let curve = brier_curve(model, data, grid)?;
    integrate_normalized(&curve.t, &curve.value)
}

/// Harrell's C: among pairs with `t_i < t_k` and `δ_i = 1`, the fraction in
/// which row `i` has the higher risk (ties count one half).
pub fn harrell_concordance(time: &[f64], event: &[bool], risk: &[f64]) -> Result<f64> {
    let n = time.len();
    if event.len() != n || risk.len() != n {
        return Err(Error::invalid("time, event and risk lengths differ"));
    }
    let mut concordant = 0.0;
    let mut comparable = 0u64;
    for i in 0..n {
        if !event[i] {
            continue;
        }
        for k in 0..n {
            if time[i] < time[k] {
                comparable += 1;
                if risk[i] > risk[k] {
                    concordant += 1.0;
                } else if risk[i] == risk[k] {
                    concordant += 0.5;
                }
            }
        }
    }
    if comparable == 0 {
        return Err(Error::invalid("no comparable pairs"));
    }
    Ok(concordant / comparable as f64)
}

/// Risk score: negative sum of predicted survival over the event-time grid.
pub fn risk_scores(
    model: &dyn SurvivalModel,
    data: &SurvivalDataset,
    grid: &TimeGrid,
) -> Result<Vec<f64>> {
    let m = grid.len();
    let surv = survival_matrix(model, data, grid)?;
    Ok(surv.chunks(m).map(|row| -row.iter().sum::<f64>()).collect())
}

pub fn concordance_index(model: &dyn SurvivalModel, data: &SurvivalDataset) -> Result<f64> {
    let grid = unique_event_times(data, false)?;
    let risk = risk_scores(model, data, &grid)?;
    harrell_concordance(data.time(), data.event(), &risk)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DCalibration {
    pub stat: f64,
    pub bins: Vec<f64>,
}

/// D-calibration from each row's predicted survival at its own observed time.
///
/// Event rows add one count to the bin holding `u = S(t_i | x_i)`. A censored
/// row spreads its unit mass uniformly over `[0, u]`.
pub fn d_calibration_from(u: &[f64], event: &[bool], bins: usize) -> Result<DCalibration> {
    if bins < 2 {
        return Err(Error::invalid("D-calibration needs at least two bins"));
    }
    if u.is_empty() {
        return Err(Error::invalid("D-calibration needs at least one row"));
    }
    if u.len() != event.len() {
        return Err(Error::invalid("probability and event lengths differ"));
    }
    let b = bins as f64;
    let bin_of = |p: f64| ((p * b).floor() as usize).min(bins - 1);
    let mut counts = vec![0.0; bins];
    for (&p, &e) in u.iter().zip(event) {
        let p = p.clamp(0.0, 1.0);
        if e || p <= 0.0 {
            counts[bin_of(p)] += 1.0;
            continue;
        }
        let k = bin_of(p);
        let lower = k as f64 / b;
        counts[k] += (p - lower) / p;
        for c in counts.iter_mut().take(k) {
            *c += 1.0 / (b * p);
        }
    }
    let expected = u.len() as f64 / b;
    let stat = counts
        .iter()
        .map(|c| (c - expected).powi(2) / expected)
        .sum();
    Ok(DCalibration { stat, bins: counts })
}

pub fn d_calibration(
    model: &dyn SurvivalModel,
    data: &SurvivalDataset,
    bins: usize,
) -> Result<DCalibration> {
    let grid = unique_times_from(data.time(), data.event(), true)?;
    let surv = survival_matrix(model, data, &grid)?;
    let m = grid.len();
    let u: Vec<f64> = data
        .time()
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let k = grid.locate(t).expect("observed time lies on the grid");
            surv[i * m + k]
        })
        .collect();
    d_calibration_from(&u, data.event(), bins)
}

/// Unique event times clipped to `[first event, 95th percentile of observed times]`.
pub fn default_eval_grid(data: &SurvivalDataset) -> Result<TimeGrid> {
    let grid = unique_event_times(data, false)?;
    let mut obs = data.time().to_vec();
    obs.sort_by(f64::total_cmp);
    let hi = quantile_sorted(&obs, 0.95);
    grid.clip(grid.first(), hi)
        .or_else(|_| TimeGrid::new(vec![grid.first()]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub brier: BrierCurve,
    pub ibs: f64,
    pub cindex: f64,
    pub dcal: DCalibration,
}

pub fn evaluate(
    model: &dyn SurvivalModel,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    bins: usize,
) -> Result<EvalReport> {
    let brier = brier_curve(model, data, grid)?;
    let ibs = if grid.len() >= 2 {
        integrate_normalized(&brier.t, &brier.value)?
    } else {
        brier.value[0]
    };
    Ok(EvalReport {
        ibs,
        cindex: concordance_index(model, data)?,
        dcal: d_calibration(model, data, bins)?,
        brier,
    })
}
