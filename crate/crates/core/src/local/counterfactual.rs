//! Counterfactual search on mean survival time by particle swarm optimization.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, SurvivalDataset};
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::task_rng;
use crate::survival::{unique_event_times, CurveKind, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoConfig {
    pub particles: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub iterations: usize,
    /// Velocity clamp as a fraction of each box width.
    pub velocity_clamp: f64,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            particles: 50,
            inertia: 0.72,
            cognitive: 1.49,
            social: 1.49,
            iterations: 200,
            velocity_clamp: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualResult {
    pub counterfactual: Vec<f64>,
    pub expected_time_original: f64,
    pub expected_time_counterfactual: f64,
    pub distance: f64,
    pub loss: f64,
    /// Best loss after each iteration.
    pub loss_trace: Vec<f64>,
    pub converged: bool,
}

/// Area under the survival step curve on `[0, t_m]`.
pub fn restricted_mean(survival: &[f64], times: &TimeGrid) -> f64 {
    let t = times.points();
    let mut area = t[0];
    for s in 0..t.len() - 1 {
        area += survival[s] * (t[s + 1] - t[s]);
    }
    area
}

struct Objective<'a> {
    predictor: &'a dyn Predictor,
    x: &'a [f64],
    vars: Vec<usize>,
    times: TimeGrid,
    base_mean: f64,
    r_gap: f64,
    c: f64,
}

impl Objective<'_> {
    fn row(&self, pos: &[f64]) -> Vec<f64> {
        let mut row = self.x.to_vec();
        for (&j, &v) in self.vars.iter().zip(pos) {
            row[j] = v;
        }
        row
    }

    fn mean_time(&self, row: &[f64]) -> Result<f64> {
        Ok(restricted_mean(
            &self.predictor.predict_row(row, &self.times)?,
            &self.times,
        ))
    }

    fn loss(&self, pos: &[f64]) -> Result<f64> {
        let row = self.row(pos);
        let gain = self.mean_time(&row)? - self.base_mean;
        let dist = row
            .iter()
            .zip(self.x)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        Ok((self.r_gap - gain).max(0.0) + self.c * dist)
    }
}

/// Minimize `max(0, r_gap − (E(c) − E(x))) + C‖c − x‖₂` over the numeric
/// coordinates of `c`, inside the observed feature ranges. `E` is the
/// restricted mean survival time over the event-time grid of `data`.
/// Particle 0 starts at `x`; every particle has its own generator.
pub fn counterfactual_explain(
    predictor: &dyn Predictor,
    data: &SurvivalDataset,
    x: &[f64],
    r_gap: f64,
    c: f64,
    pso: &PsoConfig,
    seed: u64,
) -> Result<CounterfactualResult> {
    if predictor.kind() != CurveKind::Survival {
        return Err(Error::invalid("counterfactuals need survival predictions"));
    }
    if !(r_gap >= 0.0) || !(c >= 0.0) {
        return Err(Error::invalid("r_gap and C must be nonnegative"));
    }
    if pso.particles == 0 {
        return Err(Error::invalid("at least one particle is needed"));
    }
    let schema = data.schema();
    if x.len() != schema.len() {
        return Err(Error::invalid("row width does not match the schema"));
    }
    for (spec, &v) in schema.iter().zip(x) {
        spec.check_value(v)?;
    }
    let times = unique_event_times(data, false)?;
    let vars: Vec<usize> = (0..schema.len())
        .filter(|&j| matches!(schema[j].kind, FeatureKind::Numeric))
        .collect();
    let bounds: Vec<(f64, f64)> = vars
        .iter()
        .map(|&j| {
            let col = data.features().column(j);
            let lo = col.iter().copied().fold(x[j], f64::min);
            let hi = col.iter().copied().fold(x[j], f64::max);
            (lo, hi)
        })
        .collect();
    let base_mean = restricted_mean(&predictor.predict_row(x, &times)?, &times);
    let obj = Objective {
        predictor,
        x,
        vars,
        times,
        base_mean,
        r_gap,
        c,
    };
    let d = obj.vars.len();
    let start: Vec<f64> = obj.vars.iter().map(|&j| x[j]).collect();
    let start_loss = obj.loss(&start)?;
    let vmax: Vec<f64> = bounds
        .iter()
        .map(|(lo, hi)| pso.velocity_clamp * (hi - lo))
        .collect();

    let mut rngs: Vec<_> = (0..pso.particles)
        .map(|i| task_rng(seed, &[i as u64]))
        .collect();
    let mut pos: Vec<Vec<f64>> = Vec::with_capacity(pso.particles);
    let mut vel: Vec<Vec<f64>> = Vec::with_capacity(pso.particles);
    for (i, rng) in rngs.iter_mut().enumerate() {
        if i == 0 {
            pos.push(start.clone());
            vel.push(vec![0.0; d]);
        } else {
            pos.push(
                bounds
                    .iter()
                    .map(|(lo, hi)| rng.random_range(*lo..=*hi))
                    .collect(),
            );
            vel.push(
                vmax.iter()
                    .map(|v| {
                        if *v > 0.0 {
                            rng.random_range(-v..=*v)
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            );
        }
    }
    let mut losses: Vec<f64> = pos.par_iter().map(|p| obj.loss(p)).collect::<Result<_>>()?;
    let mut best_pos = pos.clone();
    let mut best_loss = losses.clone();
    let mut g = 0;
    for i in 1..pso.particles {
        if best_loss[i] < best_loss[g] {
            g = i;
        }
    }
    let mut trace = Vec::with_capacity(pso.iterations);
    if d > 0 {
        for _ in 0..pso.iterations {
            let gbest = best_pos[g].clone();
            for i in 0..pso.particles {
                let rng = &mut rngs[i];
                for a in 0..d {
                    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                    let v = pso.inertia * vel[i][a]
                        + pso.cognitive * r1 * (best_pos[i][a] - pos[i][a])
                        + pso.social * r2 * (gbest[a] - pos[i][a]);
                    vel[i][a] = v.clamp(-vmax[a], vmax[a]);
                    pos[i][a] = (pos[i][a] + vel[i][a]).clamp(bounds[a].0, bounds[a].1);
                }
            }
            losses = pos.par_iter().map(|p| obj.loss(p)).collect::<Result<_>>()?;
            for i in 0..pso.particles {
                if losses[i] < best_loss[i] {
                    best_loss[i] = losses[i];
                    best_pos[i] = pos[i].clone();
                }
                if best_loss[i] < best_loss[g] {
                    g = i;
                }
            }
            trace.push(best_loss[g]);
        }
    }
    let cf = obj.row(&best_pos[g]);
    let cf_mean = obj.mean_time(&cf)?;
    Ok(CounterfactualResult {
        distance: cf
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt(),
        counterfactual: cf,
        expected_time_original: base_mean,
        expected_time_counterfactual: cf_mean,
        loss: best_loss[g],
        loss_trace: trace,
        converged: best_loss[g] < start_loss || start_loss == 0.0,
    })
}
