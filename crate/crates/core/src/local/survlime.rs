//! Local Cox surrogates fit to a black box's cumulative hazard.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, SurvivalDataset};
use crate::dataio::Encoding;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::task_rng;
use crate::survival::{nelson_aalen_from, unique_event_times, CurveKind, StepCurve};

/// Ridge added to singular normal equations.
pub const SURVLIME_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurvLimeConfig {
    /// Neighborhood size including the explained point.
    pub g: usize,
    /// Kernel radius on standardized coordinates.
    pub radius: f64,
    /// Perturbation sd of numeric features, as a multiple of the feature sd.
    pub numeric_scale: f64,
    /// Probability of resampling a categorical coordinate.
    pub categorical_prob: f64,
    pub baseline: SurvLimeBaseline,
    /// Iteration cap for the Breslow baseline fixed point.
    pub max_baseline_iter: usize,
    pub seed: u64,
}

/// Baseline cumulative hazard of the surrogate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurvLimeBaseline {
    /// Nelson–Aalen estimate on the data, ignoring covariates.
    NelsonAalen,
    /// Breslow estimate at the surrogate's own coefficients, iterated to a
    /// fixed point from the Nelson–Aalen start.
    Breslow,
}

impl Default for SurvLimeConfig {
    fn default() -> Self {
        Self {
            g: 100,
            radius: 0.5,
            numeric_scale: 0.2,
            categorical_prob: 0.2,
            baseline: SurvLimeBaseline::Breslow,
            max_baseline_iter: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    /// Generated rows; the explained point is last.
    pub points: Vec<Vec<f64>>,
    /// Standardized encoded coordinates of each point.
    pub coordinates: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvLimeResult {
    /// Encoded column names (`feature` or `feature=level`).
    pub names: Vec<String>,
    /// Surrogate coefficients on standardized coordinates.
    pub coefficients: Vec<f64>,
    /// The same coefficients on the raw encoded scale.
    pub coefficients_raw: Vec<f64>,
    /// `|b_j · x_j|` on the raw encoded scale.
    pub local_importance: Vec<f64>,
    /// Surrogate baseline (standardized coordinates at 0).
    pub baseline_curve: StepCurve,
    pub baseline_iterations: usize,
    pub surrogate_curve: StepCurve,
    pub blackbox_curve: StepCurve,
    /// Time-weighted L2 distance between the log cumulative hazards at x.
    pub fidelity: f64,
    pub neighborhood: Neighborhood,
    /// Encoding mean and sd used for standardization.
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// `(point, time)` rows dropped because the log hazard is undefined.
    pub dropped_rows: usize,
    pub ridge_applied: bool,
}

/// Stacked weighted least-squares rows of the surrogate objective.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvLimeSystem {
    /// Row-major design, one row per kept `(point, time)` pair.
    pub design: Vec<Vec<f64>>,
    pub response: Vec<f64>,
    pub weights: Vec<f64>,
    pub dropped: usize,
}

impl SurvLimeSystem {
    /// `Σ weight · (response − bᵀdesign)²`.
    pub fn objective(&self, b: &[f64]) -> f64 {
        self.design
            .iter()
            .zip(&self.response)
            .zip(&self.weights)
            .map(|((z, y), w)| {
                let fit: f64 = z.iter().zip(b).map(|(a, c)| a * c).sum();
                w * (y - fit).powi(2)
            })
            .sum()
    }
}

/// Epanechnikov-type weight `max(0, 1 − sqrt(d / r))`.
pub fn kernel_weight(distance: f64, radius: f64) -> f64 {
    (1.0 - (distance / radius).sqrt()).max(0.0)
}

/// Rows of the surrogate objective for a neighborhood with black-box
/// cumulative hazards `chf` (row-major `points × times`).
pub fn survlime_system(
    coordinates: &[Vec<f64>],
    kernel: &[f64],
    chf: &[f64],
    baseline: &StepCurve,
) -> SurvLimeSystem {
    let times = baseline.grid().points();
    let m = times.len();
    let mut sys = SurvLimeSystem {
        design: Vec::new(),
        response: Vec::new(),
        weights: Vec::new(),
        dropped: 0,
    };
    for (k, z) in coordinates.iter().enumerate() {
        for s in 0..m {
            let h = chf[k * m + s];
            let ln_h = h.ln();
            if !(h > 0.0) || ln_h == 0.0 || !ln_h.is_finite() {
                sys.dropped += 1;
                continue;
            }
            let width = if s + 1 < m {
                times[s + 1] - times[s]
            } else {
                0.0
            };
            let v = h / ln_h;
            sys.design.push(z.clone());
            sys.response.push(ln_h - baseline.values()[s].ln());
            sys.weights.push(kernel[k] * v * v * width);
        }
    }
    sys
}

/// Closed-form minimizer of the system; the flag reports whether the ridge
/// was needed. Columns listed in `inactive` are fixed at 0.
fn solve(sys: &SurvLimeSystem, q: usize, inactive: &[bool]) -> (Vec<f64>, bool) {
    let active: Vec<usize> = (0..q).filter(|&c| !inactive[c]).collect();
    let k = active.len();
    let mut b = vec![0.0; q];
    if k == 0 {
        return (b, false);
    }
    let mut a = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for ((z, y), w) in sys.design.iter().zip(&sys.response).zip(&sys.weights) {
        for (i, &ci) in active.iter().enumerate() {
            rhs[i] += w * z[ci] * y;
            for (j, &cj) in active.iter().enumerate() {
                a[(i, j)] += w * z[ci] * z[cj];
            }
        }
    }
    let (sol, ridge) = match a.clone().cholesky() {
        Some(ch) if ch.l().diagonal().min().powi(2) > 1e-12 * a.diagonal().max() => {
            (ch.solve(&rhs), false)
        }
        _ => {
            let reg = a + DMatrix::identity(k, k) * SURVLIME_RIDGE;
            let sol = match reg.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => reg
                    .svd(true, true)
                    .solve(&rhs, 1e-14)
                    .unwrap_or_else(|_| DVector::zeros(k)),
            };
            (sol, true)
        }
    };
    for (i, &c) in active.iter().enumerate() {
        b[c] = sol[i];
    }
    (b, ridge)
}

/// Breslow baseline `Σ_{t_i ≤ t} d_i / Σ_{j ∈ R(t_i)} exp(bᵀz_j)` on the
/// event-time grid; at `b = 0` this is the Nelson–Aalen estimate.
pub fn breslow_baseline(
    time: &[f64],
    event: &[bool],
    coordinates: &[Vec<f64>],
    b: &[f64],
) -> Result<StepCurve> {
    let na = nelson_aalen_from(time, event)?;
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&i, &j| time[j].total_cmp(&time[i]));
    let risk: Vec<f64> = coordinates
        .iter()
        .map(|z| z.iter().zip(b).map(|(a, c)| a * c).sum::<f64>().exp())
        .collect();
    let grid = na.grid().points();
    let mut denom = vec![0.0; grid.len()];
    let mut deaths = vec![0.0; grid.len()];
    let mut acc = 0.0;
    let mut pos = 0;
    for s in (0..grid.len()).rev() {
        while pos < order.len() && time[order[pos]] >= grid[s] {
            let i = order[pos];
            acc += risk[i];
            if event[i] && time[i] == grid[s] {
                deaths[s] += 1.0;
            }
            pos += 1;
        }
        denom[s] = acc;
    }
    let mut h = 0.0;
    let values = (0..grid.len())
        .map(|s| {
            h += deaths[s] / denom[s];
            h
        })
        .collect();
    StepCurve::new(na.grid().clone(), values, CurveKind::Chf)
}

/// Explain `predictor` (cumulative hazard scale) at row `x` with a local Cox
/// surrogate fit to the black box's log cumulative hazard.
pub fn survlime_explain(
    predictor: &dyn Predictor,
    data: &SurvivalDataset,
    x: &[f64],
    config: &SurvLimeConfig,
) -> Result<SurvLimeResult> {
    if predictor.kind() != CurveKind::Chf {
        return Err(Error::invalid(
            "SurvLIME needs cumulative hazard predictions",
        ));
    }
    if config.g < 2 {
        return Err(Error::invalid("neighborhood size must be at least 2"));
    }
    if !(config.radius > 0.0) {
        return Err(Error::invalid("kernel radius must be positive"));
    }
    let schema = data.schema();
    if x.len() != schema.len() {
        return Err(Error::invalid("row width does not match the schema"));
    }
    for (spec, &v) in schema.iter().zip(x) {
        spec.check_value(v)?;
    }
    let times = unique_event_times(data, false)?;
    let encoding = Encoding::new(schema, true);
    let q = encoding.width();
    let n = data.n_rows();
    let design = encoding.encode_table(data.features())?;
    let mut center = vec![0.0; q];
    let mut scale = vec![0.0; q];
    for c in 0..q {
        center[c] = (0..n).map(|i| design[i * q + c]).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|i| (design[i * q + c] - center[c]).powi(2))
            .sum::<f64>()
            / (n.max(2) - 1) as f64;
        scale[c] = var.sqrt();
    }
    let columns: Vec<Vec<f64>> = (0..schema.len())
        .map(|j| data.features().column(j))
        .collect();
    let feature_sd: Vec<f64> = columns
        .iter()
        .map(|col| {
            let mean = col.iter().sum::<f64>() / n as f64;
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64).sqrt()
        })
        .collect();

    let mut points: Vec<Vec<f64>> = (0..config.g - 1)
        .map(|k| {
            let mut rng = task_rng(config.seed, &[k as u64]);
            schema
                .iter()
                .enumerate()
                .map(|(j, spec)| match spec.kind {
                    FeatureKind::Numeric => {
                        let sd = config.numeric_scale * feature_sd[j];
                        if sd > 0.0 {
                            x[j] + Normal::new(0.0, sd).expect("positive sd").sample(&mut rng)
                        } else {
                            x[j]
                        }
                    }
                    FeatureKind::Categorical { .. } => {
                        if rng.random::<f64>() < config.categorical_prob {
                            columns[j][rng.random_range(0..n)]
                        } else {
                            x[j]
                        }
                    }
                })
                .collect()
        })
        .collect();
    points.push(x.to_vec());

    let standardize = |row: &[f64]| -> Result<Vec<f64>> {
        let e = encoding.encode_row(row)?;
        Ok((0..q)
            .map(|c| {
                if scale[c] > 0.0 {
                    (e[c] - center[c]) / scale[c]
                } else {
                    0.0
                }
            })
            .collect())
    };
    let coordinates: Vec<Vec<f64>> = points
        .iter()
        .map(|r| standardize(r))
        .collect::<Result<_>>()?;
    let zx = coordinates.last().expect("explained point").clone();
    let weights: Vec<f64> = coordinates
        .iter()
        .map(|z| {
            let d = z
                .iter()
                .zip(&zx)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            kernel_weight(d, config.radius)
        })
        .collect();

    let flat: Vec<f64> = points.concat();
    let chf = predictor.predict_batch(&flat, schema.len(), &times)?;
    let inactive: Vec<bool> = scale.iter().map(|s| !(*s > 0.0)).collect();
    let train: Vec<Vec<f64>> = design
        .chunks(q)
        .map(|e| {
            (0..q)
                .map(|c| {
                    if scale[c] > 0.0 {
                        (e[c] - center[c]) / scale[c]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let active: Vec<usize> = (0..q).filter(|&c| !inactive[c]).collect();
    let refit = |b: &[f64]| -> Result<(StepCurve, SurvLimeSystem, Vec<f64>, bool)> {
        let baseline = breslow_baseline(data.time(), data.event(), &train, b)?;
        let sys = survlime_system(&coordinates, &weights, &chf, &baseline);
        let (next, ridge) = solve(&sys, q, &inactive);
        Ok((baseline, sys, next, ridge))
    };
    let residual = |b: &[f64]| -> Option<Vec<f64>> {
        let (_, _, next, _) = refit(b).ok()?;
        let r: Vec<f64> = active.iter().map(|&c| next[c] - b[c]).collect();
        r.iter().all(|v| v.is_finite()).then_some(r)
    };
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let (mut baseline, mut sys, mut b, mut ridge_applied) = refit(&vec![0.0; q])?;
    let mut iterations = 0;
    if config.baseline == SurvLimeBaseline::Breslow && !active.is_empty() {
        // Newton steps on the fixed-point residual F(b) − b.
        loop {
            let (bl, sy, next, ridge) = refit(&b)?;
            let r: Vec<f64> = active.iter().map(|&c| next[c] - b[c]).collect();
            let norm = sup(&r);
            if norm <= 1e-10 * (1.0 + sup(&b)) || iterations >= config.max_baseline_iter {
                if norm > 1e-10 * (1.0 + sup(&b)) {
                    log::warn!(
                        "surrogate baseline did not reach a fixed point in {iterations} iterations"
                    );
                }
                (baseline, sys, b, ridge_applied) = (bl, sy, next, ridge);
                break;
            }
            iterations += 1;
            let k = active.len();
            let mut jac = DMatrix::<f64>::zeros(k, k);
            for (a, &c) in active.iter().enumerate() {
                let h = 1e-6 * (1.0 + b[c].abs());
                let mut bp = b.clone();
                bp[c] += h;
                let rp = residual(&bp)
                    .ok_or_else(|| Error::Singular("surrogate baseline diverged".into()))?;
                for i in 0..k {
                    jac[(i, a)] = (rp[i] - r[i]) / h;
                }
            }
            let step = jac
                .lu()
                .solve(&DVector::from_vec(r.iter().map(|v| -v).collect()))
                .ok_or_else(|| Error::Singular("surrogate baseline Jacobian is singular".into()))?;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let mut cand = b.clone();
                for (a, &c) in active.iter().enumerate() {
                    cand[c] += lambda * step[a];
                }
                if residual(&cand).is_some_and(|rc| sup(&rc) < norm) {
                    b = cand;
                    accepted = true;
                    break;
                }
                lambda *= 0.5;
            }
            if !accepted {
                log::warn!("surrogate baseline search stalled after {iterations} iterations");
                (baseline, sys, b, ridge_applied) = (bl, sy, next, ridge);
                break;
            }
        }
    }
    if sys.dropped > 0 {
        log::warn!(
            "{} neighborhood rows dropped where the log cumulative hazard is undefined",
            sys.dropped
        );
    }
    let coefficients_raw: Vec<f64> = (0..q)
        .map(|c| if scale[c] > 0.0 { b[c] / scale[c] } else { 0.0 })
        .collect();
    let ex = encoding.encode_row(x)?;
    let local_importance = coefficients_raw
        .iter()
        .zip(&ex)
        .map(|(c, v)| (c * v).abs())
        .collect();

    let m = times.len();
    let lp: f64 = b.iter().zip(&zx).map(|(a, c)| a * c).sum();
    let surrogate: Vec<f64> = baseline.values().iter().map(|h| h * lp.exp()).collect();
    let own = &chf[(config.g - 1) * m..];
    let mut fidelity = 0.0;
    for s in 0..m.saturating_sub(1) {
        if own[s] > 0.0 {
            fidelity += (own[s].ln() - surrogate[s].ln()).powi(2)
                * (times.points()[s + 1] - times.points()[s]);
        }
    }
    Ok(SurvLimeResult {
        names: encoding.names(),
        coefficients: b,
        coefficients_raw,
        local_importance,
        baseline_curve: baseline.clone(),
        baseline_iterations: iterations,
        surrogate_curve: StepCurve::new(times.clone(), surrogate, CurveKind::Chf)?,
        blackbox_curve: StepCurve::new(times, own.to_vec(), CurveKind::Chf)?,
        fidelity: fidelity.sqrt(),
        neighborhood: Neighborhood {
            points,
            coordinates,
            weights,
        },
        center,
        scale,
        dropped_rows: sys.dropped,
        ridge_applied,
    })
}
