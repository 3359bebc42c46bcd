//! Cox proportional hazards: Newton–Raphson on the Breslow partial
//! likelihood and the Breslow baseline cumulative hazard.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSpec, SurvivalDataset};
use crate::dataio::Encoding;
use crate::error::{Error, Result};
use crate::survival::{CurveKind, StepCurve, TimeGrid};

use super::SurvivalModel;

/// Coefficients beyond this magnitude are treated as diverging.
const DIVERGENCE_BOUND: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxConfig {
    /// Convergence threshold on the gradient sup-norm.
    pub tolerance: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for CoxConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            max_iter: 100,
            max_halvings: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFitReport {
    pub iterations: usize,
    pub gradient_norm: f64,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub encoding: Encoding,
    pub coefficients: Vec<f64>,
    /// Baseline cumulative hazard (linear predictor 0).
    pub baseline_chf: StepCurve,
    pub fit_report: Option<CoxFitReport>,
}

impl CoxModel {
    /// Assemble a model from known parts.
    pub fn from_parts(
        schema: &[FeatureSpec],
        coefficients: Vec<f64>,
        baseline_chf: StepCurve,
    ) -> Result<Self> {
        let encoding = Encoding::new(schema, true);
        if coefficients.len() != encoding.width() {
            return Err(Error::invalid(format!(
                "{} coefficients for encoded width {}",
                coefficients.len(),
                encoding.width()
            )));
        }
        if baseline_chf.kind() != CurveKind::Chf {
            return Err(Error::InvalidCurve(
                "baseline must be a cumulative hazard".into(),
            ));
        }
        Ok(Self {
            encoding,
            coefficients,
            baseline_chf,
            fit_report: None,
        })
    }

    /// `bᵀx` for a feature row.
    pub fn linear_predictor(&self, row: &[f64]) -> Result<f64> {
        let x = self.encoding.encode_row(row)?;
        Ok(dot(&x, &self.coefficients))
    }
}

impl SurvivalModel for CoxModel {
    fn schema(&self) -> &[FeatureSpec] {
        &self.encoding.features
    }

    fn predict_chf(&self, row: &[f64], grid: &TimeGrid) -> Result<StepCurve> {
        let risk = self.linear_predictor(row)?.exp();
        let values = grid
            .points()
            .iter()
            .map(|&t| self.baseline_chf.eval(t) * risk)
            .collect();
        StepCurve::new(grid.clone(), values, CurveKind::Chf)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Design matrix and outcome sorted for risk-set accumulation.
struct Design {
    /// Row-major `n × k`, column-centered.
    x: Vec<f64>,
    k: usize,
    means: Vec<f64>,
    time: Vec<f64>,
    event: Vec<bool>,
    /// Row indices by descending time.
    order: Vec<usize>,
}

impl Design {
    fn new(data: &SurvivalDataset, encoding: &Encoding) -> Result<Self> {
        let k = encoding.width();
        let n = data.n_rows();
        let mut x = encoding.encode_table(data.features())?;
        let mut means = vec![0.0; k];
        for row in x.chunks(k) {
            for (m, v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        for row in x.chunks_mut(k) {
            for (v, m) in row.iter_mut().zip(&means) {
                *v -= m;
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| data.time()[b].total_cmp(&data.time()[a]));
        Ok(Self {
            x,
            k,
            means,
            time: data.time().to_vec(),
            event: data.event().to_vec(),
            order,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.k..(i + 1) * self.k]
    }

    /// Log partial likelihood, gradient and negative Hessian (information).
    fn evaluate(&self, beta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        let k = self.k;
        let n = self.order.len();
        let eta: Vec<f64> = (0..n).map(|i| dot(self.row(i), beta)).collect();
        let shift = eta.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; k];
        let mut s2 = DMatrix::<f64>::zeros(k, k);
        let mut ll = 0.0;
        let mut grad = DVector::<f64>::zeros(k);
        let mut info = DMatrix::<f64>::zeros(k, k);
        let mut pos = 0;
        while pos < n {
            let t = self.time[self.order[pos]];
            let mut end = pos;
            while end < n && self.time[self.order[end]] == t {
                let i = self.order[end];
                let w = (eta[i] - shift).exp();
                let xi = self.row(i);
                s0 += w;
                for a in 0..k {
                    s1[a] += w * xi[a];
                    for b in 0..=a {
                        s2[(a, b)] += w * xi[a] * xi[b];
                    }
                }
                end += 1;
            }
            let n_events = (pos..end).filter(|&q| self.event[self.order[q]]).count();
            if n_events > 0 {
                let d = n_events as f64;
                let log_s0 = s0.ln() + shift;
                for q in pos..end {
                    let i = self.order[q];
                    if self.event[i] {
                        ll += eta[i] - log_s0;
                        for a in 0..k {
                            grad[a] += self.row(i)[a];
                        }
                    }
                }
                for a in 0..k {
                    let ma = s1[a] / s0;
                    grad[a] -= d * ma;
                    for b in 0..=a {
                        let v = d * (s2[(a, b)] / s0 - ma * s1[b] / s0);
                        info[(a, b)] += v;
                    }
                }
            }
            pos = end;
        }
        for a in 0..k {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        (ll, grad, info)
    }

    /// Breslow baseline at the distinct event times for the centered design.
    fn breslow(&self, beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.order.len();
        let mut times = Vec::new();
        let mut increments = Vec::new();
        let mut s0 = 0.0;
        let mut pos = 0;
        while pos < n {
            let t = self.time[self.order[pos]];
            let mut end = pos;
            while end < n && self.time[self.order[end]] == t {
                s0 += dot(self.row(self.order[end]), beta).exp();
                end += 1;
            }
            let d = (pos..end).filter(|&q| self.event[self.order[q]]).count();
            if d > 0 {
                times.push(t);
                increments.push(d as f64 / s0);
            }
            pos = end;
        }
        times.reverse();
        increments.reverse();
        let mut acc = 0.0;
        let chf = increments
            .iter()
            .map(|inc| {
                acc += inc;
                acc
            })
            .collect();
        Ok((times, chf))
    }
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Breslow log partial likelihood of `coefficients` (reference-coded design).
pub fn log_partial_likelihood(data: &SurvivalDataset, coefficients: &[f64]) -> Result<f64> {
    let encoding = Encoding::new(data.schema(), true);
    if coefficients.len() != encoding.width() {
        return Err(Error::invalid(
            "coefficient count does not match encoded width",
        ));
    }
    let design = Design::new(data, &encoding)?;
    // Centering shifts every linear predictor by the same constant, which
    // cancels in the partial likelihood.
    Ok(design.evaluate(coefficients).0)
}

/// Maximize the Breslow partial likelihood by Newton–Raphson with step halving.
pub fn fit_cox(data: &SurvivalDataset, config: &CoxConfig) -> Result<CoxModel> {
    let encoding = Encoding::new(data.schema(), true);
    let design = Design::new(data, &encoding)?;
    let k = design.k;
    let mut beta = vec![0.0; k];
    let (mut ll, mut grad, mut info) = design.evaluate(&beta);
    let mut iterations = 0;

    while sup_norm(&grad) > config.tolerance {
        if iterations >= config.max_iter {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: sup_norm(&grad),
                coefficients: beta,
            });
        }
        let chol = info.clone().cholesky().ok_or(Error::RankDeficient)?;
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=config.max_halvings {
            let cand: Vec<f64> = beta
                .iter()
                .zip(step.iter())
                .map(|(b, s)| b + scale * s)
                .collect();
            let eval = design.evaluate(&cand);
            if eval.0.is_finite() && eval.0 >= ll - 1e-12 * (1.0 + ll.abs()) {
                accepted = Some((cand, eval));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, (ll_new, grad_new, info_new))) = accepted else {
            return Err(Error::NonConvergence {
                iterations,
                gradient_norm: sup_norm(&grad),
                coefficients: beta,
            });
        };
        beta = cand;
        ll = ll_new;
        grad = grad_new;
        info = info_new;
        iterations += 1;
        if let Some(column) = beta.iter().position(|b| b.abs() > DIVERGENCE_BOUND) {
            return Err(Error::MonotoneLikelihood { column });
        }
    }
    if iterations == 0 && info.clone().cholesky().is_none() {
        return Err(Error::RankDeficient);
    }

    let (times, chf_centered) = design.breslow(&beta)?;
    let offset = (-dot(&design.means, &beta)).exp();
    let baseline = StepCurve::new(
        TimeGrid::new(times)?,
        chf_centered.iter().map(|h| h * offset).collect(),
        CurveKind::Chf,
    )?;
    Ok(CoxModel {
        encoding,
        coefficients: beta,
        baseline_chf: baseline,
        fit_report: Some(CoxFitReport {
            iterations,
            gradient_norm: sup_norm(&grad),
            log_likelihood: ll,
        }),
    })
}
