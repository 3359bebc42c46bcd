//! Synthetic right-censored data from a Cox model with a parametric baseline.

use nalgebra::DMatrix;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{FeatureSpec, FeatureTable, SurvivalDataset};
use crate::error::{Error, Result};
use crate::rng::task_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Baseline {
    /// `H0(t) = rate · t`
    Exponential { rate: f64 },
    /// `H0(t) = (t / scale)^shape`
    Weibull { shape: f64, scale: f64 },
}

impl Baseline {
    fn inverse_chf(&self, h: f64) -> f64 {
        match *self {
            Baseline::Exponential { rate } => h / rate,
            Baseline::Weibull { shape, scale } => scale * h.powf(1.0 / shape),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Baseline::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Baseline::Weibull { shape, scale } => {
                shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "baseline parameters must be positive and finite",
            ))
        }
    }
}

/// Product term `coefficient · x_a · x_b` in the linear predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub a: usize,
    pub b: usize,
    pub coefficient: f64,
}

/// Generator settings. The number of features is `coefficients.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n: usize,
    pub coefficients: Vec<f64>,
    pub baseline: Baseline,
    /// Target fraction of censored rows, hit within two percentage points.
    pub censoring_rate: f64,
    /// Optional `p × p` feature correlation matrix.
    pub correlation: Option<Vec<Vec<f64>>>,
    pub interactions: Vec<Interaction>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n: 500,
            coefficients: vec![0.5, -0.5],
            baseline: Baseline::Exponential { rate: 0.1 },
            censoring_rate: 0.3,
            correlation: None,
            interactions: Vec::new(),
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn p(&self) -> usize {
        self.coefficients.len()
    }
}

const RATE_TOLERANCE: f64 = 0.02;

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SurvivalDataset> {
    let p = spec.p();
    let n = spec.n;
    if n == 0 || p == 0 {
        return Err(Error::invalid(
            "synthetic data needs n >= 1 and at least one coefficient",
        ));
    }
    if !(0.0..1.0).contains(&spec.censoring_rate) {
        return Err(Error::invalid("censoring rate must lie in [0, 1)"));
    }
    spec.baseline.validate()?;
    if spec.interactions.iter().any(|t| t.a >= p || t.b >= p) {
        return Err(Error::invalid("interaction refers to a missing feature"));
    }
    let chol = match &spec.correlation {
        None => None,
        Some(rows) => {
            if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                return Err(Error::invalid("correlation matrix must be p × p"));
            }
            let m = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
            if (0..p).any(|i| (m[(i, i)] - 1.0).abs() > 1e-12)
                || (&m - m.transpose()).amax() > 1e-12
            {
                return Err(Error::invalid(
                    "correlation matrix must be symmetric with unit diagonal",
                ));
            }
            Some(
                m.cholesky()
                    .ok_or_else(|| Error::invalid("correlation matrix is not positive definite"))?
                    .l(),
            )
        }
    };

    let mut rng = task_rng(spec.seed, &[0]);
    let mut x = vec![0.0; n * p];
    for row in x.chunks_mut(p) {
        let z: Vec<f64> = (0..p).map(|_| StandardNormal.sample(&mut rng)).collect();
        match &chol {
            None => row.copy_from_slice(&z),
            Some(l) => {
                for i in 0..p {
                    row[i] = (0..=i).map(|k| l[(i, k)] * z[k]).sum();
                }
            }
        }
    }
    let event_time: Vec<f64> = x
        .chunks(p)
        .map(|row| {
            let mut eta: f64 = row.iter().zip(&spec.coefficients).map(|(a, b)| a * b).sum();
            for t in &spec.interactions {
                eta += t.coefficient * row[t.a] * row[t.b];
            }
            let e: f64 = Exp1.sample(&mut rng);
            spec.baseline.inverse_chf(e * (-eta).exp())
        })
        .collect();

    let mut crng = task_rng(spec.seed, &[1]);
    let censor_draw: Vec<f64> = (0..n).map(|_| Exp1.sample(&mut crng)).collect();
    let censored_fraction = |rate: f64| {
        event_time
            .iter()
            .zip(&censor_draw)
            .filter(|(t, e)| **e / rate < **t)
            .count() as f64
            / n as f64
    };

    let rate = if spec.censoring_rate == 0.0 {
        None
    } else {
        let (mut lo, mut hi) = (-30.0f64, 30.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if censored_fraction(mid.exp()) < spec.censoring_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let best = [lo.exp(), hi.exp()]
            .into_iter()
            .min_by(|a, b| {
                (censored_fraction(*a) - spec.censoring_rate)
                    .abs()
                    .total_cmp(&(censored_fraction(*b) - spec.censoring_rate).abs())
            })
            .expect("two candidates");
        if (censored_fraction(best) - spec.censoring_rate).abs() > RATE_TOLERANCE {
            return Err(Error::invalid(format!(
                "censoring rate {} is not attainable for this sample",
                spec.censoring_rate
            )));
        }
        Some(best)
    };

    let mut time = Vec::with_capacity(n);
    let mut event = Vec::with_capacity(n);
    for i in 0..n {
        let c = rate.map_or(f64::INFINITY, |r| censor_draw[i] / r);
        if c < event_time[i] {
            time.push(c);
            event.push(false);
        } else {
            time.push(event_time[i]);
            event.push(true);
        }
    }
    let schema = (1..=p)
        .map(|j| FeatureSpec::numeric(format!("x{j}")))
        .collect();
    SurvivalDataset::new(FeatureTable::new(schema, x)?, time, event)
}
