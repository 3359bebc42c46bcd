#![allow(dead_code)]

use survexplain::dataio::{generate_synthetic, SyntheticSpec};
use survexplain::models::{CoxModel, Predictor};
use survexplain::{
    CurveKind, FeatureSpec, FeatureTable, Result, StepCurve, SurvivalDataset, TimeGrid,
};

/// Generic-kind predictor backed by a closure `f(row, t)`.
pub struct Mock<F> {
    pub p: usize,
    pub f: F,
}

impl<F: Fn(&[f64], f64) -> f64 + Send + Sync> Predictor for Mock<F> {
    fn n_features(&self) -> usize {
        self.p
    }

    fn kind(&self) -> CurveKind {
        CurveKind::Generic
    }

    fn predict_row(&self, row: &[f64], times: &TimeGrid) -> Result<Vec<f64>> {
        Ok(times.points().iter().map(|&t| (self.f)(row, t)).collect())
    }
}

pub fn numeric_schema(p: usize) -> Vec<FeatureSpec> {
    (1..=p)
        .map(|j| FeatureSpec::numeric(format!("x{j}")))
        .collect()
}

pub fn table(p: usize, values: Vec<f64>) -> FeatureTable {
    FeatureTable::new(numeric_schema(p), values).unwrap()
}

/// Cox model with baseline `H0(t) = 0.1 t` on `t = 0.5, 1, ..., 20`.
pub fn cox(coefficients: &[f64]) -> CoxModel {
    let grid = TimeGrid::new((1..=40).map(|k| 0.5 * k as f64).collect()).unwrap();
    let values = grid.points().iter().map(|t| 0.1 * t).collect();
    let base = StepCurve::new(grid, values, CurveKind::Chf).unwrap();
    CoxModel::from_parts(
        &numeric_schema(coefficients.len()),
        coefficients.to_vec(),
        base,
    )
    .unwrap()
}

pub fn synthetic(n: usize, coefficients: &[f64], seed: u64) -> SurvivalDataset {
    generate_synthetic(&SyntheticSpec {
        n,
        coefficients: coefficients.to_vec(),
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

pub fn sup_abs(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Run `f` inside a dedicated pool with `threads` workers.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}
