//! Second-order Gaussian model-X knockoffs and conditional predictive impact.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::data::{FeatureTable, SurvivalDataset};
use crate::dataio::Encoding;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::task_rng;
use crate::survival::TimeGrid;

use super::{
    significance_p_value, summarize, FeatureImportance, FiConfig, FiMethod, ImportanceResult, Loss,
    LossEval,
};

/// Target smallest eigenvalue after regularizing the correlation matrix.
const MIN_EIGENVALUE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KnockoffMatrix {
    /// Full one-hot encoding the construction works on.
    pub encoding: Encoding,
    /// Row-major `n × q` knockoff design on the original (unstandardized) scale.
    pub encoded: Vec<f64>,
    /// Knockoff features decoded back to the schema (argmax per level block).
    pub features: FeatureTable,
    /// Equicorrelated `s`.
    pub s: f64,
    /// Ridge added to the correlation matrix.
    pub ridge: f64,
}

/// Gaussian knockoffs `X̃ = X(I − Σ⁻¹D) + ZC` on the standardized full
/// one-hot design, with `D = sI`, `s = min(1, 2 λ_min(Σ))` and
/// `CᵀC = 2D − DΣ⁻¹D`. Constant columns are copied unchanged.
pub fn sample_knockoffs(data: &FeatureTable, seed: u64) -> Result<KnockoffMatrix> {
    let encoding = Encoding::new(data.schema(), false);
    let x = encoding.encode_table(data)?;
    let n = data.n_rows();
    let q = encoding.width();
    if n < 2 {
        return Err(Error::invalid("knockoffs need at least two rows"));
    }
    let mut mean = vec![0.0; q];
    let mut sd = vec![0.0; q];
    for c in 0..q {
        mean[c] = (0..n).map(|i| x[i * q + c]).sum::<f64>() / n as f64;
        sd[c] = ((0..n)
            .map(|i| (x[i * q + c] - mean[c]).powi(2))
            .sum::<f64>()
            / (n - 1) as f64)
            .sqrt();
    }
    let active: Vec<usize> = (0..q).filter(|&c| sd[c] > 0.0).collect();
    let k = active.len();
    let mut out = x.clone();
    let (mut s, mut ridge) = (0.0, 0.0);
    if k > 0 {
        let z = DMatrix::from_fn(n, k, |i, a| {
            (x[i * q + active[a]] - mean[active[a]]) / sd[active[a]]
        });
        let mut sigma = (z.transpose() * &z) / (n - 1) as f64;
        let lambda_min = SymmetricEigen::new(sigma.clone()).eigenvalues.min();
        ridge = (MIN_EIGENVALUE - lambda_min).max(0.0);
        for a in 0..k {
            sigma[(a, a)] += ridge;
        }
        let lambda_min = SymmetricEigen::new(sigma.clone()).eigenvalues.min();
        s = (2.0 * lambda_min).min(1.0);
        let sigma_inv = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular("knockoff covariance is not positive definite".into()))?
            .inverse();
        let shrink = DMatrix::<f64>::identity(k, k) - &sigma_inv * s;
        let cov = DMatrix::<f64>::identity(k, k) * (2.0 * s) - &sigma_inv * (s * s);
        let eig = SymmetricEigen::new(cov);
        let root = DMatrix::from_fn(k, k, |a, b| {
            eig.eigenvalues[a].max(0.0).sqrt() * eig.eigenvectors[(b, a)]
        });
        let mut rng = task_rng(seed, &[]);
        let noise = DMatrix::from_fn(n, k, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let knock = &z * shrink + noise * root;
        for i in 0..n {
            for (a, &c) in active.iter().enumerate() {
                out[i * q + c] = mean[c] + sd[c] * knock[(i, a)];
            }
        }
    }
    let mut decoded = Vec::with_capacity(n * data.n_features());
    for row in out.chunks(q) {
        decoded.extend(encoding.decode_row(row)?);
    }
    Ok(KnockoffMatrix {
        features: FeatureTable::new(data.schema().to_vec(), decoded)?,
        encoding,
        encoded: out,
        s,
        ridge,
    })
}

/// Conditional predictive impact: each feature is replaced by its knockoff
/// column. One knockoff matrix is drawn per repeat, keyed by `(seed, r)`.
/// Per-row loss differences, averaged over repeats, feed the paired test.
pub fn cpi(
    predictor: &dyn Predictor,
    data: &SurvivalDataset,
    loss: &dyn Loss,
    config: &FiConfig,
    times: &TimeGrid,
) -> Result<ImportanceResult> {
    if config.repeats == 0 {
        return Err(Error::invalid("repeats must be positive"));
    }
    let base = LossEval::compute(loss, predictor, data.features(), data, times)?;
    let knockoffs: Vec<KnockoffMatrix> = (0..config.repeats)
        .into_par_iter()
        .map(|r| {
            sample_knockoffs(
                data.features(),
                crate::rng::derive_seed(config.seed, &[r as u64]),
            )
        })
        .collect::<Result<_>>()?;
    let p = data.n_features();
    let tasks: Vec<(usize, usize)> = (0..p)
        .flat_map(|j| (0..config.repeats).map(move |r| (j, r)))
        .collect();
    let evals: Vec<LossEval> = tasks
        .par_iter()
        .map(|&(j, r)| {
            let replaced = data
                .features()
                .with_column(j, &knockoffs[r].features.column(j))?;
            LossEval::compute(loss, predictor, &replaced, data, times)
        })
        .collect::<Result<_>>()?;
    let n = data.n_rows();
    let features: Vec<FeatureImportance> = evals
        .chunks(config.repeats)
        .enumerate()
        .map(|(j, runs)| {
            let diffs: Vec<f64> = (0..n)
                .map(|i| {
                    runs.iter()
                        .map(|e| e.per_row[i] - base.per_row[i])
                        .sum::<f64>()
                        / runs.len() as f64
                })
                .collect();
            let mut fi = summarize(
                data.schema()[j].name.clone(),
                runs,
                &base,
                config.mode,
                diffs,
            );
            fi.p_value = Some(significance_p_value(&fi.differences));
            fi
        })
        .collect();
    Ok(ImportanceResult {
        method: FiMethod::Cpi,
        mode: config.mode,
        repeats: config.repeats,
        loss: loss.name().to_string(),
        times: times.clone(),
        baseline_loss: base.per_time,
        baseline_aggregate: base.aggregate,
        features,
    })
}
