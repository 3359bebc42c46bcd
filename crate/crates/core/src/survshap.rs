//! Time-dependent Shapley attributions of survival curves.
//!
//! The value of a coalition `A` at time `t` is the interventional mean
//! `v_t(A) = mean_b f(t | x*_A, b_{−A})` over background rows `b`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureTable, SurvivalDataset};
use crate::effects::sample_rows;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::rng::task_rng;
use crate::survival::TimeGrid;

/// Largest feature count for exact permutation enumeration.
pub const EXACT_MAX_FEATURES: usize = 6;
/// Largest feature count for enumerating every coalition in the kernel estimator.
pub const ALL_COALITIONS_MAX_FEATURES: usize = 16;
pub const DEFAULT_PERMUTATIONS: usize = 200;
pub const DEFAULT_BACKGROUND: usize = 100;
/// Ridge added to a singular kernel regression.
pub const KERNEL_RIDGE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleCount {
    /// Every permutation (sampling) or every coalition (kernel).
    All,
    #[serde(untagged)]
    Count(usize),
}

impl SampleCount {
    /// Exact enumeration for small `p`, otherwise the default sample size.
    pub fn default_for(p: usize) -> Self {
        if p <= EXACT_MAX_FEATURES {
            SampleCount::All
        } else {
            SampleCount::Count(DEFAULT_PERMUTATIONS)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapEstimator {
    Exact,
    Sampling,
    Kernel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvShapResult {
    pub instance: Option<usize>,
    /// The explained row.
    pub x: Vec<f64>,
    pub features: Vec<String>,
    pub times: TimeGrid,
    /// `phi[j][s]`.
    pub phi: Vec<Vec<f64>>,
    /// Mean prediction over the background at each time.
    pub baseline: Vec<f64>,
    pub prediction: Vec<f64>,
    pub estimator: ShapEstimator,
    /// Permutations or coalitions used.
    pub n_samples: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub ridge_applied: bool,
}

impl SurvShapResult {
    /// `max_s |Σ_j φ_j(t_s) + baseline(t_s) − prediction(t_s)|`.
    pub fn efficiency_gap(&self) -> f64 {
        (0..self.times.len())
            .map(|s| {
                let total: f64 = self.phi.iter().map(|p| p[s]).sum();
                (total + self.baseline[s] - self.prediction[s]).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// `min(n, 100)` seeded background rows.
pub fn default_background(data: &SurvivalDataset, seed: u64) -> FeatureTable {
    data.features()
        .select_rows(&sample_rows(data.n_rows(), DEFAULT_BACKGROUND, seed))
}

struct Game<'a> {
    predictor: &'a dyn Predictor,
    background: &'a FeatureTable,
    x: &'a [f64],
    times: &'a TimeGrid,
}

impl Game<'_> {
    fn p(&self) -> usize {
        self.x.len()
    }

    /// `v(mask)` at every time.
    fn value(&self, mask: u64) -> Result<Vec<f64>> {
        let p = self.p();
        let m = self.times.len();
        let mut rows = Vec::with_capacity(self.background.n_rows() * p);
        for b in self.background.rows() {
            rows.extend((0..p).map(|j| if mask >> j & 1 == 1 { self.x[j] } else { b[j] }));
        }
        let preds = self.predictor.predict_batch(&rows, p, self.times)?;
        let nb = self.background.n_rows() as f64;
        Ok((0..m)
            .map(|s| preds.iter().skip(s).step_by(m).sum::<f64>() / nb)
            .collect())
    }

    fn values(&self, masks: &BTreeSet<u64>) -> Result<BTreeMap<u64, Vec<f64>>> {
        let list: Vec<u64> = masks.iter().copied().collect();
        let vals: Vec<Vec<f64>> = list
            .par_iter()
            .map(|&mk| self.value(mk))
            .collect::<Result<_>>()?;
        Ok(list.into_iter().zip(vals).collect())
    }
}

fn check_inputs(
    predictor: &dyn Predictor,
    background: &FeatureTable,
    x: &[f64],
    times: &TimeGrid,
) -> Result<()> {
    if background.n_rows() == 0 {
        return Err(Error::invalid("background is empty"));
    }
    if x.len() != background.n_features() || predictor.n_features() != x.len() {
        return Err(Error::invalid("row width does not match the background"));
    }
    if x.len() > 63 {
        return Err(Error::invalid("at most 63 features are supported"));
    }
    if times.is_empty() {
        return Err(Error::invalid("empty time grid"));
    }
    for (spec, &v) in background.schema().iter().zip(x) {
        spec.check_value(v)?;
    }
    Ok(())
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn full_mask(p: usize) -> u64 {
    (1u64 << p) - 1
}

fn assemble(
    game: &Game,
    phi: Vec<Vec<f64>>,
    values: &BTreeMap<u64, Vec<f64>>,
    estimator: ShapEstimator,
    n_samples: usize,
    ridge_applied: bool,
) -> SurvShapResult {
    let p = game.p();
    SurvShapResult {
        instance: None,
        x: game.x.to_vec(),
        features: game
            .background
            .schema()
            .iter()
            .map(|s| s.name.clone())
            .collect(),
        times: game.times.clone(),
        phi,
        baseline: values[&0].clone(),
        prediction: values[&full_mask(p)].clone(),
        estimator,
        n_samples,
        ridge_applied,
    }
}

/// Shapley values by permutation sampling. `SampleCount::All` enumerates
/// every coalition with Shapley weights, which equals averaging over all
/// `p!` permutations (allowed for `p ≤ 6`).
pub fn survshap_sampling(
    predictor: &dyn Predictor,
    background: &FeatureTable,
    x: &[f64],
    times: &TimeGrid,
    n_perms: SampleCount,
    seed: u64,
) -> Result<SurvShapResult> {
    check_inputs(predictor, background, x, times)?;
    let game = Game {
        predictor,
        background,
        x,
        times,
    };
    let p = x.len();
    let m = times.len();
    match n_perms {
        SampleCount::All => {
            if p > EXACT_MAX_FEATURES {
                return Err(Error::invalid(format!(
                    "exact enumeration supports at most {EXACT_MAX_FEATURES} features"
                )));
            }
            let masks: BTreeSet<u64> = (0..=full_mask(p)).collect();
            let values = game.values(&masks)?;
            let fact = |k: usize| (1..=k).fold(1.0, |a, i| a * i as f64);
            let mut phi = vec![vec![0.0; m]; p];
            for (j, row) in phi.iter_mut().enumerate() {
                for &mk in &masks {
                    if mk >> j & 1 == 1 {
                        continue;
                    }
                    let size = mk.count_ones() as usize;
                    let w = fact(size) * fact(p - size - 1) / fact(p);
                    let (with, without) = (&values[&(mk | 1 << j)], &values[&mk]);
                    for s in 0..m {
                        row[s] += w * (with[s] - without[s]);
                    }
                }
            }
            let n = (1..=p).product();
            Ok(assemble(
                &game,
                phi,
                &values,
                ShapEstimator::Exact,
                n,
                false,
            ))
        }
        SampleCount::Count(0) => Err(Error::invalid("n_perms must be at least 1")),
        SampleCount::Count(k) => {
            let perms: Vec<Vec<usize>> = (0..k)
                .map(|r| {
                    let mut perm: Vec<usize> = (0..p).collect();
                    perm.shuffle(&mut task_rng(seed, &[r as u64]));
                    perm
                })
                .collect();
            let mut masks = BTreeSet::from([0, full_mask(p)]);
            for perm in &perms {
                let mut mk = 0u64;
                for &j in perm {
                    mk |= 1 << j;
                    masks.insert(mk);
                }
            }
            let values = game.values(&masks)?;
            let mut phi = vec![vec![0.0; m]; p];
            for perm in &perms {
                let mut mk = 0u64;
                for &j in perm {
                    let prev = &values[&mk];
                    mk |= 1 << j;
                    let next = &values[&mk];
                    for s in 0..m {
                        phi[j][s] += (next[s] - prev[s]) / k as f64;
                    }
                }
            }
            Ok(assemble(
                &game,
                phi,
                &values,
                ShapEstimator::Sampling,
                k,
                false,
            ))
        }
    }
}

/// Shapley kernel weight of a coalition of size `s` among `p` features.
pub fn shapley_kernel_weight(p: usize, s: usize) -> f64 {
    (p - 1) as f64 / (binomial(p, s) * s as f64 * (p - s) as f64)
}

/// Kernel SHAP: weighted least squares over coalitions with the null and
/// grand coalitions pinned by the efficiency constraint. Sampled coalitions
/// are drawn from the kernel distribution and weighted equally.
pub fn survshap_kernel(
    predictor: &dyn Predictor,
    background: &FeatureTable,
    x: &[f64],
    times: &TimeGrid,
    n_coalitions: SampleCount,
    seed: u64,
) -> Result<SurvShapResult> {
    check_inputs(predictor, background, x, times)?;
    let game = Game {
        predictor,
        background,
        x,
        times,
    };
    let p = x.len();
    let m = times.len();
    let full = full_mask(p);
    let coalitions: Vec<(u64, f64)> = match n_coalitions {
        SampleCount::All => {
            if p > ALL_COALITIONS_MAX_FEATURES {
                return Err(Error::invalid(format!(
                    "enumerating coalitions supports at most {ALL_COALITIONS_MAX_FEATURES} features"
                )));
            }
            (1..full)
                .map(|mk| (mk, shapley_kernel_weight(p, mk.count_ones() as usize)))
                .collect()
        }
        SampleCount::Count(0) => return Err(Error::invalid("n_coalitions must be at least 1")),
        SampleCount::Count(k) => {
            if p < 2 {
                Vec::new()
            } else {
                let size_w: Vec<f64> = (1..p)
                    .map(|s| (p - 1) as f64 / (s * (p - s)) as f64)
                    .collect();
                let total: f64 = size_w.iter().sum();
                (0..k)
                    .map(|r| {
                        let mut rng = task_rng(seed, &[r as u64]);
                        let mut u = rng.random::<f64>() * total;
                        let mut size = p - 1;
                        for (i, w) in size_w.iter().enumerate() {
                            if u < *w {
                                size = i + 1;
                                break;
                            }
                            u -= w;
                        }
                        let mut idx: Vec<usize> = (0..p).collect();
                        idx.shuffle(&mut rng);
                        (idx[..size].iter().fold(0u64, |a, &j| a | 1 << j), 1.0)
                    })
                    .collect()
            }
        }
    };
    let mut masks: BTreeSet<u64> = coalitions.iter().map(|c| c.0).collect();
    masks.insert(0);
    masks.insert(full);
    let values = game.values(&masks)?;
    let (v0, v1) = (&values[&0], &values[&full]);
    let total: Vec<f64> = (0..m).map(|s| v1[s] - v0[s]).collect();
    let mut phi = vec![vec![0.0; m]; p];
    let mut ridge_applied = false;
    if p == 1 {
        phi[0] = total;
    } else {
        // Eliminate the last feature: φ_p = total − Σ_{j<p} φ_j.
        let k = p - 1;
        let mut a = DMatrix::<f64>::zeros(k, k);
        let mut rhs = DMatrix::<f64>::zeros(k, m);
        for &(mk, w) in &coalitions {
            let zp = (mk >> k & 1) as f64;
            let z: Vec<f64> = (0..k).map(|j| (mk >> j & 1) as f64 - zp).collect();
            let v = &values[&mk];
            for i in 0..k {
                for j in 0..k {
                    a[(i, j)] += w * z[i] * z[j];
                }
                for s in 0..m {
                    rhs[(i, s)] += w * z[i] * (v[s] - v0[s] - zp * total[s]);
                }
            }
        }
        let sol = match a.clone().cholesky() {
            Some(ch) if ch.l().diagonal().min().powi(2) > 1e-13 * a.diagonal().max() => {
                ch.solve(&rhs)
            }
            _ => {
                ridge_applied = true;
                let reg = a + DMatrix::identity(k, k) * KERNEL_RIDGE;
                reg.lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::Singular("kernel regression is singular".into()))?
            }
        };
        for s in 0..m {
            let mut rest = total[s];
            for j in 0..k {
                phi[j][s] = sol[(j, s)];
                rest -= sol[(j, s)];
            }
            phi[k][s] = rest;
        }
    }
    let n = coalitions.len();
    Ok(assemble(
        &game,
        phi,
        &values,
        ShapEstimator::Kernel,
        n,
        ridge_applied,
    ))
}

/// Time-aggregated value of one feature for one instance, with its raw value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeeswarmPoint {
    pub instance: usize,
    pub feature: String,
    /// Mean of `φ_j(t)` over the time grid.
    pub value: f64,
    pub feature_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvShapGlobal {
    pub features: Vec<String>,
    pub times: TimeGrid,
    /// `mean_abs[j][s]`: mean of `|φ_j(t_s)|` over instances.
    pub mean_abs: Vec<Vec<f64>>,
    /// Feature indices ordered by decreasing time-averaged `mean_abs`.
    pub order: Vec<usize>,
    pub beeswarm: Vec<BeeswarmPoint>,
}

impl SurvShapGlobal {
    /// CSV `feature,t,mean_abs_phi`.
    pub fn write_curves_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "t", "mean_abs_phi"])?;
        for (name, row) in self.features.iter().zip(&self.mean_abs) {
            for (t, v) in self.times.points().iter().zip(row) {
                w.write_record([name.as_str(), &format!("{t}"), &format!("{v}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// CSV `instance,feature,phi_mean,feature_value`.
    pub fn write_beeswarm_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["instance", "feature", "phi_mean", "feature_value"])?;
        for b in &self.beeswarm {
            w.write_record([
                format!("{}", b.instance),
                b.feature.clone(),
                format!("{}", b.value),
                format!("{}", b.feature_value),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Mean absolute attributions over instances and the per-instance
/// time-averaged attributions. Instances without an id are numbered by position.
pub fn aggregate_global(results: &[SurvShapResult]) -> Result<SurvShapGlobal> {
    let first = results
        .first()
        .ok_or_else(|| Error::invalid("no results to aggregate"))?;
    let p = first.phi.len();
    let m = first.times.len();
    for r in results {
        if r.times != first.times {
            return Err(Error::invalid("results use different time grids"));
        }
        if r.features != first.features {
            return Err(Error::invalid("results use different features"));
        }
    }
    let n = results.len() as f64;
    let mean_abs: Vec<Vec<f64>> = (0..p)
        .map(|j| {
            (0..m)
                .map(|s| results.iter().map(|r| r.phi[j][s].abs()).sum::<f64>() / n)
                .collect()
        })
        .collect();
    let score: Vec<f64> = mean_abs
        .iter()
        .map(|row| row.iter().sum::<f64>() / m as f64)
        .collect();
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then(a.cmp(&b)));
    let beeswarm = results
        .iter()
        .enumerate()
        .flat_map(|(i, r)| {
            (0..p).map(move |j| BeeswarmPoint {
                instance: r.instance.unwrap_or(i),
                feature: r.features[j].clone(),
                value: r.phi[j].iter().sum::<f64>() / m as f64,
                feature_value: r.x[j],
            })
        })
        .collect();
    Ok(SurvShapGlobal {
        features: first.features.clone(),
        times: first.times.clone(),
        mean_abs,
        order,
        beeswarm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;
    use crate::survival::CurveKind;

    struct Linear(Vec<f64>);

    impl Predictor for Linear {
        fn n_features(&self) -> usize {
            self.0.len()
        }
        fn kind(&self) -> CurveKind {
            CurveKind::Generic
        }
        fn predict_row(&self, row: &[f64], times: &TimeGrid) -> Result<Vec<f64>> {
            let lp: f64 = row.iter().zip(&self.0).map(|(a, b)| a * b).sum();
            Ok(times.points().iter().map(|t| lp * t).collect())
        }
    }

    fn table(rows: &[[f64; 3]]) -> FeatureTable {
        FeatureTable::new(
            (0..3)
                .map(|j| FeatureSpec::numeric(format!("x{j}")))
                .collect(),
            rows.concat(),
        )
        .unwrap()
    }

    #[test]
    fn linear_model_closed_form() {
        // φ_j(t) = β_j t (x_j − mean_b x_j) for a linear model
        let bg = table(&[[0.0, 1.0, 2.0], [2.0, 3.0, 0.0]]);
        let f = Linear(vec![1.0, -2.0, 0.5]);
        let times = TimeGrid::new(vec![1.0, 3.0]).unwrap();
        let x = [4.0, 0.0, 1.0];
        let r = survshap_sampling(&f, &bg, &x, &times, SampleCount::All, 0).unwrap();
        let means = [1.0, 2.0, 1.0];
        for j in 0..3 {
            for (s, t) in times.points().iter().enumerate() {
                let expected = f.0[j] * t * (x[j] - means[j]);
                assert!((r.phi[j][s] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn kernel_weight_values() {
        assert!((shapley_kernel_weight(3, 1) - 2.0 / 6.0).abs() < 1e-15);
        assert!((shapley_kernel_weight(4, 2) - 3.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn heterogeneous_grids_are_rejected() {
        let bg = table(&[[0.0, 1.0, 2.0]]);
        let f = Linear(vec![1.0, 1.0, 1.0]);
        let a = survshap_sampling(
            &f,
            &bg,
            &[1.0, 1.0, 1.0],
            &TimeGrid::new(vec![1.0]).unwrap(),
            SampleCount::All,
            0,
        );
        let b = survshap_sampling(
            &f,
            &bg,
            &[1.0, 1.0, 1.0],
            &TimeGrid::new(vec![2.0]).unwrap(),
            SampleCount::All,
            0,
        );
        assert!(aggregate_global(&[a.unwrap(), b.unwrap()]).is_err());
    }

    #[test]
    fn zero_permutations_rejected() {
        let bg = table(&[[0.0, 1.0, 2.0]]);
        let f = Linear(vec![1.0, 1.0, 1.0]);
        let t = TimeGrid::new(vec![1.0]).unwrap();
        assert!(
            survshap_sampling(&f, &bg, &[1.0, 1.0, 1.0], &t, SampleCount::Count(0), 0).is_err()
        );
    }
}
