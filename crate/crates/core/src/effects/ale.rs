//! Accumulated local effects over quantile intervals, and the similarity
//! ordering used for categorical features.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::survival::{quantile_sorted, TimeGrid};

use super::ice::check_predictor;
use super::{
    aggregate, feature_spec, EffectGrid, EffectMethod, EffectSurface, GridKind, Marginalization,
    TimeAggregate, TimeWeights,
};

/// Relative offset placing the lowest bound just below the minimum.
const LOWER_BOUND_OFFSET: f64 = 1e-9;

/// Grid bounds `z_0 < … < z_K` plus the rows assigned to each bound.
/// Rows in interval `k` (`1..=K`) move from `z_{k-1}` to `z_k`; rows listed
/// under bound 0 (categorical reference level) contribute no difference.
struct Partition {
    kind: GridKind,
    bounds: Vec<f64>,
    members: Vec<Vec<usize>>,
}

fn numeric_partition(column: &[f64], g: usize) -> Result<Partition> {
    if g == 0 {
        return Err(Error::invalid("ALE needs at least one interval"));
    }
    let mut sorted = column.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    if lo == hi {
        return Err(Error::invalid(
            "ALE needs at least two distinct feature values",
        ));
    }
    let mut bounds = vec![lo - LOWER_BOUND_OFFSET * (hi - lo)];
    for k in 1..=g {
        let q = if k == g {
            hi
        } else {
            quantile_sorted(&sorted, k as f64 / g as f64)
        };
        if q > bounds[bounds.len() - 1] {
            bounds.push(q);
        }
    }
    loop {
        let mut members = vec![Vec::new(); bounds.len()];
        for (i, &x) in column.iter().enumerate() {
            let b = 1 + bounds[1..].partition_point(|&q| q < x);
            members[b].push(i);
        }
        // the first interval always holds the minimum
        match (2..bounds.len()).find(|&b| members[b].is_empty()) {
            Some(b) => {
                bounds.remove(b - 1);
            }
            None => {
                return Ok(Partition {
                    kind: GridKind::Quantile,
                    bounds,
                    members,
                })
            }
        }
    }
}

fn categorical_partition(data: &FeatureTable, feature: usize) -> Result<Partition> {
    let order = order_categories(data, feature)?;
    let column = data.column(feature);
    let members = order
        .iter()
        .map(|&l| {
            (0..column.len())
                .filter(|&i| column[i] as usize == l)
                .collect()
        })
        .collect();
    Ok(Partition {
        kind: GridKind::Levels,
        bounds: order.iter().map(|&l| l as f64).collect(),
        members,
    })
}

/// Accumulated effects at every bound, `K+1` rows of `slots` values.
fn accumulate(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    feature: usize,
    times: &TimeGrid,
    part: &Partition,
    collapse: Option<(&[f64], TimeAggregate)>,
) -> Result<Vec<f64>> {
    let p = data.n_features();
    let mut batch = Vec::new();
    for (b, rows) in part.members.iter().enumerate().skip(1) {
        for &i in rows {
            for v in [part.bounds[b], part.bounds[b - 1]] {
                batch.extend_from_slice(data.row(i));
                let last = batch.len() - p + feature;
                batch[last] = v;
            }
        }
    }
    let m = times.len();
    let raw = predictor.predict_batch(&batch, p, times)?;
    let slots = if collapse.is_some() { 1 } else { m };
    let preds: Vec<f64> = match collapse {
        None => raw,
        Some((w, mode)) => raw.chunks(m).map(|c| aggregate(c, w, mode)).collect(),
    };
    let mut ale = vec![0.0; part.bounds.len() * slots];
    let mut pos = 0;
    for (b, rows) in part.members.iter().enumerate().skip(1) {
        let mut local = vec![0.0; slots];
        for _ in rows {
            let upper = &preds[pos * slots..(pos + 1) * slots];
            let lower = &preds[(pos + 1) * slots..(pos + 2) * slots];
            for s in 0..slots {
                local[s] += upper[s] - lower[s];
            }
            pos += 2;
        }
        for s in 0..slots {
            let prev = ale[(b - 1) * slots + s];
            ale[b * slots + s] = if rows.is_empty() {
                prev
            } else {
                prev + local[s] / rows.len() as f64
            };
        }
    }
    Ok(ale)
}

/// Subtract the data-weighted mean: each row takes the value at the bound of
/// its interval.
fn center(ale: &mut [f64], part: &Partition, slots: usize) {
    let n: usize = part.members.iter().map(Vec::len).sum();
    for s in 0..slots {
        let mean = part
            .members
            .iter()
            .enumerate()
            .map(|(b, rows)| rows.len() as f64 * ale[b * slots + s])
            .sum::<f64>()
            / n as f64;
        for b in 0..part.bounds.len() {
            ale[b * slots + s] -= mean;
        }
    }
}

fn ale_surface(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    feature: usize,
    times: &TimeGrid,
    g_intervals: usize,
    centered: bool,
    collapse: Option<(&TimeWeights, TimeAggregate)>,
) -> Result<EffectSurface> {
    check_predictor(predictor, data)?;
    let spec = feature_spec(data, feature)?;
    let part = if spec.is_categorical() {
        categorical_partition(data, feature)?
    } else {
        numeric_partition(&data.column(feature), g_intervals)?
    };
    let weights = match collapse {
        Some((w, mode)) => {
            let w = w.resolve(times)?;
            if mode == TimeAggregate::Mean && w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::invalid("time weights sum to zero"));
            }
            Some((w, mode))
        }
        None => None,
    };
    let mut values = accumulate(
        predictor,
        data,
        feature,
        times,
        &part,
        weights.as_ref().map(|(w, mode)| (w.as_slice(), *mode)),
    )?;
    let slots = if weights.is_some() { 1 } else { times.len() };
    if centered {
        center(&mut values, &part, slots);
    }
    Ok(EffectSurface {
        feature: spec.name.clone(),
        feature_spec: spec.clone(),
        grid: EffectGrid {
            feature,
            kind: part.kind,
            points: part.bounds,
        },
        times: times.clone(),
        instances: Vec::new(),
        values,
        method: if centered {
            EffectMethod::AleCentered
        } else {
            EffectMethod::AleUncentered
        },
        reference: None,
        marginalized: match weights {
            None => Marginalization::None,
            Some((_, TimeAggregate::Mean)) => Marginalization::MeanTime,
            Some((_, TimeAggregate::Sum)) => Marginalization::SumTime,
        },
    })
}

/// First-order ALE at every interval bound and time point.
///
/// Numeric features use `g_intervals` quantile intervals with the lowest
/// bound just below the minimum; empty intervals are merged into their left
/// neighbor. Categorical features are ordered by [`order_categories`] and
/// each level is one step.
pub fn ale_curves(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    feature: usize,
    times: &TimeGrid,
    g_intervals: usize,
    centered: bool,
) -> Result<EffectSurface> {
    ale_surface(predictor, data, feature, times, g_intervals, centered, None)
}

/// Time-marginalized ALE: predictions are aggregated over time inside each
/// finite difference.
pub fn ale_t(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    feature: usize,
    times: &TimeGrid,
    g_intervals: usize,
    centered: bool,
    mode: TimeAggregate,
    weights: &TimeWeights,
) -> Result<EffectSurface> {
    ale_surface(
        predictor,
        data,
        feature,
        times,
        g_intervals,
        centered,
        Some((weights, mode)),
    )
}

fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

fn tv_distance(a: &[f64], b: &[f64], n_levels: usize) -> f64 {
    let freq = |v: &[f64]| {
        let mut f = vec![0.0; n_levels];
        for &x in v {
            f[x as usize] += 1.0 / v.len() as f64;
        }
        f
    };
    let (fa, fb) = (freq(a), freq(b));
    0.5 * fa.iter().zip(&fb).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// One-dimensional classical scaling coordinates of the observed levels of
/// a categorical feature, as `(level, coordinate)` in schema order.
///
/// Level distances sum, over the other features, the Kolmogorov–Smirnov
/// distance (numeric) or total-variation distance of the level frequencies
/// (categorical). The sign is fixed so the first level is nonpositive.
pub fn category_coordinates(data: &FeatureTable, feature: usize) -> Result<Vec<(usize, f64)>> {
    let spec = feature_spec(data, feature)?;
    let n_levels = spec
        .levels()
        .ok_or_else(|| Error::invalid(format!("feature `{}` is not categorical", spec.name)))?
        .len();
    let column = data.column(feature);
    let groups: Vec<(usize, Vec<usize>)> = (0..n_levels)
        .map(|l| {
            (
                l,
                (0..column.len())
                    .filter(|&i| column[i] as usize == l)
                    .collect::<Vec<_>>(),
            )
        })
        .filter(|(_, rows)| !rows.is_empty())
        .collect();
    let k = groups.len();
    if k < 2 {
        return Err(Error::invalid(
            "ordering needs at least two observed levels",
        ));
    }
    let mut dist = DMatrix::<f64>::zeros(k, k);
    for (j, other) in data.schema().iter().enumerate() {
        if j == feature {
            continue;
        }
        let col = data.column(j);
        let values: Vec<Vec<f64>> = groups
            .iter()
            .map(|(_, r)| r.iter().map(|&i| col[i]).collect())
            .collect();
        for a in 0..k {
            for b in a + 1..k {
                let d = match other.levels() {
                    Some(l) => tv_distance(&values[a], &values[b], l.len()),
                    None => ks_distance(&values[a], &values[b]),
                };
                dist[(a, b)] += d;
                dist[(b, a)] += d;
            }
        }
    }
    let sq = dist.map(|d| d * d);
    let row_mean: Vec<f64> = (0..k).map(|a| sq.row(a).sum() / k as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / k as f64;
    let gram = DMatrix::from_fn(k, k, |a, b| {
        -0.5 * (sq[(a, b)] - row_mean[a] - row_mean[b] + grand)
    });
    let eig = SymmetricEigen::new(gram);
    let top = (0..k)
        .max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]))
        .expect("k >= 2");
    let scale = eig.eigenvalues[top].max(0.0).sqrt();
    let mut coords: Vec<f64> = (0..k).map(|a| eig.eigenvectors[(a, top)] * scale).collect();
    let pivot = coords
        .iter()
        .copied()
        .find(|c| c.abs() > 1e-12)
        .unwrap_or(0.0);
    if coords[0] > 0.0 || (coords[0].abs() <= 1e-12 && pivot > 0.0) {
        coords.iter_mut().for_each(|c| *c = -*c);
    }
    Ok(groups.iter().map(|(l, _)| *l).zip(coords).collect())
}

/// Observed levels sorted by their scaling coordinate (ties keep schema order).
pub fn order_categories(data: &FeatureTable, feature: usize) -> Result<Vec<usize>> {
    let mut coords = category_coordinates(data, feature)?;
    coords.sort_by(|a, b| a.1.total_cmp(&b.1));
    Ok(coords.into_iter().map(|(l, _)| l).collect())
}
