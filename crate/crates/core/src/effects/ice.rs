//! ICE, PDP and M-plot surfaces, and time marginalization.

use crate::data::FeatureTable;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::survival::TimeGrid;

use super::{
    aggregate, feature_spec, EffectGrid, EffectMethod, EffectSurface, Marginalization,
    TimeAggregate, TimeWeights,
};

/// Copies of the selected rows with column `feature` set to each value in
/// turn, ordered by row then value.
pub(crate) fn substituted_rows(
    data: &FeatureTable,
    rows: &[usize],
    feature: usize,
    values: &[f64],
) -> Vec<f64> {
    let p = data.n_features();
    let mut out = Vec::with_capacity(rows.len() * values.len() * p);
    for &i in rows {
        let row = data.row(i);
        for &v in values {
            out.extend_from_slice(row);
            let last = out.len() - p + feature;
            out[last] = v;
        }
    }
    out
}

pub(crate) fn check_predictor(predictor: &dyn Predictor, data: &FeatureTable) -> Result<()> {
    if predictor.n_features() != data.n_features() {
        return Err(Error::invalid(format!(
            "model expects {} features, data has {}",
            predictor.n_features(),
            data.n_features()
        )));
    }
    Ok(())
}

fn check_grid(data: &FeatureTable, grid: &EffectGrid) -> Result<()> {
    let spec = feature_spec(data, grid.feature)?;
    if grid.points.is_empty() {
        return Err(Error::invalid("effect grid is empty"));
    }
    for &v in &grid.points {
        spec.check_value(v)?;
    }
    Ok(())
}

/// Individual conditional expectation curves `f(t_s | x_A = grid_k, x_{-A}^i)`.
///
/// With `center_at = Some(x')` each curve has `f(t_s | x', x_{-A}^i)`
/// subtracted. `rows` restricts the instances (all rows by default).
pub fn ice_curves(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    grid: &EffectGrid,
    times: &TimeGrid,
    center_at: Option<f64>,
    rows: Option<&[usize]>,
) -> Result<EffectSurface> {
    check_predictor(predictor, data)?;
    check_grid(data, grid)?;
    let spec = feature_spec(data, grid.feature)?;
    let instances: Vec<usize> = match rows {
        Some(r) => {
            if r.is_empty() || r.iter().any(|&i| i >= data.n_rows()) {
                return Err(Error::invalid("instance subset is empty or out of range"));
            }
            r.to_vec()
        }
        None => (0..data.n_rows()).collect(),
    };
    if let Some(x) = center_at {
        spec.check_value(x)?;
        if !spec.is_categorical() {
            let (lo, hi) = (grid.points[0], grid.points[grid.len() - 1]);
            if x < lo || x > hi {
                return Err(Error::invalid(format!(
                    "reference {x} lies outside the grid range [{lo}, {hi}]"
                )));
            }
        }
    }
    let p = data.n_features();
    let batch = substituted_rows(data, &instances, grid.feature, &grid.points);
    let mut values = predictor.predict_batch(&batch, p, times)?;
    let method = if let Some(x) = center_at {
        let refs = substituted_rows(data, &instances, grid.feature, &[x]);
        let base = predictor.predict_batch(&refs, p, times)?;
        let m = times.len();
        let g = grid.len();
        for (i, b) in base.chunks(m).enumerate() {
            for k in 0..g {
                let cell = &mut values[(i * g + k) * m..(i * g + k + 1) * m];
                for (v, r) in cell.iter_mut().zip(b) {
                    *v -= r;
                }
            }
        }
        EffectMethod::CenteredIce
    } else {
        EffectMethod::Ice
    };
    Ok(EffectSurface {
        feature: spec.name.clone(),
        feature_spec: spec.clone(),
        grid: grid.clone(),
        times: times.clone(),
        instances,
        values,
        method,
        reference: center_at,
        marginalized: Marginalization::None,
    })
}

/// Instance mean of an ICE surface (summed in instance order).
pub fn pdp_from_ice(ice: &EffectSurface) -> Result<EffectSurface> {
    let method = match ice.method {
        EffectMethod::Ice => EffectMethod::Pdp,
        EffectMethod::CenteredIce => EffectMethod::CenteredPdp,
        _ => {
            return Err(Error::invalid(
                "partial dependence is built from ICE surfaces",
            ))
        }
    };
    let n = ice.n_instances();
    let cell = ice.grid.len() * ice.n_time_slots();
    let mut values = vec![0.0; cell];
    for i in 0..n {
        for (v, x) in values.iter_mut().zip(&ice.values[i * cell..(i + 1) * cell]) {
            *v += x;
        }
    }
    for v in &mut values {
        *v /= n as f64;
    }
    Ok(EffectSurface {
        instances: Vec::new(),
        values,
        method,
        ..ice.clone()
    })
}

/// Partial dependence: the instance mean of the ICE surface.
pub fn pdp_curves(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    grid: &EffectGrid,
    times: &TimeGrid,
    center_at: Option<f64>,
    rows: Option<&[usize]>,
) -> Result<EffectSurface> {
    pdp_from_ice(&ice_curves(predictor, data, grid, times, center_at, rows)?)
}

/// Rows whose observed feature value lies near `v`: for numeric features a
/// window of `w` consecutive rows in rank order centered on `v`, for
/// categorical features the rows with that level. Returned in row order.
fn neighborhood(
    column: &[f64],
    ranked: &[usize],
    categorical: bool,
    v: f64,
    w: usize,
) -> Vec<usize> {
    if categorical {
        return (0..column.len()).filter(|&i| column[i] == v).collect();
    }
    let n = ranked.len();
    let center = ranked.partition_point(|&i| column[i] < v);
    let start = center.saturating_sub(w / 2).min(n - w);
    let mut rows = ranked[start..start + w].to_vec();
    rows.sort_unstable();
    rows
}

/// Marginal (M-) plot: mean prediction at `grid_k` over the rows whose
/// observed value is in the neighborhood of `grid_k`.
pub fn m_plot(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    grid: &EffectGrid,
    times: &TimeGrid,
    fraction: f64,
) -> Result<EffectSurface> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid("neighborhood fraction must lie in (0, 1]"));
    }
    let ice = ice_curves(predictor, data, grid, times, None, None)?;
    let n = data.n_rows();
    let column = data.column(grid.feature);
    let mut ranked: Vec<usize> = (0..n).collect();
    ranked.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
    let w = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let categorical = ice.feature_spec.is_categorical();
    let g = grid.len();
    let m = times.len();
    let mut values = vec![f64::NAN; g * m];
    for (k, &v) in grid.points.iter().enumerate() {
        let rows = neighborhood(&column, &ranked, categorical, v, w);
        if rows.is_empty() {
            continue;
        }
        for s in 0..m {
            let sum: f64 = rows.iter().map(|&i| ice.value(i, k, s)).sum();
            values[k * m + s] = sum / rows.len() as f64;
        }
    }
    Ok(EffectSurface {
        instances: Vec::new(),
        values,
        method: EffectMethod::MPlot,
        ..ice
    })
}

/// Collapse the time axis by a weighted mean or sum.
pub fn marginalize_time(
    surface: &EffectSurface,
    mode: TimeAggregate,
    weights: &TimeWeights,
) -> Result<EffectSurface> {
    if surface.marginalized != Marginalization::None {
        return Err(Error::invalid("surface is already marginalized over time"));
    }
    let w = weights.resolve(&surface.times)?;
    if mode == TimeAggregate::Mean && w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::invalid("time weights sum to zero"));
    }
    let m = surface.times.len();
    let values = surface
        .values
        .chunks(m)
        .map(|c| aggregate(c, &w, mode))
        .collect();
    Ok(EffectSurface {
        values,
        marginalized: match mode {
            TimeAggregate::Mean => Marginalization::MeanTime,
            TimeAggregate::Sum => Marginalization::SumTime,
        },
        ..surface.clone()
    })
}
