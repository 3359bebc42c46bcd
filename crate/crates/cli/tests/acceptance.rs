//! One pass/fail line per acceptance criterion. Exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde_json::Value;
use survexplain::dataio::{generate_synthetic, split, SyntheticSpec};
use survexplain::effects::{ale_curves, build_grid, ice_curves, pdp_curves, GridKind};
use survexplain::importance::{
    cpi, loco, one_sided_t_test, pfi, sign_test, BrierLoss, FiConfig, FiMode,
};
use survexplain::interactions::{h_total, h_two_way};
use survexplain::local::{
    counterfactual_explain, restricted_mean, survlime_explain, survlime_system, PsoConfig,
    SurvLimeConfig,
};
use survexplain::metrics::default_eval_grid;
use survexplain::models::{
    fit_cox, log_partial_likelihood, CoxConfig, CoxModel, ModelOutput, ModelSpec, OutputScale,
    Predictor,
};
use survexplain::survival::{
    kaplan_meier, kaplan_meier_from, nelson_aalen, nelson_aalen_from, unique_event_times,
};
use survexplain::survshap::{survshap_kernel, survshap_sampling, SampleCount};
use survexplain::{
    CurveKind, FeatureSpec, FeatureTable, Result, StepCurve, SurvivalDataset, TimeGrid,
};

type Check = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> std::result::Result<(), String> {
    ensure(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.1} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

struct Mock<F> {
    p: usize,
    f: F,
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

fn schema(p: usize) -> Vec<FeatureSpec> {
    (1..=p)
        .map(|j| FeatureSpec::numeric(format!("x{j}")))
        .collect()
}

fn table(p: usize, values: Vec<f64>) -> FeatureTable {
    FeatureTable::new(schema(p), values).unwrap()
}

/// Baseline `H0(t) = 0.1 t` on `t = 0.5, 1, ..., 20`.
fn h0() -> StepCurve {
    let grid = TimeGrid::new((1..=40).map(|k| 0.5 * k as f64).collect()).unwrap();
    let values = grid.points().iter().map(|t| 0.1 * t).collect();
    StepCurve::new(grid, values, CurveKind::Chf).unwrap()
}

fn cox(b: &[f64]) -> CoxModel {
    CoxModel::from_parts(&schema(b.len()), b.to_vec(), h0()).unwrap()
}

fn synthetic(n: usize, b: &[f64], seed: u64) -> SurvivalDataset {
    generate_synthetic(&SyntheticSpec {
        n,
        coefficients: b.to_vec(),
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Fractional part of `i·α` for a low-discrepancy sequence in [0, 1).
fn frac(i: usize, alpha: f64) -> f64 {
    (i as f64 * alpha).fract()
}

fn estimator_oracles() -> Check {
    let start = Instant::now();
    let time = vec![1.0, 2.0, 2.0, 3.0, 4.0];
    let event = vec![true, true, false, true, false];
    let km = kaplan_meier_from(&time, &event).unwrap();
    let na = nelson_aalen_from(&time, &event).unwrap();
    let at = [1.0, 2.0, 3.0, 4.0];
    let km_hand = [0.8, 0.6, 0.3, 0.3];
    let na_hand = [0.2, 0.45, 0.95, 0.95];
    for (k, &t) in at.iter().enumerate() {
        ensure((km.eval(t) - km_hand[k]).abs() <= 1e-12, format!("KM({t})"))?;
        ensure((na.eval(t) - na_hand[k]).abs() <= 1e-12, format!("NA({t})"))?;
    }
    let km = kaplan_meier_from(&[3.0, 1.0, 2.0], &[true; 3]).unwrap();
    let na = nelson_aalen_from(&[3.0, 1.0, 2.0], &[true; 3]).unwrap();
    for (t, s, h) in [
        (1.0, 2.0 / 3.0, 1.0 / 3.0),
        (2.0, 1.0 / 3.0, 1.0 / 3.0 + 0.5),
        (3.0, 0.0, 1.0 / 3.0 + 0.5 + 1.0),
    ] {
        ensure((km.eval(t) - s).abs() <= 1e-12, format!("KM no-ties ({t})"))?;
        ensure((na.eval(t) - h).abs() <= 1e-12, format!("NA no-ties ({t})"))?;
    }
    let data = synthetic(200, &[0.5, -0.5], 11);
    let km = kaplan_meier(&data).unwrap();
    let na = nelson_aalen(&data).unwrap();
    let grid = km.grid().clone();
    let gap = grid
        .points()
        .iter()
        .map(|&t| (km.eval(t) - (-na.eval(t)).exp()).abs())
        .fold(0.0, f64::max);
    ensure(gap <= 0.05, format!("sup|KM - exp(-NA)| = {gap}"))?;
    within(start.elapsed(), 1.0)?;
    Ok(format!(
        "hand datasets exact, sup|KM - exp(-NA)| = {gap:.4}"
    ))
}

fn cox_recovery() -> Check {
    let start = Instant::now();
    let b = [0.8, -0.5, 0.3, 0.0, -0.7];
    let data = generate_synthetic(&SyntheticSpec {
        n: 2000,
        coefficients: b.to_vec(),
        censoring_rate: 0.3,
        seed: 2024,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let model = fit_cox(&data, &CoxConfig::default()).unwrap();
    let err = sup(&model.coefficients, &b);
    ensure(err <= 0.1, format!("max |b_hat - b| = {err}"))?;
    let h = 1e-5;
    let mut grad_sup = 0.0f64;
    for j in 0..b.len() {
        let mut up = model.coefficients.clone();
        let mut dn = model.coefficients.clone();
        up[j] += h;
        dn[j] -= h;
        let g = (log_partial_likelihood(&data, &up).unwrap()
            - log_partial_likelihood(&data, &dn).unwrap())
            / (2.0 * h);
        grad_sup = grad_sup.max(g.abs());
    }
    ensure(
        grad_sup <= 1e-4,
        format!("finite-difference gradient {grad_sup:e}"),
    )?;
    within(start.elapsed(), 10.0)?;
    Ok(format!(
        "max coefficient error {err:.4}, gradient sup-norm {grad_sup:.2e}"
    ))
}

fn effect_identities() -> Check {
    let data = synthetic(60, &[0.7, -0.4], 5);
    let feats = data.features();
    let model = cox(&[0.7, -0.4]);
    let out = ModelOutput::survival(&model);
    let times = TimeGrid::new(vec![1.0, 2.5, 7.0]).unwrap();
    let grid = build_grid(feats, 0, GridKind::Quantile, 10, 0).unwrap();
    let ice = ice_curves(&out, feats, &grid, &times, None, None).unwrap();
    let pdp = pdp_curves(&out, feats, &grid, &times, None, None).unwrap();
    let n = feats.n_rows();
    for k in 0..grid.len() {
        for s in 0..times.len() {
            let mut acc = 0.0;
            for i in 0..n {
                acc += ice.value(i, k, s);
            }
            ensure(pdp.value(0, k, s) == acc / n as f64, "PDP != mean ICE")?;
        }
    }
    let k0 = 4;
    let x_ref = grid.points[k0];
    let cice = ice_curves(&out, feats, &grid, &times, Some(x_ref), None).unwrap();
    let cpdp = pdp_curves(&out, feats, &grid, &times, Some(x_ref), None).unwrap();
    for s in 0..times.len() {
        ensure(cpdp.value(0, k0, s) == 0.0, "c-PDP nonzero at reference")?;
        for i in 0..n {
            ensure(cice.value(i, k0, s) == 0.0, "c-ICE nonzero at reference")?;
        }
    }
    let b = -0.9;
    let one = cox(&[b]);
    let single = table(1, (0..25).map(|i| -2.0 + 0.17 * i as f64).collect());
    let g1 = build_grid(&single, 0, GridKind::Equidistant, 12, 0).unwrap();
    let ice1 = ice_curves(
        &ModelOutput::survival(&one),
        &single,
        &g1,
        &times,
        None,
        None,
    )
    .unwrap();
    let mut worst = 0.0f64;
    for (k, &v) in g1.points.iter().enumerate() {
        for (s, &t) in times.points().iter().enumerate() {
            let closed = (-(0.1 * t) * (b * v).exp()).exp();
            worst = worst.max((ice1.value(3, k, s) - closed).abs());
        }
    }
    ensure(
        worst <= 1e-12,
        format!("Cox ICE closed form off by {worst:e}"),
    )?;
    Ok(format!(
        "PDP = mean ICE exactly, centered curves 0 at reference, Cox ICE error {worst:.1e}"
    ))
}

fn ale_correctness() -> Check {
    // x2 tracks x1 closely; the model is additive wherever |x2 - x1| <= 0.2
    let n = 1000;
    let mut vals = Vec::with_capacity(3 * n);
    for i in 0..n {
        let x1 = -2.0 + 4.0 * (i as f64 + 0.5) / n as f64;
        let u = 0.05 * (2.0 * frac(i, 0.618_033_988_749_895) - 1.0);
        vals.extend([x1, x1 + u, 2.0 * frac(i, std::f64::consts::SQRT_2) - 1.0]);
    }
    let data = table(3, vals);
    let g1 = |x: f64| (1.5 * x).sin();
    let f = Mock {
        p: 3,
        f: move |r: &[f64], t: f64| {
            t * (g1(r[0]) + 0.5 * r[1] + 5.0 * ((r[1] - r[0]).abs() - 0.2).max(0.0))
        },
    };
    let times = TimeGrid::new(vec![1.0, 2.0]).unwrap();
    let intervals = 40;
    let ale = ale_curves(&f, &data, 0, &times, intervals, true).unwrap();
    let z = &ale.grid.points;
    let width = z.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let g1_data_mean = data.column(0).iter().map(|&x| g1(x)).sum::<f64>() / n as f64;
    let grid = build_grid(&data, 0, GridKind::Quantile, 20, 0).unwrap();
    let pdp = pdp_curves(&f, &data, &grid, &times, None, None).unwrap();
    let centered = |v: Vec<f64>| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.into_iter().map(|x| x - m).collect::<Vec<_>>()
    };
    let (mut d_ale, mut d_pdp, mut d_res) = (0.0f64, 0.0f64, 0.0f64);
    for (s, &t) in times.points().iter().enumerate() {
        let a = centered(ale.curve(0, s));
        let truth = centered(z.iter().map(|&x| t * g1(x)).collect());
        d_ale = d_ale.max(sup(&a, &truth));
        let p = centered(pdp.curve(0, s));
        let truth = centered(grid.points.iter().map(|&x| t * g1(x)).collect());
        d_pdp = d_pdp.max(sup(&p, &truth));
        let resolution = t * 1.5 * width;
        for (k, &x) in z.iter().enumerate() {
            let err = (ale.value(0, k, s) - t * (g1(x) - g1_data_mean)).abs();
            d_res = d_res.max(err / resolution);
        }
    }
    ensure(
        d_res <= 1.0,
        format!("centered ALE off by {d_res:.2} interval resolutions"),
    )?;
    ensure(d_pdp > 0.0, "PDP shows no bias")?;
    let ratio = d_ale / d_pdp;
    ensure(ratio <= 0.5, format!("ALE/PDP sup-distance ratio {ratio}"))?;
    let ignored = ale_curves(&f, &data, 2, &times, 10, true).unwrap();
    let worst = ignored.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(worst <= 1e-10, format!("ignored feature ALE {worst:e}"))?;
    Ok(format!(
        "ALE shape error {d_ale:.2e}, PDP shape error {d_pdp:.3}, ratio {ratio:.2e}, \
         data-centered error {d_res:.2} resolutions, ignored feature {worst:.0e}"
    ))
}

fn h_statistics() -> Check {
    let times = TimeGrid::new(vec![0.5, 1.0, 3.0]).unwrap();
    let n = 40;
    let mut vals = Vec::new();
    for i in 0..n {
        vals.extend([
            2.0 * frac(i, 0.618_033_988_749_895) - 1.0,
            2.0 * frac(i, std::f64::consts::SQRT_2) - 1.0,
            2.0 * frac(i, 0.7548776662466927) - 1.0,
        ]);
    }
    let data = table(3, vals);
    let rows: Vec<usize> = (0..n).collect();
    let additive = Mock {
        p: 3,
        f: |r: &[f64], t: f64| t * (r[0].sin() + r[1] * r[1] + 0.5 * r[2]),
    };
    let mut worst_add = 0.0f64;
    for h in [
        h_two_way(&additive, &data, 0, 1, &times, &rows).unwrap(),
        h_total(&additive, &data, 0, &times, &rows).unwrap(),
        h_total(&additive, &data, 2, &times, &rows).unwrap(),
    ] {
        for v in &h.values {
            worst_add = worst_add.max(v.ok_or("additive H undefined")?);
        }
    }
    ensure(worst_add <= 1e-10, format!("additive H² = {worst_add:e}"))?;
    let mut vals = Vec::new();
    for a in [-2.0, -1.0, 1.0, 2.0] {
        for b in [-1.5, -0.5, 0.5, 1.5] {
            vals.extend([a, b]);
        }
    }
    let grid_data = table(2, vals);
    let rows: Vec<usize> = (0..16).collect();
    let product = Mock {
        p: 2,
        f: |r: &[f64], t: f64| t * r[0] * r[1],
    };
    let mut worst_one = 0.0f64;
    for h in [
        h_two_way(&product, &grid_data, 0, 1, &times, &rows).unwrap(),
        h_total(&product, &grid_data, 0, &times, &rows).unwrap(),
    ] {
        for v in &h.values {
            worst_one = worst_one.max((v.ok_or("interaction H undefined")? - 1.0).abs());
        }
    }
    ensure(
        worst_one <= 1e-10,
        format!("pure interaction |H² - 1| = {worst_one:e}"),
    )?;
    let hand = Mock {
        p: 2,
        f: |r: &[f64], _: f64| r[0] * r[1] + r[0],
    };
    let d = table(2, vec![0.0, 1.0, 1.0, 2.0, 2.0, 0.0]);
    let one = TimeGrid::new(vec![1.0]).unwrap();
    let h2 = h_two_way(&hand, &d, 0, 1, &one, &[0, 1, 2]).unwrap().values[0].unwrap();
    let ht = h_total(&hand, &d, 0, &one, &[0, 1, 2]).unwrap().values[0].unwrap();
    ensure(
        (h2 - 1.0 / 7.0).abs() <= 1e-12,
        format!("hand two-way H² = {h2}"),
    )?;
    ensure(
        (ht - 1.0 / 7.0).abs() <= 1e-12,
        format!("hand total H² = {ht}"),
    )?;
    Ok(format!(
        "additive max H² {worst_add:.1e}, interaction |H²-1| {worst_one:.1e}, hand oracle 1/7"
    ))
}

fn student_t_cdf(t: f64, df: usize) -> f64 {
    match df {
        2 => 0.5 + t / (2.0 * (t * t + 2.0).sqrt()),
        4 => {
            let th = (t / 2.0).atan();
            0.5 + 0.5 * th.sin() * (1.0 + th.cos().powi(2) / 2.0)
        }
        _ => unreachable!(),
    }
}

fn with_duplicate(seed: u64) -> SurvivalDataset {
    let base = synthetic(300, &[1.0, -0.5], seed);
    let x1 = base.features().column(0);
    let x3 = base.features().column(1);
    let feats = FeatureTable::from_columns(schema(3), &[x1.clone(), x1, x3]).unwrap();
    SurvivalDataset::new(feats, base.time().to_vec(), base.event().to_vec()).unwrap()
}

fn importance() -> Check {
    let start = Instant::now();
    let data = synthetic(600, &[1.0, 0.0, -0.7], 2);
    let model = fit_cox(&data, &CoxConfig::default()).unwrap();
    let out = ModelOutput::survival(&model);
    let times = default_eval_grid(&data).unwrap();
    let cfg = FiConfig {
        repeats: 20,
        seed: 7,
        ..FiConfig::default()
    };
    let r = pfi(&out, &data, &BrierLoss, &cfg, &times).unwrap();
    let (m, sd) = mean_sd(&r.features[1].differences);
    ensure(
        m.abs() <= 2.0 * sd,
        format!("PFI of null feature {m:e} vs 2σ̂ {:e}", 2.0 * sd),
    )?;

    let dup_model = cox(&[0.5, 0.5, -0.5]);
    let dup_out = ModelOutput::survival(&dup_model);
    let mut d = Vec::new();
    let mut cpi_vals = Vec::new();
    for seed in 0..20 {
        let data = with_duplicate(seed);
        let times = default_eval_grid(&data).unwrap();
        let cfg = FiConfig {
            repeats: 3,
            seed,
            ..FiConfig::default()
        };
        let p = pfi(&dup_out, &data, &BrierLoss, &cfg, &times).unwrap();
        let c = cpi(&dup_out, &data, &BrierLoss, &cfg, &times).unwrap();
        d.push(p.features[0].aggregate - c.features[0].aggregate);
        cpi_vals.push(c.features[0].aggregate);
    }
    let p_sign = sign_test(&d);
    ensure(p_sign < 0.05, format!("CPI < PFI sign test p = {p_sign}"))?;

    let big = generate_synthetic(&SyntheticSpec {
        n: 800,
        coefficients: vec![1.2, 0.0, -0.6],
        seed: 5,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let [train, _, test] = split(&big, [0.6, 0.2, 0.2], 2).unwrap();
    let times = default_eval_grid(&test).unwrap();
    let l = loco(
        &ModelSpec::Cox(CoxConfig::default()),
        &train,
        &test,
        &BrierLoss,
        FiMode::Difference,
        &times,
    )
    .unwrap();
    let top = l.features.iter().map(|f| f.aggregate).fold(0.0, f64::max);
    let null = l.features[1].aggregate;
    ensure(
        null.abs() <= 0.05 * top,
        format!("LOCO of irrelevant feature {null:e} vs largest {top:e}"),
    )?;

    let mut worst = 0.0f64;
    for sample in [vec![0.3, -0.1, 0.4, 0.2, 0.5], vec![0.9, -0.2, 0.4]] {
        let (m, sd) = mean_sd(&sample);
        let t = m / (sd / (sample.len() as f64).sqrt());
        let hand = 1.0 - student_t_cdf(t, sample.len() - 1);
        worst = worst.max((one_sided_t_test(&sample).unwrap() - hand).abs());
    }
    ensure(worst <= 1e-10, format!("t-test p-value off by {worst:e}"))?;
    within(start.elapsed(), 60.0)?;
    let (cm, _) = mean_sd(&cpi_vals);
    Ok(format!(
        "null PFI {m:.1e} (2σ̂ {:.1e}), sign test p {p_sign:.1e} (mean CPI {cm:.1e}), \
         LOCO null/top {:.3}, t-test error {worst:.0e}, {:.1} s",
        2.0 * sd,
        null / top,
        start.elapsed().as_secs_f64()
    ))
}

fn survlime() -> Check {
    let start = Instant::now();
    let data = synthetic(400, &[0.8, -0.5, 0.3], 4);
    let model = fit_cox(&data, &CoxConfig::default()).unwrap();
    let out = ModelOutput::new(&model, OutputScale::Chf);
    let scale = model
        .coefficients
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut worst_rel = 0.0f64;
    let mut worst_solve = 0.0f64;
    for i in [0, 7, 21] {
        let r = survlime_explain(
            &out,
            &data,
            data.features().row(i),
            &SurvLimeConfig::default(),
        )
        .unwrap();
        worst_rel = worst_rel.max(sup(&r.coefficients_raw, &model.coefficients) / scale);
        let nb = &r.neighborhood;
        let chf = out
            .predict_batch(&nb.points.concat(), 3, r.baseline_curve.grid())
            .unwrap();
        let sys = survlime_system(&nb.coordinates, &nb.weights, &chf, &r.baseline_curve);
        let rows = sys.response.len();
        let a = DMatrix::from_fn(rows, 3, |k, j| sys.weights[k].sqrt() * sys.design[k][j]);
        let y = DVector::from_fn(rows, |k, _| sys.weights[k].sqrt() * sys.response[k]);
        let dense = a.svd(true, true).solve(&y, 1e-14).unwrap();
        worst_solve = worst_solve.max(sup(dense.as_slice(), &r.coefficients));
        ensure(
            sys.objective(&r.coefficients) <= sys.objective(&[0.0; 3]),
            "objective above its value at 0",
        )?;
    }
    ensure(
        worst_rel < 0.15,
        format!("relative max-norm error {worst_rel}"),
    )?;
    ensure(
        worst_solve <= 1e-8,
        format!("dense re-solve differs by {worst_solve:e}"),
    )?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "relative error {worst_rel:.4}, dense re-solve {worst_solve:.1e}"
    ))
}

fn survshap() -> Check {
    let times = TimeGrid::new(vec![1.0, 2.5, 4.0, 8.0]).unwrap();
    let mut eff = 0.0f64;
    let mut kern = 0.0f64;
    for p in 1..=5 {
        let b: Vec<f64> = (0..p).map(|j| 0.6 - 0.25 * j as f64).collect();
        let model = cox(&b);
        let out = ModelOutput::survival(&model);
        let bg = synthetic(25, &b, p as u64).features().clone();
        let x: Vec<f64> = (0..p).map(|j| 1.0 - 0.45 * j as f64).collect();
        let exact = survshap_sampling(&out, &bg, &x, &times, SampleCount::All, 0).unwrap();
        eff = eff.max(exact.efficiency_gap());
        if p >= 2 {
            let k = survshap_kernel(&out, &bg, &x, &times, SampleCount::All, 0).unwrap();
            for j in 0..p {
                kern = kern.max(sup(&k.phi[j], &exact.phi[j]));
            }
        }
    }
    ensure(eff <= 1e-10, format!("efficiency gap {eff:e}"))?;
    ensure(kern <= 1e-8, format!("kernel vs exact {kern:e}"))?;

    let b = [0.8, -0.6, 0.4, 0.2];
    let model = cox(&b);
    let out = ModelOutput::survival(&model);
    let bg = synthetic(20, &b, 5).features().clone();
    let x = [1.0, 0.5, -1.0, 0.3];
    let exact = survshap_sampling(&out, &bg, &x, &times, SampleCount::All, 0).unwrap();
    let (mut worst_z, mut worst_z_kernel) = (0.0f64, 0.0f64);
    for kernel in [false, true] {
        let runs: Vec<_> = (0..50)
            .map(|seed| {
                if kernel {
                    survshap_kernel(&out, &bg, &x, &times, SampleCount::Count(40), seed).unwrap()
                } else {
                    survshap_sampling(&out, &bg, &x, &times, SampleCount::Count(6), seed).unwrap()
                }
            })
            .collect();
        for j in 0..4 {
            for s in 0..4 {
                let v: Vec<f64> = runs.iter().map(|r| r.phi[j][s]).collect();
                let (m, sd) = mean_sd(&v);
                let se = sd / (v.len() as f64).sqrt();
                let gap = (m - exact.phi[j][s]).abs();
                // sampling: σ̂ of the 50-run mean; kernel: per-run σ̂
                let band = if kernel { 3.0 * sd } else { 3.0 * se };
                ensure(
                    gap <= band,
                    format!(
                        "{} estimator: mean off by {gap:e}, 3σ̂ {:e}",
                        if kernel { "kernel" } else { "sampling" },
                        band
                    ),
                )?;
                let z = if kernel {
                    &mut worst_z_kernel
                } else {
                    &mut worst_z
                };
                *z = z.max(gap / se);
            }
        }
    }

    let mut vals = Vec::new();
    for i in 0..10 {
        let (a, c) = (0.25 * i as f64 - 1.0, 0.5 - 0.125 * i as f64);
        vals.extend([a, c, 0.75 - 0.25 * (i % 4) as f64, 0.5 * (i % 3) as f64]);
        vals.extend([c, a, 0.75 - 0.25 * (i % 4) as f64, 0.5 * (i % 3) as f64]);
    }
    let sym_bg = table(4, vals);
    let f = Mock {
        p: 4,
        f: |r: &[f64], t: f64| t * (r[0] + r[1]).powi(2) + r[2],
    };
    let r = survshap_sampling(
        &f,
        &sym_bg,
        &[1.5, 1.5, 0.25, 3.0],
        &times,
        SampleCount::All,
        0,
    )
    .unwrap();
    ensure(r.phi[0] == r.phi[1], "symmetry violated")?;
    ensure(r.phi[3].iter().all(|v| *v == 0.0), "missingness violated")?;
    Ok(format!(
        "efficiency {eff:.1e}, kernel-all {kern:.1e}, sampling mean within {worst_z:.2} SE, \
         kernel mean within {worst_z_kernel:.2} SE of exact"
    ))
}

fn counterfactual() -> Check {
    let n = 200;
    let x: Vec<f64> = (0..n)
        .map(|i| -2.0 + 4.0 * i as f64 / (n - 1) as f64)
        .collect();
    let time = (0..n).map(|i| 0.5 + ((i * 31) % 97) as f64 / 6.0).collect();
    let event = (0..n).map(|i| i % 3 != 0).collect();
    let data = SurvivalDataset::new(table(1, x), time, event).unwrap();
    let model = cox(&[-0.8]);
    let out = ModelOutput::survival(&model);
    let times = unique_event_times(&data, false).unwrap();
    let mean = |v: f64| restricted_mean(&out.predict_row(&[v], &times).unwrap(), &times);
    let x0 = -1.0;
    let gap = 0.5 * (mean(2.0) - mean(x0));
    let c = 0.05;
    let loss = |v: f64| (gap - (mean(v) - mean(x0))).max(0.0) + c * (v - x0).abs();
    let steps = 4000;
    let h = 4.0 / steps as f64;
    let (best_v, best_l) = (0..=steps)
        .map(|k| -2.0 + k as f64 * h)
        .map(|v| (v, loss(v)))
        .fold((f64::NAN, f64::INFINITY), |acc, (v, l)| {
            if l < acc.1 {
                (v, l)
            } else {
                acc
            }
        });
    let pso = PsoConfig::default();
    let r = counterfactual_explain(&out, &data, &[x0], gap, c, &pso, 5).unwrap();
    let dv = (r.counterfactual[0] - best_v).abs();
    ensure(
        dv <= h,
        format!("PSO {} vs grid {best_v}", r.counterfactual[0]),
    )?;
    ensure(r.loss <= best_l + 1e-12, "PSO loss above grid optimum")?;
    let zero = counterfactual_explain(&out, &data, &[x0], 0.0, c, &pso, 1).unwrap();
    ensure(
        zero.counterfactual == vec![x0] && zero.loss == 0.0,
        "r_gap = 0 moved x",
    )?;
    let heavy = counterfactual_explain(&out, &data, &[x0], gap, 1e6, &pso, 1).unwrap();
    let dh = (heavy.counterfactual[0] - x0).abs();
    ensure(dh <= 1e-6, format!("C = 1e6 moved x by {dh:e}"))?;
    Ok(format!(
        "PSO within {dv:.1e} of grid optimum (resolution {h:.0e}), degenerate cases keep x"
    ))
}

fn cli(args: &[&str]) -> std::result::Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_survexplain"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Numeric payload of a run directory: each JSON `result` and each CSV, by name.
fn payloads(dir: &Path) -> Vec<(String, String)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let text = std::fs::read_to_string(&p).unwrap();
            let body = if p.extension().is_some_and(|e| e == "json") {
                let v: Value = serde_json::from_str(&text).unwrap();
                v["result"].to_string()
            } else {
                text
            };
            (p.file_name().unwrap().to_string_lossy().into_owned(), body)
        })
        .collect()
}

fn determinism() -> Check {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let mut runs = Vec::new();
    for (tag, threads) in [("a", "1"), ("b", "4"), ("c", "4")] {
        let dir = root.join(tag);
        let d = dir.join("d");
        cli(&[
            "--threads",
            threads,
            "synth",
            "--n",
            "200",
            "--p",
            "4",
            "--seed",
            "3",
            "--out",
            s(&d),
        ])?;
        let (data, schema) = (d.join("data.csv"), d.join("schema.json"));
        let cox = dir.join("cox.json");
        let rsf = dir.join("rsf.json");
        cli(&[
            "--threads",
            threads,
            "fit",
            "cox",
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--out",
            s(&cox),
        ])?;
        cli(&[
            "--threads",
            threads,
            "fit",
            "rsf",
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--out",
            s(&rsf),
            "--seed",
            "8",
            "--n-trees",
            "30",
        ])?;
        let x = dir.join("x");
        let common = [
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--out",
            s(&x),
            "--seed",
            "12",
            "--n-times",
            "20",
        ];
        let method_args: Vec<(&str, Vec<&str>)> = vec![
            (
                "ice",
                vec![
                    "--feature",
                    "x1",
                    "--grid-kind",
                    "sample",
                    "--ice-rows",
                    "50",
                ],
            ),
            (
                "hstat",
                vec!["--feature", "x1", "--with", "x2", "--eval-rows", "40"],
            ),
            ("pfi", vec!["--repeats", "3"]),
            ("cpi", vec!["--repeats", "3"]),
            ("survlime", vec!["--instance", "4"]),
            (
                "survshap",
                vec![
                    "--instance",
                    "4",
                    "--estimator",
                    "kernel",
                    "--samples",
                    "30",
                ],
            ),
            ("survshap", vec!["--shap-rows", "4", "--background", "30"]),
            (
                "counterfactual",
                vec!["--instance", "4", "--r-gap", "1.0", "--iterations", "60"],
            ),
        ];
        for model in [&cox, &rsf] {
            for (method, extra) in &method_args {
                let mut args = vec!["--threads", threads, "explain", method, "--model", s(model)];
                args.extend(common);
                args.extend(extra);
                cli(&args)?;
            }
            let name = model.file_stem().unwrap().to_string_lossy().into_owned();
            std::fs::rename(&x, dir.join(format!("x_{name}"))).map_err(|e| e.to_string())?;
        }
        let mut all = payloads(&d);
        all.extend(payloads(&dir));
        for sub in ["x_cox", "x_rsf"] {
            all.extend(payloads(&dir.join(sub)));
        }
        runs.push(all);
    }
    ensure(runs[0].len() > 20, "too few artifacts compared")?;
    for other in &runs[1..] {
        ensure(other.len() == runs[0].len(), "artifact sets differ")?;
        for (a, b) in runs[0].iter().zip(other) {
            ensure(a == b, format!("`{}` differs between runs", a.0))?;
        }
    }
    Ok(format!(
        "{} artifacts byte-identical across --threads 1/4 and reruns",
        runs[0].len()
    ))
}

fn pipeline() -> Check {
    let start = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let d = root.join("d");
    cli(&[
        "synth",
        "--n",
        "500",
        "--p",
        "10",
        "--seed",
        "1",
        "--out",
        s(&d),
    ])?;
    let (data, schema) = (d.join("data.csv"), d.join("schema.json"));
    let cox = root.join("cox.json");
    let rsf = root.join("rsf.json");
    cli(&[
        "fit",
        "cox",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--out",
        s(&cox),
    ])?;
    cli(&[
        "fit",
        "rsf",
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--out",
        s(&rsf),
        "--seed",
        "2",
    ])?;
    for (model, name) in [(&cox, "cox"), (&rsf, "rsf")] {
        cli(&[
            "evaluate",
            "--data",
            s(&data),
            "--schema",
            s(&schema),
            "--model",
            s(model),
            "--out",
            s(&root.join(format!("eval_{name}.json"))),
            "--n-times",
            "50",
        ])?;
    }
    let x = root.join("x");
    let common = [
        "--data",
        s(&data),
        "--schema",
        s(&schema),
        "--model",
        s(&cox),
        "--out",
        s(&x),
        "--seed",
        "3",
        "--n-times",
        "50",
    ];
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("ice", vec!["--feature", "x1"]),
        ("pdp", vec!["--feature", "x1"]),
        ("ale", vec!["--feature", "x1"]),
        ("mplot", vec!["--feature", "x1"]),
        ("hstat", vec!["--feature", "x1"]),
        ("hstat", vec!["--feature", "x1", "--with", "x2"]),
        ("pfi", vec![]),
        ("cpi", vec![]),
        ("loco", vec![]),
        ("survlime", vec!["--instance", "0"]),
        ("survshap", vec!["--instance", "0"]),
        ("survshap", vec![]),
        ("counterfactual", vec!["--instance", "0", "--r-gap", "1.0"]),
    ];
    for (method, extra) in &runs {
        let mut args = vec!["explain", method];
        args.extend(common);
        args.extend(extra);
        cli(&args)?;
    }
    let pdp = std::fs::read_to_string(x.join("pdp_x1.json")).map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&pdp).map_err(|e| e.to_string())?;
    let m = v["result"]["times"].as_array().map_or(0, Vec::len);
    ensure(m == 50, format!("time grid has {m} points"))?;
    within(start.elapsed(), 300.0)?;
    Ok(format!(
        "synth, fit cox+rsf, evaluate and 13 explainer runs in {:.1} s",
        start.elapsed().as_secs_f64()
    ))
}

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("estimator oracles", estimator_oracles),
        ("Cox recovery", cox_recovery),
        ("effect identities", effect_identities),
        ("ALE correctness", ale_correctness),
        ("H-statistics", h_statistics),
        ("importance", importance),
        ("SurvLIME", survlime),
        ("SurvSHAP(t)", survshap),
        ("counterfactual", counterfactual),
        ("determinism", determinism),
        ("end-to-end pipeline", pipeline),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.into_iter().enumerate() {
        let outcome =
            catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".to_string()));
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", k + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {why}", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
