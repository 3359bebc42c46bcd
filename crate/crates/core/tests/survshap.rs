mod common;

use common::{cox, mean_sd, sup_abs, synthetic, table, Mock};
use survexplain::models::{ModelOutput, Predictor};
use survexplain::survshap::{
    aggregate_global, default_background, survshap_kernel, survshap_sampling, SampleCount,
    ShapEstimator, SurvShapResult,
};
use survexplain::{FeatureTable, TimeGrid};

fn grid() -> TimeGrid {
    TimeGrid::new(vec![1.0, 2.5, 4.0, 8.0]).unwrap()
}

fn background(p: usize, n: usize, seed: u64) -> FeatureTable {
    let d = synthetic(n, &vec![0.3; p], seed);
    d.features().clone()
}

/// Value `v(A)` computed directly from its definition.
fn value(
    f: &dyn Predictor,
    bg: &FeatureTable,
    x: &[f64],
    mask: usize,
    times: &TimeGrid,
) -> Vec<f64> {
    let mut acc = vec![0.0; times.len()];
    for b in bg.rows() {
        let row: Vec<f64> = (0..x.len())
            .map(|j| if mask >> j & 1 == 1 { x[j] } else { b[j] })
            .collect();
        for (a, v) in acc.iter_mut().zip(f.predict_row(&row, times).unwrap()) {
            *a += v;
        }
    }
    acc.iter().map(|a| a / bg.n_rows() as f64).collect()
}

/// Shapley values as the average marginal contribution over all `p!` orders.
fn permutation_oracle(
    f: &dyn Predictor,
    bg: &FeatureTable,
    x: &[f64],
    times: &TimeGrid,
) -> Vec<Vec<f64>> {
    fn perms(items: Vec<usize>) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items];
        }
        let mut out = Vec::new();
        for i in 0..items.len() {
            let mut rest = items.clone();
            let head = rest.remove(i);
            for mut tail in perms(rest) {
                tail.insert(0, head);
                out.push(tail);
            }
        }
        out
    }
    let p = x.len();
    let all = perms((0..p).collect());
    let mut phi = vec![vec![0.0; times.len()]; p];
    for perm in &all {
        let mut mask = 0usize;
        for &j in perm {
            let before = value(f, bg, x, mask, times);
            mask |= 1 << j;
            let after = value(f, bg, x, mask, times);
            for s in 0..times.len() {
                phi[j][s] += (after[s] - before[s]) / all.len() as f64;
            }
        }
    }
    phi
}

#[test]
fn exact_mode_matches_permutation_oracle_on_cox() {
    let model = cox(&[0.8, -0.4, 0.3]);
    let out = ModelOutput::survival(&model);
    let bg = background(3, 25, 1);
    let x = [1.2, -0.3, 0.7];
    let r = survshap_sampling(&out, &bg, &x, &grid(), SampleCount::All, 0).unwrap();
    assert_eq!(r.estimator, ShapEstimator::Exact);
    let oracle = permutation_oracle(&out, &bg, &x, &grid());
    for j in 0..3 {
        assert!(sup_abs(&r.phi[j], &oracle[j]) < 1e-10);
    }
    assert!(r.efficiency_gap() < 1e-10);
}

#[test]
fn exact_efficiency_up_to_five_features() {
    for p in 1..=5 {
        let coefs: Vec<f64> = (0..p).map(|j| 0.5 - 0.2 * j as f64).collect();
        let model = cox(&coefs);
        let out = ModelOutput::survival(&model);
        let bg = background(p, 30, p as u64);
        let x: Vec<f64> = (0..p).map(|j| 0.4 * j as f64 - 0.5).collect();
        let r = survshap_sampling(&out, &bg, &x, &grid(), SampleCount::All, 0).unwrap();
        assert!(r.efficiency_gap() < 1e-10);
        let direct = out.predict_row(&x, &grid()).unwrap();
        assert!(sup_abs(&r.prediction, &direct) < 1e-14);
    }
}

#[test]
fn ignored_feature_gets_zero() {
    let f = Mock {
        p: 3,
        f: |r: &[f64], t: f64| (-(0.1 * t) * (r[0] - 0.5 * r[2]).exp()).exp(),
    };
    let bg = background(3, 20, 2);
    let r = survshap_sampling(&f, &bg, &[0.3, 2.0, -1.0], &grid(), SampleCount::All, 0).unwrap();
    assert!(r.phi[1].iter().all(|v| *v == 0.0));
}

#[test]
fn symmetric_features_get_equal_values() {
    let f = Mock {
        p: 3,
        f: |r: &[f64], t: f64| (-(0.1 * t) * (r[0] + r[1]).exp() - 0.05 * r[2] * r[2]).exp(),
    };
    let half = background(3, 10, 3);
    let mut vals = Vec::new();
    for r in half.rows() {
        vals.extend_from_slice(r);
        vals.extend([r[1], r[0], r[2]]);
    }
    let bg = table(3, vals);
    let r = survshap_sampling(&f, &bg, &[0.6, 0.6, -0.2], &grid(), SampleCount::All, 0).unwrap();
    assert!(sup_abs(&r.phi[0], &r.phi[1]) < 1e-14);
}

#[test]
fn feature_matching_whole_background_gets_zero() {
    let f = Mock {
        p: 2,
        f: |r: &[f64], t: f64| (-(0.2 * t) * (r[0] * r[1]).exp()).exp(),
    };
    let bg = table(2, vec![0.0, 1.5, 1.0, 1.5, -2.0, 1.5]);
    let r = survshap_sampling(&f, &bg, &[0.7, 1.5], &grid(), SampleCount::All, 0).unwrap();
    assert!(r.phi[1].iter().all(|v| *v == 0.0));
}

#[test]
fn kernel_all_coalitions_equals_exact() {
    for p in 2..=5 {
        let coefs: Vec<f64> = (0..p).map(|j| 0.6 - 0.25 * j as f64).collect();
        let model = cox(&coefs);
        let out = ModelOutput::survival(&model);
        let bg = background(p, 20, 10 + p as u64);
        let x: Vec<f64> = (0..p).map(|j| 1.0 - 0.45 * j as f64).collect();
        let exact = survshap_sampling(&out, &bg, &x, &grid(), SampleCount::All, 0).unwrap();
        let kern = survshap_kernel(&out, &bg, &x, &grid(), SampleCount::All, 0).unwrap();
        assert_eq!(kern.n_samples, (1 << p) - 2);
        for j in 0..p {
            assert!(sup_abs(&exact.phi[j], &kern.phi[j]) < 1e-8);
        }
    }
}

#[test]
fn single_feature_efficiency() {
    let model = cox(&[0.9]);
    let out = ModelOutput::survival(&model);
    let bg = background(1, 40, 4);
    let r = survshap_kernel(&out, &bg, &[0.4], &grid(), SampleCount::Count(10), 0).unwrap();
    let pred = out.predict_row(&[0.4], &grid()).unwrap();
    for s in 0..4 {
        assert!((r.phi[0][s] - (pred[s] - r.baseline[s])).abs() < 1e-15);
    }
}

#[test]
fn own_background_gives_zero_attributions() {
    let model = cox(&[0.5, -0.5, 0.2]);
    let out = ModelOutput::survival(&model);
    let x = [0.3, 0.1, -0.9];
    let bg = table(3, x.to_vec());
    let r = survshap_kernel(&out, &bg, &x, &grid(), SampleCount::All, 0).unwrap();
    assert_eq!(r.baseline, r.prediction);
    assert!(r.phi.iter().flatten().all(|v| v.abs() < 1e-15));
}

#[test]
fn permutation_sampling_is_unbiased() {
    let model = cox(&[0.8, -0.6, 0.4, 0.2]);
    let out = ModelOutput::survival(&model);
    let bg = background(4, 20, 5);
    let x = [1.0, 0.5, -1.0, 0.3];
    let exact = survshap_sampling(&out, &bg, &x, &grid(), SampleCount::All, 0).unwrap();
    let runs: Vec<SurvShapResult> = (0..50)
        .map(|seed| survshap_sampling(&out, &bg, &x, &grid(), SampleCount::Count(6), seed).unwrap())
        .collect();
    for j in 0..4 {
        for s in 0..4 {
            let v: Vec<f64> = runs.iter().map(|r| r.phi[j][s]).collect();
            let (mean, sd) = mean_sd(&v);
            let se = sd / (v.len() as f64).sqrt();
            assert!((mean - exact.phi[j][s]).abs() <= 3.0 * se + 1e-12);
        }
    }
}

#[test]
fn sampled_kernel_is_close_to_exact() {
    let model = cox(&[0.8, -0.6, 0.4, 0.2]);
    let out = ModelOutput::survival(&model);
    let bg = background(4, 20, 5);
    let x = [1.0, 0.5, -1.0, 0.3];
    let exact = survshap_sampling(&out, &bg, &x, &grid(), SampleCount::All, 0).unwrap();
    let r = survshap_kernel(&out, &bg, &x, &grid(), SampleCount::Count(2000), 9).unwrap();
    assert!(r.efficiency_gap() < 1e-12);
    let scale = exact
        .phi
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    for j in 0..4 {
        assert!(sup_abs(&r.phi[j], &exact.phi[j]) < 0.1 * scale);
    }
}

#[test]
fn sampling_is_deterministic() {
    let model = cox(&[0.8, -0.6, 0.4, 0.2, 0.1, -0.3, 0.5]);
    let out = ModelOutput::survival(&model);
    let bg = background(7, 20, 5);
    let x = [0.1; 7];
    assert_eq!(SampleCount::default_for(7), SampleCount::Count(200));
    assert!(survshap_sampling(&out, &bg, &x, &grid(), SampleCount::All, 0).is_err());
    let a = survshap_sampling(&out, &bg, &x, &grid(), SampleCount::Count(30), 4).unwrap();
    let b = survshap_sampling(&out, &bg, &x, &grid(), SampleCount::Count(30), 4).unwrap();
    assert_eq!(a, b);
    assert!(a.efficiency_gap() < 1e-12);
}

#[test]
fn global_aggregation() {
    let model = cox(&[0.8, -0.1, 0.4]);
    let out = ModelOutput::survival(&model);
    let data = synthetic(60, &[0.3, 0.3, 0.3], 6);
    let bg = default_background(&data, 1);
    assert_eq!(bg.n_rows(), 60);
    let results: Vec<SurvShapResult> = (0..2)
        .map(|i| {
            let mut r = survshap_sampling(
                &out,
                &bg,
                data.features().row(i),
                &grid(),
                SampleCount::All,
                0,
            )
            .unwrap();
            r.instance = Some(i);
            r
        })
        .collect();
    let single = aggregate_global(&results[..1]).unwrap();
    for j in 0..3 {
        let abs: Vec<f64> = results[0].phi[j].iter().map(|v| v.abs()).collect();
        assert_eq!(single.mean_abs[j], abs);
    }
    let g = aggregate_global(&results).unwrap();
    for j in 0..3 {
        for s in 0..4 {
            let hand = (results[0].phi[j][s].abs() + results[1].phi[j][s].abs()) / 2.0;
            assert!((g.mean_abs[j][s] - hand).abs() < 1e-15);
        }
    }
    let mut score: Vec<(usize, f64)> = (0..3)
        .map(|j| {
            let tot: f64 = results
                .iter()
                .flat_map(|r| r.phi[j].iter().map(|v| v.abs()))
                .sum();
            (j, tot)
        })
        .collect();
    score.sort_by(|a, b| b.1.total_cmp(&a.1));
    assert_eq!(g.order, score.iter().map(|s| s.0).collect::<Vec<_>>());
    assert_eq!(g.beeswarm.len(), 6);
    assert_eq!(g.beeswarm[4].feature_value, data.features().get(1, 1));
    let mut buf = Vec::new();
    g.write_curves_csv(&mut buf).unwrap();
    assert!(String::from_utf8(buf)
        .unwrap()
        .starts_with("feature,t,mean_abs_phi\n"));
}

#[test]
fn json_round_trip() {
    let model = cox(&[0.8, -0.1]);
    let out = ModelOutput::survival(&model);
    let bg = background(2, 10, 1);
    let r = survshap_sampling(&out, &bg, &[0.0, 1.0], &grid(), SampleCount::All, 0).unwrap();
    let s = serde_json::to_string(&r).unwrap();
    let back: SurvShapResult = serde_json::from_str(&s).unwrap();
    assert_eq!(back, r);
    assert_eq!(serde_json::to_string(&SampleCount::All).unwrap(), "\"all\"");
    assert_eq!(
        serde_json::from_str::<SampleCount>("25").unwrap(),
        SampleCount::Count(25)
    );
}
