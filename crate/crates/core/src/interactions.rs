//! Friedman's H-statistics evaluated at each time point.
//!
//! Partial dependence functions are estimated on a set of evaluation rows,
//! which serve both as the points where a PD function is evaluated and as
//! the sample it averages over. Every PD term is centered to mean zero over
//! the evaluation rows before the statistic is assembled.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::FeatureTable;
use crate::effects::sample_rows;
use crate::error::{Error, Result};
use crate::models::Predictor;
use crate::survival::TimeGrid;

/// Default number of evaluation rows.
pub const DEFAULT_EVAL_ROWS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HStatKind {
    TwoWay,
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HStatResult {
    pub kind: HStatKind,
    pub features: Vec<String>,
    pub times: TimeGrid,
    /// `H²(t_s)`; `None` where the denominator vanishes.
    pub values: Vec<Option<f64>>,
    /// Mean of the available values over time.
    pub marginal: Option<f64>,
    /// Values above 1 are kept as computed and flagged here.
    pub flag_gt1: Vec<bool>,
}

impl HStatResult {
    fn new(
        kind: HStatKind,
        features: Vec<String>,
        times: &TimeGrid,
        num: Vec<f64>,
        den: Vec<f64>,
    ) -> Self {
        let values: Vec<Option<f64>> = num
            .iter()
            .zip(&den)
            .map(|(n, d)| if *d > 0.0 { Some(n / d) } else { None })
            .collect();
        let available: Vec<f64> = values.iter().flatten().copied().collect();
        let marginal = if available.is_empty() {
            None
        } else {
            Some(available.iter().sum::<f64>() / available.len() as f64)
        };
        let flag_gt1 = values.iter().map(|v| v.is_some_and(|h| h > 1.0)).collect();
        Self {
            kind,
            features,
            times: times.clone(),
            values,
            marginal,
            flag_gt1,
        }
    }

    /// CSV rows `kind,features,t,H2,flag_gt1`, ending with the time-marginal.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["kind", "features", "t", "H2", "flag_gt1"])?;
        let kind = match self.kind {
            HStatKind::TwoWay => "two-way",
            HStatKind::Total => "total",
        };
        let features = self.features.join(":");
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |h| format!("{h}"));
        for ((t, v), f) in self
            .times
            .points()
            .iter()
            .zip(&self.values)
            .zip(&self.flag_gt1)
        {
            w.write_record([kind, &features, &format!("{t}"), &fmt(*v), &f.to_string()])?;
        }
        let mflag = self.marginal.is_some_and(|h| h > 1.0);
        w.write_record([
            kind,
            &features,
            "marginal",
            &fmt(self.marginal),
            &mflag.to_string(),
        ])?;
        w.flush()?;
        Ok(())
    }
}

/// Seeded evaluation rows: `min(n, 200)` rows in ascending order.
pub fn default_eval_rows(n: usize, seed: u64) -> Vec<usize> {
    sample_rows(n, DEFAULT_EVAL_ROWS, seed)
}

struct Evaluation<'a> {
    predictor: &'a dyn Predictor,
    /// Row-major evaluation rows.
    rows: Vec<f64>,
    n: usize,
    p: usize,
    times: &'a TimeGrid,
}

impl<'a> Evaluation<'a> {
    fn new(
        predictor: &'a dyn Predictor,
        data: &FeatureTable,
        rows: &[usize],
        times: &'a TimeGrid,
    ) -> Result<Self> {
        if predictor.n_features() != data.n_features() {
            return Err(Error::invalid("model and data feature counts differ"));
        }
        if rows.is_empty() || rows.iter().any(|&i| i >= data.n_rows()) {
            return Err(Error::invalid("evaluation rows are empty or out of range"));
        }
        let mut flat = Vec::with_capacity(rows.len() * data.n_features());
        for &i in rows {
            flat.extend_from_slice(data.row(i));
        }
        Ok(Self {
            predictor,
            rows: flat,
            n: rows.len(),
            p: data.n_features(),
            times,
        })
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.p..(i + 1) * self.p]
    }

    /// Centered PD surface `n × m`: for each evaluation row `i`, the mean
    /// over rows `k` of `f` at row `k` with the columns in `fixed` taken from
    /// row `i`.
    fn centered_pd(&self, fixed: &[usize]) -> Result<Vec<f64>> {
        let m = self.times.len();
        let mut pd = vec![0.0; self.n * m];
        for i in 0..self.n {
            let mut batch = self.rows.clone();
            for k in 0..self.n {
                for &j in fixed {
                    batch[k * self.p + j] = self.row(i)[j];
                }
            }
            let preds = self.predictor.predict_batch(&batch, self.p, self.times)?;
            for k in 0..self.n {
                for s in 0..m {
                    pd[i * m + s] += preds[k * m + s];
                }
            }
            for s in 0..m {
                pd[i * m + s] /= self.n as f64;
            }
        }
        center(&mut pd, self.n, m);
        Ok(pd)
    }

    fn centered_prediction(&self) -> Result<Vec<f64>> {
        let m = self.times.len();
        let mut f = self
            .predictor
            .predict_batch(&self.rows, self.p, self.times)?;
        center(&mut f, self.n, m);
        Ok(f)
    }
}

fn center(values: &mut [f64], n: usize, m: usize) {
    for s in 0..m {
        let mean = (0..n).map(|i| values[i * m + s]).sum::<f64>() / n as f64;
        for i in 0..n {
            values[i * m + s] -= mean;
        }
    }
}

/// Per-time numerator `Σ_i (whole - parts)²` and denominator `Σ_i whole²`.
fn ratio_terms(whole: &[f64], parts: [&[f64]; 2], n: usize, m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut num = vec![0.0; m];
    let mut den = vec![0.0; m];
    for i in 0..n {
        for s in 0..m {
            let c = i * m + s;
            let r = whole[c] - parts[0][c] - parts[1][c];
            num[s] += r * r;
            den[s] += whole[c] * whole[c];
        }
    }
    (num, den)
}

/// Two-way interaction strength `H²_ab(t)`.
pub fn h_two_way(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    a: usize,
    b: usize,
    times: &TimeGrid,
    rows: &[usize],
) -> Result<HStatResult> {
    if a == b || a >= data.n_features() || b >= data.n_features() {
        return Err(Error::invalid(
            "two-way H needs two distinct valid features",
        ));
    }
    let ev = Evaluation::new(predictor, data, rows, times)?;
    let pd_ab = ev.centered_pd(&[a, b])?;
    let pd_a = ev.centered_pd(&[a])?;
    let pd_b = ev.centered_pd(&[b])?;
    let (num, den) = ratio_terms(&pd_ab, [&pd_a, &pd_b], ev.n, times.len());
    let names = vec![data.schema()[a].name.clone(), data.schema()[b].name.clone()];
    Ok(HStatResult::new(HStatKind::TwoWay, names, times, num, den))
}

/// Total interaction strength `H²_a(t)` of feature `a` with all others.
pub fn h_total(
    predictor: &dyn Predictor,
    data: &FeatureTable,
    a: usize,
    times: &TimeGrid,
    rows: &[usize],
) -> Result<HStatResult> {
    if a >= data.n_features() {
        return Err(Error::invalid(format!("feature index {a} out of range")));
    }
    let ev = Evaluation::new(predictor, data, rows, times)?;
    let f = ev.centered_prediction()?;
    let pd_a = ev.centered_pd(&[a])?;
    let rest: Vec<usize> = (0..data.n_features()).filter(|&j| j != a).collect();
    let pd_rest = if rest.is_empty() {
        vec![0.0; f.len()]
    } else {
        ev.centered_pd(&rest)?
    };
    let (num, den) = ratio_terms(&f, [&pd_a, &pd_rest], ev.n, times.len());
    Ok(HStatResult::new(
        HStatKind::Total,
        vec![data.schema()[a].name.clone()],
        times,
        num,
        den,
    ))
}
