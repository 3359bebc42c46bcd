//! Time grids, step curves and the nonparametric estimators.

use serde::{Deserialize, Serialize};

use crate::data::SurvivalDataset;
use crate::error::{Error, Result};

/// Floor applied to survival probabilities before taking logarithms.
pub const SURVIVAL_FLOOR: f64 = 1e-12;

/// Strictly increasing, finite, nonnegative time points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("time grid is empty"));
        }
        if points.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid(
                "time grid points must be finite and nonnegative",
            ));
        }
        if points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("time grid must be strictly increasing"));
        }
        Ok(Self(points))
    }

    pub fn points(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.0[0]
    }

    pub fn last(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Index of the last point `<= t`, or `None` when `t` precedes the grid.
    pub fn locate(&self, t: f64) -> Option<usize> {
        let k = self.0.partition_point(|&p| p <= t);
        k.checked_sub(1)
    }

    /// Keep points inside `[lo, hi]`.
    pub fn clip(&self, lo: f64, hi: f64) -> Result<Self> {
        Self::new(
            self.0
                .iter()
                .copied()
                .filter(|&t| t >= lo && t <= hi)
                .collect(),
        )
    }
}

impl TryFrom<Vec<f64>> for TimeGrid {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<TimeGrid> for Vec<f64> {
    fn from(g: TimeGrid) -> Self {
        g.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    Survival,
    Chf,
    Generic,
}

/// Right-continuous step function over a time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCurve {
    grid: TimeGrid,
    values: Vec<f64>,
    kind: CurveKind,
}

impl StepCurve {
    pub fn new(grid: TimeGrid, values: Vec<f64>, kind: CurveKind) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidCurve(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        match kind {
            CurveKind::Survival => {
                if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidCurve(
                        "survival values must lie in [0, 1]".into(),
                    ));
                }
                if values.windows(2).any(|w| w[1] > w[0]) {
                    return Err(Error::InvalidCurve(
                        "survival curve must be nonincreasing".into(),
                    ));
                }
            }
            CurveKind::Chf => {
                if values.iter().any(|v| !(*v >= 0.0) || v.is_infinite()) {
                    return Err(Error::InvalidCurve(
                        "cumulative hazard must be finite and >= 0".into(),
                    ));
                }
                if values.windows(2).any(|w| w[1] < w[0]) {
                    return Err(Error::InvalidCurve(
                        "cumulative hazard must be nondecreasing".into(),
                    ));
                }
            }
            CurveKind::Generic => {}
        }
        Ok(Self { grid, values, kind })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> CurveKind {
        self.kind
    }

    fn before_start(&self) -> f64 {
        match self.kind {
            CurveKind::Survival => 1.0,
            CurveKind::Chf => 0.0,
            CurveKind::Generic => self.values[0],
        }
    }

    /// Value at `t` (right-continuous).
    pub fn eval(&self, t: f64) -> f64 {
        match self.grid.locate(t) {
            Some(k) => self.values[k],
            None => self.before_start(),
        }
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        let k = self.grid.points().partition_point(|&p| p < t);
        match k.checked_sub(1) {
            Some(k) => self.values[k],
            None => self.before_start(),
        }
    }

    /// Evaluate on every point of another grid.
    pub fn eval_on(&self, grid: &TimeGrid) -> Vec<f64> {
        grid.points().iter().map(|&t| self.eval(t)).collect()
    }

    /// Re-sample onto another grid, keeping the kind.
    pub fn resample(&self, grid: &TimeGrid) -> StepCurve {
        StepCurve {
            grid: grid.clone(),
            values: self.eval_on(grid),
            kind: self.kind,
        }
    }
}

/// Event counts and risk-set sizes at each distinct time where the indicator fires.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskTable {
    pub times: Vec<f64>,
    pub events: Vec<f64>,
    pub at_risk: Vec<f64>,
}

/// Tabulate `(time, d, r)` at the distinct times with `indicator == true`.
/// Ties are handled in a single risk-set step.
pub fn risk_table(time: &[f64], indicator: &[bool]) -> Result<RiskTable> {
    if time.len() != indicator.len() {
        return Err(Error::invalid("time and indicator lengths differ"));
    }
    let mut order: Vec<usize> = (0..time.len()).collect();
    order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
    let n = time.len();
    let mut table = RiskTable {
        times: Vec::new(),
        events: Vec::new(),
        at_risk: Vec::new(),
    };
    let mut i = 0;
    while i < n {
        let t = time[order[i]];
        let mut j = i;
        let mut d = 0usize;
        while j < n && time[order[j]] == t {
            if indicator[order[j]] {
                d += 1;
            }
            j += 1;
        }
        if d > 0 {
            table.times.push(t);
            table.events.push(d as f64);
            table.at_risk.push((n - i) as f64);
        }
        i = j;
    }
    if table.times.is_empty() {
        return Err(Error::NoEvents);
    }
    Ok(table)
}

/// Ascending unique event times; with `include_censoring_times` all observed
/// times are used.
pub fn unique_event_times(
    data: &SurvivalDataset,
    include_censoring_times: bool,
) -> Result<TimeGrid> {
    unique_times_from(data.time(), data.event(), include_censoring_times)
}

pub fn unique_times_from(
    time: &[f64],
    event: &[bool],
    include_censoring_times: bool,
) -> Result<TimeGrid> {
    if !event.iter().any(|&e| e) {
        return Err(Error::NoEvents);
    }
    let mut ts: Vec<f64> = time
        .iter()
        .zip(event)
        .filter(|(_, &e)| e || include_censoring_times)
        .map(|(&t, _)| t)
        .collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    TimeGrid::new(ts)
}

/// Sorted multiset of all observed times (events and censorings).
pub fn observed_times(data: &SurvivalDataset) -> Vec<f64> {
    let mut ts = data.time().to_vec();
    ts.sort_by(f64::total_cmp);
    ts
}

/// Product-limit estimator of the survival function.
pub fn kaplan_meier(data: &SurvivalDataset) -> Result<StepCurve> {
    kaplan_meier_from(data.time(), data.event())
}

pub fn kaplan_meier_from(time: &[f64], event: &[bool]) -> Result<StepCurve> {
    let table = risk_table(time, event)?;
    let mut s = 1.0;
    let values = table
        .events
        .iter()
        .zip(&table.at_risk)
        .map(|(d, r)| {
            s *= 1.0 - d / r;
            s
        })
        .collect();
    StepCurve::new(TimeGrid::new(table.times)?, values, CurveKind::Survival)
}

/// Nelson–Aalen estimator of the cumulative hazard.
pub fn nelson_aalen(data: &SurvivalDataset) -> Result<StepCurve> {
    nelson_aalen_from(data.time(), data.event())
}

pub fn nelson_aalen_from(time: &[f64], event: &[bool]) -> Result<StepCurve> {
    let table = risk_table(time, event)?;
    let mut h = 0.0;
    let values = table
        .events
        .iter()
        .zip(&table.at_risk)
        .map(|(d, r)| {
            h += d / r;
            h
        })
        .collect();
    StepCurve::new(TimeGrid::new(table.times)?, values, CurveKind::Chf)
}

/// `S = exp(-H)` pointwise.
pub fn chf_to_survival(curve: &StepCurve) -> Result<StepCurve> {
    if curve.kind() != CurveKind::Chf {
        return Err(Error::InvalidCurve(
            "expected a cumulative hazard curve".into(),
        ));
    }
    let values = curve.values().iter().map(|h| (-h).exp()).collect();
    StepCurve::new(curve.grid().clone(), values, CurveKind::Survival)
}

/// `H = -ln S` pointwise, with `S` floored at [`SURVIVAL_FLOOR`].
pub fn survival_to_chf(curve: &StepCurve) -> Result<StepCurve> {
    if curve.kind() != CurveKind::Survival {
        return Err(Error::InvalidCurve("expected a survival curve".into()));
    }
    let values = curve
        .values()
        .iter()
        .map(|s| -(s.max(SURVIVAL_FLOOR)).ln())
        .map(|h| if h == 0.0 { 0.0 } else { h })
        .collect();
    StepCurve::new(curve.grid().clone(), values, CurveKind::Chf)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * prob.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
