//! Random survival forest with log-rank splitting and Nelson–Aalen leaves.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, FeatureSpec, SurvivalDataset};
use crate::error::{Error, Result};
use crate::metrics::harrell_concordance;
use crate::rng::task_rng;
use crate::survival::{nelson_aalen, unique_event_times, CurveKind, StepCurve, TimeGrid};

use super::SurvivalModel;

/// Exhaustive level partitions are searched up to this many levels.
const MAX_EXHAUSTIVE_LEVELS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RsfConfig {
    pub n_trees: usize,
    /// Features tried per split; `None` means `ceil(sqrt(p))`.
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub bootstrap: bool,
    /// Upper bound on numeric thresholds evaluated per feature and node.
    pub split_candidates: usize,
    pub seed: u64,
}

impl Default for RsfConfig {
    fn default() -> Self {
        Self {
            n_trees: 100,
            mtry: None,
            min_node_size: 15,
            bootstrap: true,
            split_candidates: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Split {
    /// Rows with `x <= threshold` go left.
    Numeric { feature: usize, threshold: f64 },
    /// Rows whose level is in `left_levels` go left.
    Categorical {
        feature: usize,
        left_levels: Vec<usize>,
    },
}

impl Split {
    fn goes_left(&self, row: &[f64]) -> bool {
        match self {
            Split::Numeric { feature, threshold } => row[*feature] <= *threshold,
            Split::Categorical {
                feature,
                left_levels,
            } => left_levels.contains(&(row[*feature] as usize)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum TreeNode {
    Internal {
        split: Split,
        left: usize,
        right: usize,
    },
    Leaf {
        /// In-bag rows (with bootstrap multiplicity).
        size: usize,
        times: Vec<f64>,
        chf: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsfModel {
    pub features: Vec<FeatureSpec>,
    pub config: RsfConfig,
    pub trees: Vec<Vec<TreeNode>>,
    /// Training Nelson–Aalen curve, kept for reference.
    pub baseline_chf: StepCurve,
    /// Out-of-bag training rows per tree.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub oob: Vec<Vec<usize>>,
}

impl RsfModel {
    fn leaf<'a>(tree: &'a [TreeNode], row: &[f64]) -> (&'a [f64], &'a [f64]) {
        let mut node = 0;
        loop {
            match &tree[node] {
                TreeNode::Internal { split, left, right } => {
                    node = if split.goes_left(row) { *left } else { *right };
                }
                TreeNode::Leaf { times, chf, .. } => return (times, chf),
            }
        }
    }

    fn check_row(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.features.len() {
            return Err(Error::invalid("row width does not match model schema"));
        }
        for (spec, &v) in self.features.iter().zip(row) {
            spec.check_value(v)?;
        }
        Ok(())
    }

    fn tree_chf(tree: &[TreeNode], row: &[f64], grid: &TimeGrid, acc: &mut [f64]) {
        let (times, chf) = Self::leaf(tree, row);
        for (a, &t) in acc.iter_mut().zip(grid.points()) {
            let k = times.partition_point(|&s| s <= t);
            if k > 0 {
                *a += chf[k - 1];
            }
        }
    }

    /// Out-of-bag ensemble CHF for each training row (`None` if the row was
    /// in-bag for every tree).
    pub fn oob_chf(
        &self,
        data: &SurvivalDataset,
        grid: &TimeGrid,
    ) -> Result<Vec<Option<Vec<f64>>>> {
        if self.oob.len() != self.trees.len() {
            return Err(Error::invalid("model carries no out-of-bag bookkeeping"));
        }
        let n = data.n_rows();
        let mut sums = vec![vec![0.0; grid.len()]; n];
        let mut counts = vec![0usize; n];
        for (tree, oob) in self.trees.iter().zip(&self.oob) {
            for &i in oob {
                if i >= n {
                    return Err(Error::invalid("out-of-bag index outside the dataset"));
                }
                Self::tree_chf(tree, data.features().row(i), grid, &mut sums[i]);
                counts[i] += 1;
            }
        }
        Ok(sums
            .into_iter()
            .zip(counts)
            .map(|(s, c)| (c > 0).then(|| s.into_iter().map(|v| v / c as f64).collect()))
            .collect())
    }

    /// Harrell's C computed from out-of-bag predictions on the training data.
    pub fn oob_concordance(&self, data: &SurvivalDataset) -> Result<f64> {
        let grid = unique_event_times(data, false)?;
        let oob = self.oob_chf(data, &grid)?;
        let mut time = Vec::new();
        let mut event = Vec::new();
        let mut risk = Vec::new();
        for (i, chf) in oob.iter().enumerate() {
            if let Some(chf) = chf {
                time.push(data.time()[i]);
                event.push(data.event()[i]);
                risk.push(-chf.iter().map(|h| (-h).exp()).sum::<f64>());
            }
        }
        harrell_concordance(&time, &event, &risk)
    }
}

impl SurvivalModel for RsfModel {
    fn schema(&self) -> &[FeatureSpec] {
        &self.features
    }

    fn predict_chf(&self, row: &[f64], grid: &TimeGrid) -> Result<StepCurve> {
        self.check_row(row)?;
        let mut acc = vec![0.0; grid.len()];
        for tree in &self.trees {
            Self::tree_chf(tree, row, grid, &mut acc);
        }
        let n = self.trees.len() as f64;
        for a in &mut acc {
            *a /= n;
        }
        StepCurve::new(grid.clone(), acc, CurveKind::Chf)
    }
}

/// Training data in canonical row order, shared by all trees.
struct Training<'a> {
    data: &'a SurvivalDataset,
    /// canonical position -> original row
    order: Vec<usize>,
    /// index of each row's time in the sorted distinct times
    time_rank: Vec<usize>,
    n_times: usize,
}

impl<'a> Training<'a> {
    fn new(data: &'a SurvivalDataset) -> Self {
        let n = data.n_rows();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            data.time()[a]
                .total_cmp(&data.time()[b])
                .then(data.event()[a].cmp(&data.event()[b]))
                .then_with(|| {
                    let (ra, rb) = (data.features().row(a), data.features().row(b));
                    ra.iter()
                        .zip(rb)
                        .map(|(x, y)| x.total_cmp(y))
                        .find(|o| o.is_ne())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
        });
        let mut distinct: Vec<f64> = data.time().to_vec();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let time_rank = data
            .time()
            .iter()
            .map(|t| distinct.partition_point(|s| s < t))
            .collect();
        Self {
            data,
            order,
            time_rank,
            n_times: distinct.len(),
        }
    }

    fn x(&self, row: usize, feature: usize) -> f64 {
        self.data.features().get(row, feature)
    }
}

struct TreeBuilder<'t, 'a> {
    train: &'t Training<'a>,
    config: &'t RsfConfig,
    mtry: usize,
    nodes: Vec<TreeNode>,
    rng: ChaCha8Rng,
    // scratch buffers indexed by time rank
    d_tot: Vec<f64>,
    r_tot: Vec<f64>,
    d_left: Vec<f64>,
    r_left: Vec<f64>,
}

impl TreeBuilder<'_, '_> {
    fn leaf(&self, rows: &[usize]) -> TreeNode {
        let time: Vec<f64> = rows.iter().map(|&i| self.train.data.time()[i]).collect();
        let event: Vec<bool> = rows.iter().map(|&i| self.train.data.event()[i]).collect();
        let (times, chf) = match crate::survival::nelson_aalen_from(&time, &event) {
            Ok(c) => (c.grid().points().to_vec(), c.values().to_vec()),
            Err(_) => (Vec::new(), Vec::new()),
        };
        TreeNode::Leaf {
            size: rows.len(),
            times,
            chf,
        }
    }

    /// Log-rank chi-square for the split `left` vs the rest of `rows`.
    fn log_rank(&mut self, rows: &[usize], is_left: &dyn Fn(usize) -> bool) -> f64 {
        self.d_left.iter_mut().for_each(|v| *v = 0.0);
        self.r_left.iter_mut().for_each(|v| *v = 0.0);
        for &i in rows {
            if is_left(i) {
                let k = self.train.time_rank[i];
                self.r_left[k] += 1.0;
                if self.train.data.event()[i] {
                    self.d_left[k] += 1.0;
                }
            }
        }
        let mut at_risk_left = 0.0;
        let mut at_risk = 0.0;
        let mut u = 0.0;
        let mut v = 0.0;
        for k in (0..self.train.n_times).rev() {
            at_risk_left += self.r_left[k];
            at_risk += self.r_tot[k];
            let d = self.d_tot[k];
            if d > 0.0 && at_risk > 0.0 {
                let frac = at_risk_left / at_risk;
                u += self.d_left[k] - frac * d;
                if at_risk > 1.0 {
                    v += frac * (1.0 - frac) * d * (at_risk - d) / (at_risk - 1.0);
                }
            }
        }
        if v > 0.0 {
            u * u / v
        } else {
            0.0
        }
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<(Split, f64)> {
        let p = self.train.data.n_features();
        self.d_tot.iter_mut().for_each(|v| *v = 0.0);
        self.r_tot.iter_mut().for_each(|v| *v = 0.0);
        for &i in rows {
            let k = self.train.time_rank[i];
            self.r_tot[k] += 1.0;
            if self.train.data.event()[i] {
                self.d_tot[k] += 1.0;
            }
        }
        let min = self.config.min_node_size;
        let features = sample_indices(&mut self.rng, p, self.mtry.min(p)).into_vec();
        let mut best: Option<(Split, f64)> = None;
        for feature in features {
            let spec = &self.train.data.schema()[feature];
            let candidates: Vec<Split> = match &spec.kind {
                FeatureKind::Numeric => {
                    let mut vals: Vec<f64> =
                        rows.iter().map(|&i| self.train.x(i, feature)).collect();
                    vals.sort_by(f64::total_cmp);
                    let mut distinct = vals.clone();
                    distinct.dedup();
                    let mids: Vec<f64> = distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
                    let keep = self.config.split_candidates.max(1);
                    let chosen: Vec<f64> = if mids.len() <= keep {
                        mids
                    } else {
                        (0..keep)
                            .map(|c| mids[(c * (mids.len() - 1)) / (keep - 1).max(1)])
                            .collect()
                    };
                    chosen
                        .into_iter()
                        .filter(|thr| {
                            let n_left = vals.partition_point(|v| v <= thr);
                            n_left >= min && vals.len() - n_left >= min
                        })
                        .map(|threshold| Split::Numeric { feature, threshold })
                        .collect()
                }
                FeatureKind::Categorical { .. } => {
                    let mut levels: Vec<usize> = rows
                        .iter()
                        .map(|&i| self.train.x(i, feature) as usize)
                        .collect();
                    levels.sort_unstable();
                    levels.dedup();
                    let l = levels.len();
                    let mut out = Vec::new();
                    if l >= 2 && l <= MAX_EXHAUSTIVE_LEVELS {
                        for mask in 1u32..(1u32 << (l - 1)) {
                            let left = (0..l)
                                .filter(|b| mask & (1 << b) != 0)
                                .map(|b| levels[b])
                                .collect();
                            out.push(Split::Categorical {
                                feature,
                                left_levels: left,
                            });
                        }
                    } else if l > MAX_EXHAUSTIVE_LEVELS {
                        for &lv in &levels {
                            out.push(Split::Categorical {
                                feature,
                                left_levels: vec![lv],
                            });
                        }
                    }
                    out.into_iter()
                        .filter(|s| {
                            let n_left = rows
                                .iter()
                                .filter(|&&i| s.goes_left(self.train.data.features().row(i)))
                                .count();
                            n_left >= min && rows.len() - n_left >= min
                        })
                        .collect()
                }
            };
            for split in candidates {
                let data = self.train.data;
                let stat = self.log_rank(rows, &|i| split.goes_left(data.features().row(i)));
                if stat > 0.0 && best.as_ref().is_none_or(|(_, b)| stat > *b) {
                    best = Some((split, stat));
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            size: 0,
            times: Vec::new(),
            chf: Vec::new(),
        });
        let has_event = rows.iter().any(|&i| self.train.data.event()[i]);
        let split = if rows.len() >= 2 * self.config.min_node_size && has_event {
            self.best_split(&rows)
        } else {
            None
        };
        match split {
            None => self.nodes[id] = self.leaf(&rows),
            Some((split, _)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = rows
                    .iter()
                    .partition(|&&i| split.goes_left(self.train.data.features().row(i)));
                let left = self.grow(l);
                let right = self.grow(r);
                self.nodes[id] = TreeNode::Internal { split, left, right };
            }
        }
        id
    }
}

/// Grow `n_trees` log-rank survival trees. Each tree draws from its own
/// generator keyed by `(seed, tree index)` over a canonical row ordering, so
/// the fit does not depend on row order or thread count.
pub fn fit_rsf(data: &SurvivalDataset, config: &RsfConfig) -> Result<RsfModel> {
    let n = data.n_rows();
    let p = data.n_features();
    if config.n_trees == 0 {
        return Err(Error::invalid("n_trees must be positive"));
    }
    if config.min_node_size == 0 {
        return Err(Error::invalid("min_node_size must be positive"));
    }
    let mtry = config
        .mtry
        .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
        .clamp(1, p);
    let train = Training::new(data);
    let grown: Vec<(Vec<TreeNode>, Vec<usize>)> = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_rng(config.seed, &[t as u64]);
            let mut inbag = vec![0u32; n];
            let rows: Vec<usize> = if config.bootstrap {
                (0..n)
                    .map(|_| {
                        let c = rng.random_range(0..n);
                        inbag[c] += 1;
                        train.order[c]
                    })
                    .collect()
            } else {
                inbag.iter_mut().for_each(|c| *c = 1);
                train.order.clone()
            };
            let oob: Vec<usize> = {
                let mut o: Vec<usize> = (0..n)
                    .filter(|&c| inbag[c] == 0)
                    .map(|c| train.order[c])
                    .collect();
                o.sort_unstable();
                o
            };
            let mut builder = TreeBuilder {
                train: &train,
                config,
                mtry,
                nodes: Vec::new(),
                rng,
                d_tot: vec![0.0; train.n_times],
                r_tot: vec![0.0; train.n_times],
                d_left: vec![0.0; train.n_times],
                r_left: vec![0.0; train.n_times],
            };
            builder.grow(rows);
            (builder.nodes, oob)
        })
        .collect();
    let (trees, oob) = grown.into_iter().unzip();
    Ok(RsfModel {
        features: data.schema().to_vec(),
        config: config.clone(),
        trees,
        baseline_chf: nelson_aalen(data)?,
        oob,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureTable;

    fn toy(n: usize) -> SurvivalDataset {
        let x: Vec<f64> = (0..n).map(|i| (i % 7) as f64).collect();
        let time: Vec<f64> = (0..n)
            .map(|i| 1.0 + ((i * 37) % 23) as f64 + x[i])
            .collect();
        let event: Vec<bool> = (0..n).map(|i| i % 4 != 0).collect();
        let t = FeatureTable::new(vec![FeatureSpec::numeric("x")], x).unwrap();
        SurvivalDataset::new(t, time, event).unwrap()
    }

    #[test]
    fn single_root_reproduces_nelson_aalen() {
        let d = toy(40);
        let cfg = RsfConfig {
            n_trees: 1,
            min_node_size: 40,
            bootstrap: false,
            ..RsfConfig::default()
        };
        let m = fit_rsf(&d, &cfg).unwrap();
        let na = nelson_aalen(&d).unwrap();
        let grid = na.grid().clone();
        for x in [0.0, 3.0, 100.0] {
            let h = m.predict_chf(&[x], &grid).unwrap();
            assert_eq!(h.values(), na.values());
        }
    }

    #[test]
    fn two_tree_average_by_hand() {
        let d = toy(40);
        let grid = TimeGrid::new(vec![2.0, 5.0, 10.0]).unwrap();
        let leaf = |times: Vec<f64>, chf: Vec<f64>| TreeNode::Leaf {
            size: 1,
            times,
            chf,
        };
        let mut m = fit_rsf(
            &d,
            &RsfConfig {
                n_trees: 1,
                ..RsfConfig::default()
            },
        )
        .unwrap();
        m.trees = vec![
            vec![leaf(vec![1.0, 4.0], vec![0.2, 0.6])],
            vec![
                TreeNode::Internal {
                    split: Split::Numeric {
                        feature: 0,
                        threshold: 1.0,
                    },
                    left: 1,
                    right: 2,
                },
                leaf(vec![3.0], vec![1.0]),
                leaf(vec![6.0], vec![0.4]),
            ],
        ];
        let h = m.predict_chf(&[0.5], &grid).unwrap();
        let expected = [(0.2 + 0.0) / 2.0, (0.6 + 1.0) / 2.0, (0.6 + 1.0) / 2.0];
        for (a, b) in h.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let h = m.predict_chf(&[2.0], &grid).unwrap();
        let expected = [0.1, 0.3, 0.5];
        for (a, b) in h.values().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn leaves_respect_min_node_size_and_chf_is_nonnegative() {
        let d = toy(120);
        let cfg = RsfConfig {
            n_trees: 5,
            min_node_size: 10,
            seed: 3,
            ..RsfConfig::default()
        };
        let m = fit_rsf(&d, &cfg).unwrap();
        for tree in &m.trees {
            for node in tree {
                if let TreeNode::Leaf { size, .. } = node {
                    assert!(*size >= 10);
                }
            }
        }
        let grid = unique_event_times(&d, false).unwrap();
        let h = m.predict_chf(&[2.0], &grid).unwrap();
        assert!(h.values().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn unknown_level_rejected() {
        let t = FeatureTable::new(
            vec![FeatureSpec::categorical("g", vec!["a", "b"])],
            (0..30).map(|i| (i % 2) as f64).collect(),
        )
        .unwrap();
        let d = SurvivalDataset::new(t, (0..30).map(|i| 1.0 + i as f64).collect(), vec![true; 30])
            .unwrap();
        let m = fit_rsf(
            &d,
            &RsfConfig {
                n_trees: 2,
                min_node_size: 5,
                ..RsfConfig::default()
            },
        )
        .unwrap();
        let grid = TimeGrid::new(vec![1.0]).unwrap();
        assert!(matches!(
            m.predict_chf(&[2.0], &grid),
            Err(Error::UnknownLevel { .. })
        ));
    }
}
