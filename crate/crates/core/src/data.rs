//! Feature tables and right-censored survival datasets.
//!
//! Features are stored row-major as `f64`. Categorical columns hold the
//! zero-based index of the level in the column's level list, which keeps a
//! row a plain `&[f64]` for every model and explainer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    Categorical { levels: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Numeric,
        }
    }

    pub fn categorical<S: Into<String>>(name: impl Into<String>, levels: Vec<S>) -> Self {
        Self {
            name: name.into(),
            kind: FeatureKind::Categorical {
                levels: levels.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.kind, FeatureKind::Categorical { .. })
    }

    pub fn levels(&self) -> Option<&[String]> {
        match &self.kind {
            FeatureKind::Categorical { levels } => Some(levels),
            FeatureKind::Numeric => None,
        }
    }

    /// Validate a stored value against this column, returning the level index
    /// for categorical columns.
    pub fn check_value(&self, value: f64) -> Result<Option<usize>> {
        match &self.kind {
            FeatureKind::Numeric => {
                if value.is_finite() {
                    Ok(None)
                } else {
                    Err(Error::invalid(format!(
                        "non-finite value {value} in feature `{}`",
                        self.name
                    )))
                }
            }
            FeatureKind::Categorical { levels } => {
                if value >= 0.0 && value.fract() == 0.0 && (value as usize) < levels.len() {
                    Ok(Some(value as usize))
                } else {
                    Err(Error::UnknownLevel {
                        feature: self.name.clone(),
                        value,
                    })
                }
            }
        }
    }

    /// Human-readable rendering of a stored value.
    pub fn display_value(&self, value: f64) -> String {
        match &self.kind {
            FeatureKind::Categorical { levels }
                if value >= 0.0 && (value as usize) < levels.len() =>
            {
                levels[value as usize].clone()
            }
            _ => format!("{value}"),
        }
    }
}

/// Row-major `n × p` feature table with a typed schema.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    schema: Vec<FeatureSpec>,
    values: Vec<f64>,
    n_rows: usize,
}

impl FeatureTable {
    pub fn new(schema: Vec<FeatureSpec>, values: Vec<f64>) -> Result<Self> {
        let p = schema.len();
        if p == 0 {
            return Err(Error::invalid("feature table needs at least one column"));
        }
        if values.len() % p != 0 {
            return Err(Error::invalid(format!(
                "{} values do not fill rows of width {p}",
                values.len()
            )));
        }
        let mut names: Vec<&str> = schema.iter().map(|s| s.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("feature names must be unique"));
        }
        for row in values.chunks(p) {
            for (spec, &v) in schema.iter().zip(row) {
                spec.check_value(v)?;
            }
        }
        let n_rows = values.len() / p;
        Ok(Self {
            schema,
            values,
            n_rows,
        })
    }

    /// Build from columns (each of length `n`).
    pub fn from_columns(schema: Vec<FeatureSpec>, columns: &[Vec<f64>]) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::invalid("column count does not match schema"));
        }
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::invalid("columns have different lengths"));
        }
        let mut values = Vec::with_capacity(n * columns.len());
        for i in 0..n {
            values.extend(columns.iter().map(|c| c[i]));
        }
        Self::new(schema, values)
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.n_features();
        &self.values[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_features())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_features() + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn feature_index(&self, name: &str) -> Result<usize> {
        self.schema
            .iter()
            .position(|s| s.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown feature `{name}`")))
    }

    /// Copy with column `j` replaced by `column`.
    pub fn with_column(&self, j: usize, column: &[f64]) -> Result<Self> {
        if column.len() != self.n_rows {
            return Err(Error::invalid("replacement column has wrong length"));
        }
        let spec = &self.schema[j];
        for &v in column {
            spec.check_value(v)?;
        }
        let p = self.n_features();
        let mut values = self.values.clone();
        for (i, &v) in column.iter().enumerate() {
            values[i * p + j] = v;
        }
        Ok(Self {
            schema: self.schema.clone(),
            values,
            n_rows: self.n_rows,
        })
    }

    /// Copy keeping only the listed rows, in the listed order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.n_features());
        for &i in rows {
            values.extend_from_slice(self.row(i));
        }
        Self {
            schema: self.schema.clone(),
            values,
            n_rows: rows.len(),
        }
    }

    /// Copy without column `j`.
    pub fn drop_column(&self, j: usize) -> Result<Self> {
        if self.n_features() < 2 {
            return Err(Error::invalid("cannot drop the only feature"));
        }
        let mut schema = self.schema.clone();
        schema.remove(j);
        let values = self
            .rows()
            .flat_map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, &v)| v)
            })
            .collect();
        Ok(Self {
            schema,
            values,
            n_rows: self.n_rows,
        })
    }
}

/// `n` triplets of features, observed time and event indicator.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    features: FeatureTable,
    time: Vec<f64>,
    event: Vec<bool>,
}

impl SurvivalDataset {
    pub fn new(features: FeatureTable, time: Vec<f64>, event: Vec<bool>) -> Result<Self> {
        let n = features.n_rows();
        if n == 0 {
            return Err(Error::invalid("dataset has no rows"));
        }
        if time.len() != n || event.len() != n {
            return Err(Error::invalid(format!(
                "time/event length ({}, {}) does not match {n} rows",
                time.len(),
                event.len()
            )));
        }
        if let Some(i) = time.iter().position(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::invalid(format!(
                "time at row {i} must be finite and nonnegative, got {}",
                time[i]
            )));
        }
        if !event.iter().any(|&e| e) {
            return Err(Error::NoEvents);
        }
        Ok(Self {
            features,
            time,
            event,
        })
    }

    pub fn features(&self) -> &FeatureTable {
        &self.features
    }

    pub fn schema(&self) -> &[FeatureSpec] {
        self.features.schema()
    }

    pub fn time(&self) -> &[f64] {
        &self.time
    }

    pub fn event(&self) -> &[bool] {
        &self.event
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }

    pub fn n_features(&self) -> usize {
        self.features.n_features()
    }

    pub fn n_events(&self) -> usize {
        self.event.iter().filter(|&&e| e).count()
    }

    /// Same outcomes with a different feature table (e.g. a permuted column).
    pub fn with_features(&self, features: FeatureTable) -> Result<Self> {
        Self::new(features, self.time.clone(), self.event.clone())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        Self::new(
            self.features.select_rows(rows),
            rows.iter().map(|&i| self.time[i]).collect(),
            rows.iter().map(|&i| self.event[i]).collect(),
        )
    }

    pub fn drop_feature(&self, j: usize) -> Result<Self> {
        Self::new(
            self.features.drop_column(j)?,
            self.time.clone(),
            self.event.clone(),
        )
    }
}
