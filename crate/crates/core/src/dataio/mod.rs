//! Schema files, CSV ingestion, encoding, splitting and synthetic data.

mod encode;
mod synthetic;

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use encode::{EncodedColumn, Encoding};
pub use synthetic::{generate_synthetic, Baseline, Interaction, SyntheticSpec};

use crate::data::{FeatureSpec, FeatureTable, SurvivalDataset};
use crate::error::{Error, Result};
use crate::rng::task_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnRole {
    Feature,
    Time,
    Event,
    Ignore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnType {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub name: String,
    pub role: ColumnRole,
    #[serde(rename = "type", default = "numeric")]
    pub column_type: ColumnType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

fn numeric() -> ColumnType {
    ColumnType::Numeric
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub columns: Vec<ColumnSchema>,
}

impl DatasetSchema {
    pub fn validate(&self) -> Result<()> {
        let count = |role| self.columns.iter().filter(|c| c.role == role).count();
        if count(ColumnRole::Time) != 1 || count(ColumnRole::Event) != 1 {
            return Err(Error::invalid(
                "schema needs exactly one time and one event column",
            ));
        }
        if count(ColumnRole::Feature) == 0 {
            return Err(Error::invalid("schema has no feature columns"));
        }
        let mut names: Vec<&str> = self.columns.iter().map(|c| c.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("column names must be unique"));
        }
        for c in &self.columns {
            if c.role == ColumnRole::Feature && c.column_type == ColumnType::Categorical {
                match &c.levels {
                    Some(l) if !l.is_empty() => {}
                    _ => {
                        return Err(Error::invalid(format!(
                            "categorical column `{}` needs a level list",
                            c.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: Self = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn feature_specs(&self) -> Vec<FeatureSpec> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Feature)
            .map(|c| match c.column_type {
                ColumnType::Numeric => FeatureSpec::numeric(c.name.clone()),
                ColumnType::Categorical => {
                    FeatureSpec::categorical(c.name.clone(), c.levels.clone().unwrap_or_default())
                }
            })
            .collect()
    }

    /// Schema describing a dataset written by [`write_csv`].
    pub fn for_dataset(data: &SurvivalDataset) -> Self {
        let mut columns: Vec<ColumnSchema> = data
            .schema()
            .iter()
            .map(|s| ColumnSchema {
                name: s.name.clone(),
                role: ColumnRole::Feature,
                column_type: if s.is_categorical() {
                    ColumnType::Categorical
                } else {
                    ColumnType::Numeric
                },
                levels: s.levels().map(<[String]>::to_vec),
            })
            .collect();
        for (name, role) in [("time", ColumnRole::Time), ("event", ColumnRole::Event)] {
            columns.push(ColumnSchema {
                name: name.into(),
                role,
                column_type: ColumnType::Numeric,
                levels: None,
            });
        }
        Self { columns }
    }
}

/// Missing-value handling summary: feature name → number of imputed cells.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationReport {
    pub imputed: BTreeMap<String, usize>,
}

impl ImputationReport {
    pub fn total(&self) -> usize {
        self.imputed.values().sum()
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell.trim(), "" | "NA" | "NaN" | "nan")
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    cell.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            message: format!("cannot parse `{cell}` as a number"),
        })
}

pub fn load_csv(
    path: &Path,
    schema: &DatasetSchema,
    impute: bool,
) -> Result<(SurvivalDataset, ImputationReport)> {
    read_csv(std::fs::File::open(path)?, schema, impute)
}

/// Parse a headed CSV. Data rows are numbered from 1 in errors.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &DatasetSchema,
    impute: bool,
) -> Result<(SurvivalDataset, ImputationReport)> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let position = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::invalid(format!("column `{name}` missing from CSV header")))
    };
    let specs = schema.feature_specs();
    let feature_pos: Vec<usize> = specs
        .iter()
        .map(|s| position(&s.name))
        .collect::<Result<_>>()?;
    let time_col = schema
        .columns
        .iter()
        .find(|c| c.role == ColumnRole::Time)
        .expect("validated");
    let event_col = schema
        .columns
        .iter()
        .find(|c| c.role == ColumnRole::Event)
        .expect("validated");
    let time_pos = position(&time_col.name)?;
    let event_pos = position(&event_col.name)?;

    let p = specs.len();
    let mut cells: Vec<Option<f64>> = Vec::new();
    let mut time = Vec::new();
    let mut event = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let get = |pos: usize| record.get(pos).unwrap_or("");
        let t = parse_number(get(time_pos), row, &time_col.name)?;
        if t < 0.0 {
            return Err(Error::Parse {
                row,
                column: time_col.name.clone(),
                message: "negative time".into(),
            });
        }
        let e = match get(event_pos).trim() {
            "0" | "0.0" => false,
            "1" | "1.0" => true,
            other => {
                return Err(Error::Parse {
                    row,
                    column: event_col.name.clone(),
                    message: format!("event must be 0 or 1, got `{other}`"),
                })
            }
        };
        time.push(t);
        event.push(e);
        for (spec, &pos) in specs.iter().zip(&feature_pos) {
            let cell = get(pos);
            if is_missing(cell) {
                if !impute {
                    return Err(Error::Parse {
                        row,
                        column: spec.name.clone(),
                        message: "missing value".into(),
                    });
                }
                cells.push(None);
                continue;
            }
            let v = match spec.levels() {
                Some(levels) => levels
                    .iter()
                    .position(|l| l == cell.trim())
                    .ok_or_else(|| Error::Parse {
                        row,
                        column: spec.name.clone(),
                        message: format!("unknown level `{cell}`"),
                    })? as f64,
                None => parse_number(cell, row, &spec.name)?,
            };
            cells.push(Some(v));
        }
    }
    let n = time.len();
    if n == 0 {
        return Err(Error::invalid("CSV has no data rows"));
    }

    let mut report = ImputationReport::default();
    let mut values = vec![0.0; n * p];
    for (j, spec) in specs.iter().enumerate() {
        let observed: Vec<f64> = (0..n).filter_map(|i| cells[i * p + j]).collect();
        let missing = n - observed.len();
        let fill = if missing == 0 {
            0.0
        } else if observed.is_empty() {
            return Err(Error::invalid(format!(
                "column `{}` has no observed values to impute from",
                spec.name
            )));
        } else if spec.is_categorical() {
            mode(&observed)
        } else {
            median(&observed)
        };
        if missing > 0 {
            report.imputed.insert(spec.name.clone(), missing);
            log::info!("imputed {missing} cells in `{}`", spec.name);
        }
        for i in 0..n {
            values[i * p + j] = cells[i * p + j].unwrap_or(fill);
        }
    }
    let table = FeatureTable::new(specs, values)?;
    Ok((SurvivalDataset::new(table, time, event)?, report))
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Most frequent value; ties go to the smallest level code.
fn mode(v: &[f64]) -> f64 {
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    for &x in v {
        *counts.entry(x as u64).or_default() += 1;
    }
    let best = counts
        .iter()
        .map(|(k, c)| (*c, std::cmp::Reverse(*k)))
        .max()
        .expect("nonempty");
    best.1 .0 as f64
}

/// Write features, `time` and `event` columns with a header. Categorical
/// values are written as level names.
pub fn write_csv<W: Write>(data: &SurvivalDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = data.schema().iter().map(|s| s.name.clone()).collect();
    header.push("time".into());
    header.push("event".into());
    w.write_record(&header)?;
    for i in 0..data.n_rows() {
        let mut rec: Vec<String> = data
            .schema()
            .iter()
            .zip(data.features().row(i))
            .map(|(s, &v)| s.display_value(v))
            .collect();
        rec.push(format!("{}", data.time()[i]));
        rec.push(if data.event()[i] { "1" } else { "0" }.into());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded split into train/validation/test sets.
///
/// Events and censored rows are shuffled separately and each group is cut by
/// the fractions, which keeps the event rate of every part close to the
/// overall rate.
pub fn split(
    data: &SurvivalDataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<[SurvivalDataset; 3]> {
    use rand::seq::SliceRandom;
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(
            "split fractions must be in [0, 1] and sum to 1",
        ));
    }
    let mut parts: [Vec<usize>; 3] = Default::default();
    for (g, flag) in [true, false].into_iter().enumerate() {
        let mut idx: Vec<usize> = (0..data.n_rows())
            .filter(|&i| data.event()[i] == flag)
            .collect();
        idx.shuffle(&mut task_rng(seed, &[g as u64]));
        let m = idx.len() as f64;
        let cut1 = (fractions[0] * m).round() as usize;
        let cut2 = ((fractions[0] + fractions[1]) * m).round() as usize;
        parts[0].extend_from_slice(&idx[..cut1]);
        parts[1].extend_from_slice(&idx[cut1..cut2]);
        parts[2].extend_from_slice(&idx[cut2..]);
    }
    let build = |rows: &mut Vec<usize>| {
        rows.sort_unstable();
        if !rows.iter().any(|&i| data.event()[i]) {
            return Err(Error::invalid("a split part has no events"));
        }
        data.select_rows(rows)
    };
    let [mut a, mut b, mut c] = parts;
    Ok([build(&mut a)?, build(&mut b)?, build(&mut c)?])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> DatasetSchema {
        DatasetSchema::from_json_str(
            r#"{"columns":[
                {"name":"age","role":"feature","type":"numeric"},
                {"name":"sex","role":"feature","type":"categorical","levels":["f","m"]},
                {"name":"id","role":"ignore","type":"numeric"},
                {"name":"t","role":"time","type":"numeric"},
                {"name":"d","role":"event","type":"numeric"}]}"#,
        )
        .unwrap()
    }

    #[test]
    fn schema_validation() {
        let bad = r#"{"columns":[{"name":"x","role":"feature","type":"numeric"},{"name":"t","role":"time","type":"numeric"}]}"#;
        assert!(DatasetSchema::from_json_str(bad).is_err());
        let no_levels = r#"{"columns":[{"name":"x","role":"feature","type":"categorical"},
            {"name":"t","role":"time"},{"name":"d","role":"event"}]}"#;
        assert!(DatasetSchema::from_json_str(no_levels).is_err());
    }

    #[test]
    fn three_row_round_trip() {
        let csv = "id,age,sex,t,d\n1,30,f,5,1\n2,41.5,m,3,0\n3,22,m,7.25,1\n";
        let (d, rep) = read_csv(csv.as_bytes(), &schema(), false).unwrap();
        assert_eq!(rep.total(), 0);
        assert_eq!(d.features().values(), &[30.0, 0.0, 41.5, 1.0, 22.0, 1.0]);
        assert_eq!(d.time(), &[5.0, 3.0, 7.25]);
        assert_eq!(d.event(), &[true, false, true]);
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let s2 = DatasetSchema::for_dataset(&d);
        let (d2, _) = read_csv(buf.as_slice(), &s2, false).unwrap();
        assert_eq!(d, d2);
    }

    #[test]
    fn missing_cells() {
        let csv = "age,sex,id,t,d\n30,f,1,5,1\n,m,2,3,0\n50,,3,7,1\n10,m,4,2,1\n";
        let err = read_csv(csv.as_bytes(), &schema(), false).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
        let (d, rep) = read_csv(csv.as_bytes(), &schema(), true).unwrap();
        assert_eq!(rep.imputed["age"], 1);
        assert_eq!(rep.imputed["sex"], 1);
        // median of 30, 50, 10
        assert_eq!(d.features().get(1, 0), 30.0);
        assert_eq!(d.features().get(2, 1), 1.0);
    }

    #[test]
    fn parse_errors() {
        let s = schema();
        assert!(matches!(
            read_csv("age,sex,id,t,d\n1,f,1,-1,1\n".as_bytes(), &s, false),
            Err(Error::Parse { row: 1, .. })
        ));
        assert!(read_csv("age,sex,id,t,d\n1,f,1,1,2\n".as_bytes(), &s, false).is_err());
        assert!(read_csv("age,sex,id,t,d\nabc,f,1,1,1\n".as_bytes(), &s, false).is_err());
        assert!(read_csv("age,sex,id,t,d\n1,x,1,1,1\n".as_bytes(), &s, false).is_err());
    }

    #[test]
    fn split_behaviour() {
        let spec = SyntheticSpec {
            n: 400,
            coefficients: vec![0.5, -0.5],
            censoring_rate: 0.4,
            seed: 3,
            ..SyntheticSpec::default()
        };
        let d = generate_synthetic(&spec).unwrap();
        assert!(split(&d, [0.5, 0.3, 0.3], 1).is_err());
        let a = split(&d, [0.6, 0.2, 0.2], 1).unwrap();
        let b = split(&d, [0.6, 0.2, 0.2], 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().map(|p| p.n_rows()).sum::<usize>(), 400);
        let rate = |p: &SurvivalDataset| p.n_events() as f64 / p.n_rows() as f64;
        for part in &a {
            assert!((rate(part) - rate(&d)).abs() <= 0.05);
        }
    }
}
