//! One-hot encoding of categorical features.

use serde::{Deserialize, Serialize};

use crate::data::{FeatureKind, FeatureSpec, FeatureTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedColumn {
    /// Index of the source feature.
    pub source: usize,
    /// Level index for indicator columns.
    pub level: Option<usize>,
    /// `feature` or `feature=level`.
    pub name: String,
}

/// Mapping between feature rows and the encoded design.
///
/// With `drop_first` the first level of each categorical feature is the
/// reference and gets no column (model fitting); without it every level gets
/// an indicator (knockoff sampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoding {
    pub features: Vec<FeatureSpec>,
    pub drop_first: bool,
    pub columns: Vec<EncodedColumn>,
}

impl Encoding {
    pub fn new(schema: &[FeatureSpec], drop_first: bool) -> Self {
        let mut columns = Vec::new();
        for (j, spec) in schema.iter().enumerate() {
            match &spec.kind {
                FeatureKind::Numeric => columns.push(EncodedColumn {
                    source: j,
                    level: None,
                    name: spec.name.clone(),
                }),
                FeatureKind::Categorical { levels } => {
                    let start = usize::from(drop_first);
                    for (l, level) in levels.iter().enumerate().skip(start) {
                        columns.push(EncodedColumn {
                            source: j,
                            level: Some(l),
                            name: format!("{}={}", spec.name, level),
                        });
                    }
                }
            }
        }
        Self {
            features: schema.to_vec(),
            drop_first,
            columns,
        }
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Append the encoding of `row` to `out`.
    pub fn encode_into(&self, row: &[f64], out: &mut Vec<f64>) -> Result<()> {
        if row.len() != self.features.len() {
            return Err(Error::invalid(format!(
                "row has {} values, encoding expects {}",
                row.len(),
                self.features.len()
            )));
        }
        for (spec, &v) in self.features.iter().zip(row) {
            spec.check_value(v)?;
        }
        for col in &self.columns {
            let v = row[col.source];
            out.push(match col.level {
                None => v,
                Some(l) => f64::from(u8::from(v as usize == l)),
            });
        }
        Ok(())
    }

    pub fn encode_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.width());
        self.encode_into(row, &mut out)?;
        Ok(out)
    }

    /// Row-major `n × width` design matrix.
    pub fn encode_table(&self, table: &FeatureTable) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(table.n_rows() * self.width());
        for row in table.rows() {
            self.encode_into(row, &mut out)?;
        }
        Ok(out)
    }

    /// Map an encoded row back to feature values. Indicator blocks are
    /// resolved by argmax; with `drop_first`, a block with no positive entry
    /// maps to the reference level.
    pub fn decode_row(&self, encoded: &[f64]) -> Result<Vec<f64>> {
        if encoded.len() != self.width() {
            return Err(Error::invalid("encoded row has wrong width"));
        }
        let mut row = vec![0.0; self.features.len()];
        let mut best: Vec<f64> = vec![f64::NEG_INFINITY; self.features.len()];
        if self.drop_first {
            for (j, spec) in self.features.iter().enumerate() {
                if spec.is_categorical() {
                    best[j] = 0.0;
                }
            }
        }
        for (col, &v) in self.columns.iter().zip(encoded) {
            match col.level {
                None => row[col.source] = v,
                Some(l) => {
                    if v > best[col.source] {
                        best[col.source] = v;
                        row[col.source] = l as f64;
                    }
                }
            }
        }
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<FeatureSpec> {
        vec![
            FeatureSpec::categorical("sex", vec!["f", "m"]),
            FeatureSpec::numeric("age"),
            FeatureSpec::categorical("region", vec!["n", "s", "e"]),
        ]
    }

    #[test]
    fn reference_coding_widths() {
        let enc = Encoding::new(&schema(), true);
        assert_eq!(enc.names(), vec!["sex=m", "age", "region=s", "region=e"]);
        assert_eq!(
            enc.encode_row(&[1.0, 40.0, 2.0]).unwrap(),
            vec![1.0, 40.0, 0.0, 1.0]
        );
        let full = Encoding::new(&schema(), false);
        assert_eq!(full.width(), 6);
    }

    #[test]
    fn decode_inverts_encode() {
        for drop_first in [true, false] {
            let enc = Encoding::new(&schema(), drop_first);
            for row in [[0.0, 1.5, 0.0], [1.0, -2.0, 2.0], [0.0, 3.0, 1.0]] {
                let e = enc.encode_row(&row).unwrap();
                assert_eq!(enc.decode_row(&e).unwrap(), row.to_vec());
            }
        }
    }

    #[test]
    fn unknown_level_rejected() {
        let enc = Encoding::new(&schema(), true);
        assert!(matches!(
            enc.encode_row(&[3.0, 1.0, 0.0]),
            Err(Error::UnknownLevel { .. })
        ));
    }
}
