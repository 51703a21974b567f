//! Weighted datasets and their CSV representation.
//!
//! The on-disk format is a plain numeric CSV with header
//! `x0,...,xk,y,weight`, one newline-terminated row per record, values as
//! decimal literals with enough digits to round-trip exactly.

use std::path::Path;

use crate::error::{Error, Result};

/// One training record: input vector, target, and a positive loss weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub x: Vec<f64>,
    pub y: f64,
    pub weight: f64,
}

/// A sequence of weighted records with a homogeneous input dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    records: Vec<Record>,
    input_dim: usize,
}

impl WeightedDataset {
    /// Build a dataset, validating that every weight is strictly positive,
    /// every value finite, and all inputs share one dimension.
    pub fn new(records: Vec<Record>) -> Result<WeightedDataset> {
        let input_dim = match records.first() {
            Some(r) => r.x.len(),
            None => return Err(Error::DegenerateData("dataset has no records".into())),
        };
        for (i, r) in records.iter().enumerate() {
            if r.x.len() != input_dim {
                return Err(Error::InvalidArgument(format!(
                    "record {i} has input dimension {}, expected {input_dim}",
                    r.x.len()
                )));
            }
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "record {i} has non-positive weight {}",
                    r.weight
                )));
            }
            if r.x.iter().any(|v| !v.is_finite()) || !r.y.is_finite() {
                return Err(Error::InvalidArgument(format!("record {i} has non-finite values")));
            }
        }
        Ok(WeightedDataset { records, input_dim })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    /// Total loss weight.
    pub fn weight_sum(&self) -> f64 {
        self.records.iter().map(|r| r.weight).sum()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for i in 0..self.input_dim {
            out.push_str(&format!("x{i},"));
        }
        out.push_str("y,weight\n");
        for r in &self.records {
            for v in &r.x {
                out.push_str(&format!("{:.16e},", v));
            }
            out.push_str(&format!("{:.16e},{:.16e}\n", r.y, r.weight));
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<WeightedDataset> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse { what: "dataset", line: 0, message: "empty file".into() })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 3 || cols[cols.len() - 2] != "y" || cols[cols.len() - 1] != "weight" {
            return Err(Error::Parse {
                what: "dataset",
                line: 0,
                message: format!("expected header x0,...,y,weight, got {header:?}"),
            });
        }
        let dim = cols.len() - 2;
        let mut records = Vec::new();
        for (ln, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 2 {
                return Err(Error::Parse {
                    what: "dataset",
                    line: ln,
                    message: format!("expected {} fields, got {}", dim + 2, fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.parse().map_err(|e| Error::Parse {
                    what: "dataset",
                    line: ln,
                    message: format!("bad number {s:?}: {e}"),
                })
            };
            let x = fields[..dim].iter().map(|s| parse(s)).collect::<Result<Vec<f64>>>()?;
            records.push(Record { x, y: parse(fields[dim])?, weight: parse(fields[dim + 1])? });
        }
        WeightedDataset::new(records)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<WeightedDataset> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightedDataset {
        WeightedDataset::new(vec![
            Record { x: vec![0.25, -1.5], y: 2.0, weight: 1.0 },
            Record { x: vec![1.0 / 3.0, 0.1], y: -0.75, weight: 0.2 },
        ])
        .unwrap()
    }

    #[test]
    fn validates_weights_and_dimensions() {
        let bad_weight =
            WeightedDataset::new(vec![Record { x: vec![0.0], y: 0.0, weight: 0.0 }]);
        assert!(bad_weight.is_err());

        let bad_dim = WeightedDataset::new(vec![
            Record { x: vec![0.0], y: 0.0, weight: 1.0 },
            Record { x: vec![0.0, 1.0], y: 0.0, weight: 1.0 },
        ]);
        assert!(bad_dim.is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = sample();
        let text = ds.to_csv_string();
        assert!(text.starts_with("x0,x1,y,weight\n"));
        assert!(text.ends_with('\n'));
        let back = WeightedDataset::from_csv_str(&text).unwrap();
        assert_eq!(ds, back);
        for (a, b) in ds.records().iter().zip(back.records().iter()) {
            assert_eq!(a.y.to_bits(), b.y.to_bits());
            assert_eq!(a.weight.to_bits(), b.weight.to_bits());
        }
    }

    #[test]
    fn rejects_malformed_header() {
        assert!(WeightedDataset::from_csv_str("a,b,c\n1,2,3\n").is_err());
        assert!(WeightedDataset::from_csv_str("").is_err());
    }
}
