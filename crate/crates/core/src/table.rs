//! Columnar dataset flowing through preprocessing and feature engineering.
//!
//! Numeric cells are `f64`; a missing reading is stored as NaN, which no valid
//! metric ever takes. Text columns carry identifiers (UE, gNB, scenario).

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Marker for a missing numeric cell.
pub const MISSING: f64 = f64::NAN;

/// Columns that are always read back as text, even when every value looks numeric.
pub const TEXT_KEYS: [&str; 3] = ["gnb_id", "scenario", "ue_id"];

#[inline]
pub fn is_missing(v: f64) -> bool {
    v.is_nan()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnData {
    Numeric(Vec<f64>),
    Text(Vec<String>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Numeric(v) => v.len(),
            ColumnData::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DataTable {
    columns: Vec<Column>,
    row_count: usize,
}

impl PartialEq for DataTable {
    // NaN-aware: two missing cells compare equal.
    fn eq(&self, other: &Self) -> bool {
        self.row_count == other.row_count
            && self.columns.len() == other.columns.len()
            && self.columns.iter().zip(&other.columns).all(|(a, b)| {
                a.name == b.name
                    && match (&a.data, &b.data) {
                        (ColumnData::Numeric(x), ColumnData::Numeric(y)) => x
                            .iter()
                            .zip(y)
                            .all(|(p, q)| p.to_bits() == q.to_bits() || (p.is_nan() && q.is_nan())),
                        (ColumnData::Text(x), ColumnData::Text(y)) => x == y,
                        _ => false,
                    }
            })
    }
}

impl DataTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn column_count(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|c| c.name.as_str())
    }

    pub fn numeric_names(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| matches!(c.data, ColumnData::Numeric(_)))
            .map(|c| c.name.clone())
            .collect()
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.position(name).is_some()
    }

    fn position(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    fn push(&mut self, name: impl Into<String>, data: ColumnData) -> Result<()> {
        let name = name.into();
        if self.has_column(&name) {
            return Err(Error::DuplicateColumn(name));
        }
        if self.columns.is_empty() {
            self.row_count = data.len();
        } else if data.len() != self.row_count {
            return Err(Error::RaggedColumn { name, expected: self.row_count, got: data.len() });
        }
        self.columns.push(Column { name, data });
        Ok(())
    }

    pub fn push_numeric(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        self.push(name, ColumnData::Numeric(values))
    }

    pub fn push_text(&mut self, name: impl Into<String>, values: Vec<String>) -> Result<()> {
        self.push(name, ColumnData::Text(values))
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.position(name)
            .map(|i| &self.columns[i])
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn num(&self, name: &str) -> Result<&[f64]> {
        match &self.column(name)?.data {
            ColumnData::Numeric(v) => Ok(v),
            ColumnData::Text(_) => Err(Error::NotNumeric(name.to_string())),
        }
    }

    pub fn num_mut(&mut self, name: &str) -> Result<&mut Vec<f64>> {
        let i = self.position(name).ok_or_else(|| Error::UnknownColumn(name.to_string()))?;
        match &mut self.columns[i].data {
            ColumnData::Numeric(v) => Ok(v),
            ColumnData::Text(_) => Err(Error::NotNumeric(name.to_string())),
        }
    }

    pub fn text(&self, name: &str) -> Result<&[String]> {
        match &self.column(name)?.data {
            ColumnData::Text(v) => Ok(v),
            ColumnData::Numeric(_) => Err(Error::Config(format!("column `{name}` is not text"))),
        }
    }

    /// Replaces an existing numeric column in place.
    pub fn set_numeric(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.row_count {
            return Err(Error::RaggedColumn {
                name: name.to_string(),
                expected: self.row_count,
                got: values.len(),
            });
        }
        *self.num_mut(name)? = values;
        Ok(())
    }

    pub fn remove_column(&mut self, name: &str) -> Option<Column> {
        let i = self.position(name)?;
        let col = self.columns.remove(i);
        if self.columns.is_empty() {
            self.row_count = 0;
        }
        Some(col)
    }

    /// New table with the given columns in the given order.
    pub fn project(&self, names: &[&str]) -> Result<DataTable> {
        let mut out = DataTable::new();
        for n in names {
            let c = self.column(n)?;
            out.push(c.name.clone(), c.data.clone())?;
        }
        Ok(out)
    }

    /// New table holding `rows` (in that order) of every column.
    pub fn select_rows(&self, rows: &[usize]) -> DataTable {
        let columns = self
            .columns
            .iter()
            .map(|c| Column {
                name: c.name.clone(),
                data: match &c.data {
                    ColumnData::Numeric(v) => ColumnData::Numeric(rows.iter().map(|&r| v[r]).collect()),
                    ColumnData::Text(v) => ColumnData::Text(rows.iter().map(|&r| v[r].clone()).collect()),
                },
            })
            .collect();
        DataTable { columns, row_count: rows.len() }
    }

    /// Contiguous row ranges sharing the same value of a text column, in order of
    /// appearance. Without the column the whole table is one group.
    pub fn groups(&self, key: &str) -> Vec<(String, std::ops::Range<usize>)> {
        let Ok(keys) = self.text(key) else {
            return vec![(String::new(), 0..self.row_count)];
        };
        let mut out: Vec<(String, std::ops::Range<usize>)> = Vec::new();
        for (i, k) in keys.iter().enumerate() {
            match out.last_mut() {
                Some((last, r)) if last == k => r.end = i + 1,
                _ => out.push((k.clone(), i..i + 1)),
            }
        }
        out
    }

    pub fn write_csv_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.columns.iter().map(|c| c.name.as_str()))?;
        let mut buf = Vec::with_capacity(self.columns.len());
        for r in 0..self.row_count {
            buf.clear();
            for c in &self.columns {
                buf.push(match &c.data {
                    ColumnData::Numeric(v) if is_missing(v[r]) => String::new(),
                    ColumnData::Numeric(v) => format!("{}", v[r]),
                    ColumnData::Text(v) => v[r].clone(),
                });
            }
            wr.write_record(&buf)?;
        }
        wr.flush().map_err(io_err("<csv writer>"))?;
        Ok(())
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_csv_to(&mut out)?;
        Ok(out)
    }

    pub fn read_csv_from<R: Read>(r: R) -> Result<DataTable> {
        let mut rd = csv::Reader::from_reader(r);
        let headers: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let mut cells: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
        for rec in rd.records() {
            let rec = rec?;
            for (i, f) in rec.iter().enumerate() {
                cells[i].push(f.to_string());
            }
        }
        let mut table = DataTable::new();
        for (name, col) in headers.into_iter().zip(cells) {
            let numeric = !TEXT_KEYS.contains(&name.as_str())
                && col.iter().all(|s| s.is_empty() || s.parse::<f64>().is_ok());
            if numeric {
                let v = col
                    .iter()
                    .map(|s| if s.is_empty() { MISSING } else { s.parse().unwrap_or(MISSING) })
                    .collect();
                table.push_numeric(name, v)?;
            } else {
                table.push_text(name, col)?;
            }
        }
        Ok(table)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let bytes = self.to_csv_bytes()?;
        std::fs::write(path, bytes).map_err(io_err(path))
    }

    pub fn read_csv(path: &Path) -> Result<DataTable> {
        let f = std::fs::File::open(path).map_err(io_err(path))?;
        Self::read_csv_from(std::io::BufReader::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> DataTable {
        let mut t = DataTable::new();
        t.push_text("ue_id", vec!["a".into(), "a".into(), "b".into()]).unwrap();
        t.push_numeric("x", vec![1.5, MISSING, -3.0]).unwrap();
        t
    }

    #[test]
    fn csv_round_trip_keeps_missing_and_text() {
        let t = sample();
        let back = DataTable::read_csv_from(&t.to_csv_bytes().unwrap()[..]).unwrap();
        assert_eq!(back, t);
        assert!(is_missing(back.num("x").unwrap()[1]));
    }

    #[test]
    fn ragged_and_duplicate_columns_rejected() {
        let mut t = sample();
        assert!(matches!(t.push_numeric("y", vec![1.0]), Err(Error::RaggedColumn { .. })));
        assert!(matches!(t.push_numeric("x", vec![0.0; 3]), Err(Error::DuplicateColumn(_))));
    }

    #[test]
    fn groups_are_contiguous_runs() {
        let g = sample().groups("ue_id");
        assert_eq!(g, vec![("a".to_string(), 0..2), ("b".to_string(), 2..3)]);
    }
}
