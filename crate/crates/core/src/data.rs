//! Tabular telemetry: one column per observed metric node, one row per sample.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("row {row}, column `{column}`: value `{value}` is not a finite number")]
    BadValue { row: usize, column: String, value: String },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("column `{column}` has {got} values, expected {expected}")]
    Ragged { column: String, got: usize, expected: usize },
}

pub type Result<T> = std::result::Result<T, DataError>;

/// Column-major sample table.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TelemetryDataset {
    pub columns: Vec<String>,
    data: Vec<Vec<f64>>,
}

impl TelemetryDataset {
    pub fn new(columns: Vec<String>, data: Vec<Vec<f64>>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(DataError::DuplicateColumn(c.clone()));
            }
        }
        let expected = data.first().map_or(0, Vec::len);
        for (c, col) in columns.iter().zip(&data) {
            if col.len() != expected {
                return Err(DataError::Ragged { column: c.clone(), got: col.len(), expected });
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(DataError::BadValue {
                    row,
                    column: c.clone(),
                    value: col[row].to_string(),
                });
            }
        }
        let mut data = data;
        data.resize(columns.len(), Vec::new());
        Ok(Self { columns, data })
    }

    pub fn empty(columns: Vec<String>) -> Self {
        let data = vec![Vec::new(); columns.len()];
        Self { columns, data }
    }

    pub fn from_rows(columns: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let mut data = vec![Vec::with_capacity(rows.len()); columns.len()];
        for row in rows {
            for (j, v) in row.iter().enumerate().take(columns.len()) {
                data[j].push(*v);
            }
        }
        Self::new(columns, data)
    }

    pub fn n_rows(&self) -> usize {
        self.data.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.index_of(name).map(|i| self.data[i].as_slice())
    }

    pub fn column_at(&self, i: usize) -> &[f64] {
        &self.data[i]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.data.iter().map(|c| c[r]).collect()
    }

    pub fn is_constant(&self, i: usize) -> bool {
        let c = &self.data[i];
        c.iter().all(|v| *v == c[0])
    }

    /// A dataset with the named columns, in the given order.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let mut data = Vec::with_capacity(names.len());
        for n in names {
            let col = self.column(n).ok_or_else(|| DataError::UnknownColumn(n.to_string()))?;
            data.push(col.to_vec());
        }
        Ok(Self { columns: names.iter().map(|s| s.to_string()).collect(), data })
    }

    /// Rows `start..end`.
    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        Self {
            columns: self.columns.clone(),
            data: self.data.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        let c = self.column(name)?;
        (!c.is_empty()).then(|| c.iter().sum::<f64>() / c.len() as f64)
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        let mut buf = Vec::with_capacity(self.columns.len());
        for r in 0..self.n_rows() {
            buf.clear();
            buf.extend(self.data.iter().map(|c| c[r].to_string()));
            w.write_record(&buf).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }

    pub fn from_csv(bytes: &[u8]) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut data = vec![Vec::new(); columns.len()];
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.trim().parse().map_err(|_| DataError::BadValue {
                    row,
                    column: columns[j].clone(),
                    value: field.to_string(),
                })?;
                data[j].push(v);
            }
        }
        Self::new(columns, data)
    }
}
