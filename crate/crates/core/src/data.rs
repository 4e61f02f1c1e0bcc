//! Training data container and CSV ingestion.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs (rows are samples), responses and optional variable names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let x = if x.is_standard_layout() { x } else { x.as_standard_layout().into_owned() };
        let ds = Dataset { x, y, names: None };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.d() {
            return Err(Error::DimensionMismatch {
                expected: self.d(),
                got: names.len(),
            });
        }
        self.names = Some(names);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, d) = self.x.dim();
        if n < 2 {
            return Err(Error::InvalidDataset(format!("need at least 2 samples, got {n}")));
        }
        if d < 1 {
            return Err(Error::InvalidDataset("need at least one input variable".into()));
        }
        if self.y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.y.len(),
            });
        }
        if let Some((i, _)) = self.x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite input at row {}, column {}",
                i / d + 1,
                i % d + 1
            )));
        }
        if let Some(i) = self.y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!("non-finite response at row {}", i + 1)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn variable_name(&self, a: usize) -> String {
        match &self.names {
            Some(names) => names[a].clone(),
            None => format!("x{}", a + 1),
        }
    }

    /// Keep only the listed columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Array2<f64> {
        self.x.select(Axis(1), cols).as_standard_layout().into_owned()
    }

    pub fn y_mean(&self) -> f64 {
        self.y.mean().unwrap_or(0.0)
    }
}

/// `‖v‖ₙ² = (1/n) Σ vᵢ²`
pub fn norm_n_sq(v: ArrayView1<f64>) -> f64 {
    v.dot(&v) / v.len() as f64
}

pub fn norm_n(v: ArrayView1<f64>) -> f64 {
    norm_n_sq(v).sqrt()
}

pub fn inner_n(u: ArrayView1<f64>, v: ArrayView1<f64>) -> f64 {
    u.dot(&v) / u.len() as f64
}

pub fn rmse(pred: ArrayView1<f64>, truth: ArrayView1<f64>) -> f64 {
    let r = &pred - &truth;
    norm_n(r.view())
}

/// Population standard deviation.
pub fn std_dev(v: ArrayView1<f64>) -> f64 {
    let m = v.mean().unwrap_or(0.0);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// A parsed numeric table with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Array2<f64>,
}

impl Table {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Split into a dataset using `target` (or the last column) as the response.
    pub fn into_dataset(self, target: Option<&str>) -> Result<Dataset> {
        let t = match target {
            Some(name) => self
                .column_index(name)
                .ok_or_else(|| Error::Csv(format!("target column '{name}' not found in header")))?,
            None => self.header.len() - 1,
        };
        if self.header.len() < 2 {
            return Err(Error::Csv("need at least one input column and a response".into()));
        }
        let cols: Vec<usize> = (0..self.header.len()).filter(|&c| c != t).collect();
        let x = self.rows.select(Axis(1), &cols);
        let y = self.rows.column(t).to_owned();
        let names = cols.iter().map(|&c| self.header[c].clone()).collect();
        Dataset::new(x, y)?.with_names(names)
    }
}

/// Read a comma-separated numeric table. The first row is the header.
pub fn read_csv(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Csv(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(Error::Csv("no rows: missing header".into()));
    }
    let width = header.len();
    let mut values = Vec::new();
    let mut nrows = 0usize;
    for (idx, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = idx + 2;
        let rec = rec.map_err(|e| Error::Csv(format!("line {line}: {e}")))?;
        if rec.len() == 1 && rec.get(0).is_some_and(str::is_empty) {
            continue;
        }
        if rec.len() != width {
            return Err(Error::Csv(format!(
                "line {line}: expected {width} fields, found {}",
                rec.len()
            )));
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Csv(format!("line {line}, column {}: not a number: '{field}'", c + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::Csv(format!(
                    "line {line}, column {}: non-finite value '{field}'",
                    c + 1
                )));
            }
            values.push(v);
        }
        nrows += 1;
    }
    if nrows == 0 {
        return Err(Error::Csv("no rows".into()));
    }
    let rows = Array2::from_shape_vec((nrows, width), values)
        .map_err(|e| Error::Csv(e.to_string()))?;
    Ok(Table { header, rows })
}

/// Write inputs and response as CSV with full round-trip precision.
pub fn write_csv(path: &Path, data: &Dataset, target_name: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    let mut header: Vec<String> = (0..data.d()).map(|a| data.variable_name(a)).collect();
    header.push(target_name.to_string());
    w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
    for (row, y) in data.x.outer_iter().zip(data.y.iter()) {
        let mut rec: Vec<String> = row.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(*y));
        w.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}
