use std::path::Path;

use crate::error::Result;

/// One CSV cell. `Empty` marks a metric that was not measured or is
/// undefined; it is written as an empty field, never as zero.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(usize),
    Float(f64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(v) => v.to_string(),
            Cell::Float(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// A CSV file in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    /// File name relative to the output directory.
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    /// Per-round telemetry whose float columns may be EMA-smoothed on output.
    pub smoothable: bool,
}

impl Table {
    pub fn new(name: impl Into<String>, headers: Vec<String>, smoothable: bool) -> Self {
        Self { name: name.into(), headers, rows: Vec::new(), smoothable }
    }

    pub fn column(&self, header: &str) -> Option<Vec<Cell>> {
        let j = self.headers.iter().position(|h| h == header)?;
        Some(self.rows.iter().map(|r| r[j].clone()).collect())
    }

    /// Float values of a column, `None` for empty cells.
    pub fn floats(&self, header: &str) -> Option<Vec<Option<f64>>> {
        Some(
            self.column(header)?
                .into_iter()
                .map(|c| match c {
                    Cell::Float(v) => Some(v),
                    Cell::Int(v) => Some(v as f64),
                    _ => None,
                })
                .collect(),
        )
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Copy with every float column smoothed; empty cells stay empty and do
    /// not advance the average.
    pub fn smoothed(&self, beta: f64) -> Table {
        let mut out = self.clone();
        for j in 0..self.headers.len() {
            let mut state: Option<f64> = None;
            for row in out.rows.iter_mut() {
                if let Cell::Float(x) = row[j] {
                    let y = match state {
                        None => x,
                        Some(prev) => beta * prev + (1.0 - beta) * x,
                    };
                    state = Some(y);
                    row[j] = Cell::Float(y);
                }
            }
        }
        out
    }
}

/// `y_0 = x_0`, `y_t = β y_{t−1} + (1 − β) x_t`.
pub fn smooth_ema(series: &[f64], beta: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(series.len());
    for &x in series {
        let y = match out.last() {
            None => x,
            Some(&prev) => beta * prev + (1.0 - beta) * x,
        };
        out.push(y);
    }
    out
}

/// Flattens a TOML value into `dotted.key=value` lines.
pub(crate) fn flatten_toml(prefix: &str, value: &toml::Value, out: &mut Vec<(String, String)>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten_toml(&key, v, out);
            }
        }
        toml::Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}
