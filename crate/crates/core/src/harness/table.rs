use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kfp::EvolveSeries;
use crate::moments::EnsembleMoments;

/// Output encoding for series files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

impl Format {
    pub fn extension(&self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

/// A named numeric table, written as CSV or as a JSON object of columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write(&self, path: &Path, format: Format) -> Result<()> {
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_path(path)?;
                w.write_record(&self.columns)?;
                for r in &self.rows {
                    w.write_record(r.iter().map(|x| format!("{x:e}")))?;
                }
                w.flush()?;
            }
            Format::Json => {
                let mut obj = serde_json::Map::new();
                for (i, c) in self.columns.iter().enumerate() {
                    let col: Vec<f64> = self.rows.iter().map(|r| r[i]).collect();
                    obj.insert(c.clone(), serde_json::to_value(col)?);
                }
                std::fs::write(path, serde_json::to_string_pretty(&obj)? + "\n")?;
            }
        }
        Ok(())
    }

    /// Columns `[k,] t, mean_i.., cov_i_j..` (upper triangle).
    pub fn from_moments(m: &EnsembleMoments) -> Self {
        let dim = m.means.first().map_or(0, |x| x.len());
        let mut cols = Vec::new();
        if m.steps.is_some() {
            cols.push("k".to_string());
        }
        cols.push("t".into());
        cols.extend((0..dim).map(|i| format!("mean_{i}")));
        for i in 0..dim {
            for j in i..dim {
                cols.push(format!("cov_{i}_{j}"));
            }
        }
        let mut t = Table::new(cols);
        for r in 0..m.len() {
            let mut row = Vec::new();
            if let Some(s) = &m.steps {
                row.push(s[r] as f64);
            }
            row.push(m.times[r]);
            row.extend(m.means[r].iter());
            for i in 0..dim {
                for j in i..dim {
                    row.push(m.covs[r][(i, j)]);
                }
            }
            t.push(row);
        }
        t
    }

    /// Columns `t, norm_h_sq[, H]`.
    pub fn from_evolve(s: &EvolveSeries) -> Self {
        let mut cols = vec!["t", "norm_h_sq"];
        if s.lyapunov.is_some() {
            cols.push("H");
        }
        let mut t = Table::new(cols);
        for k in 0..s.times.len() {
            let mut row = vec![s.times[k], s.norm_sq[k]];
            if let Some(h) = &s.lyapunov {
                row.push(h[k]);
            }
            t.push(row);
        }
        t
    }
}
