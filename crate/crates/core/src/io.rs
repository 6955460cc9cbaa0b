//! Small helpers shared by the CSV writers and readers.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Round-trippable decimal with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// A parsed CSV file: header names plus string rows.
pub struct Table {
    pub file: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Table> {
        let file = path
            .file_name()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(path)?;
        let mut lines = text.lines().filter(|l| !l.is_empty());
        let header: Vec<String> = lines
            .next()
            .ok_or_else(|| Error::malformed(&file, "empty file"))?
            .split(',')
            .map(str::to_owned)
            .collect();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(str::to_owned).collect();
            if row.len() != header.len() {
                return Err(Error::malformed(
                    &file,
                    format!("row {} has {} fields, header has {}", k + 1, row.len(), header.len()),
                ));
            }
            rows.push(row);
        }
        Ok(Table { file, header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::malformed(&self.file, format!("missing column `{name}`")))
    }

    pub fn parse<T: std::str::FromStr>(&self, row: usize, col: usize) -> Result<T> {
        self.rows[row][col].parse().map_err(|_| {
            Error::malformed(
                &self.file,
                format!("row {}: cannot parse `{}` in column `{}`", row + 1, self.rows[row][col], self.header[col]),
            )
        })
    }

    /// Empty cells parse as `None`.
    pub fn parse_opt(&self, row: usize, col: usize) -> Result<Option<f64>> {
        if self.rows[row][col].is_empty() {
            Ok(None)
        } else {
            self.parse(row, col).map(Some)
        }
    }
}
