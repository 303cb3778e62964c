//! Keyed numeric CSV tables and deterministic number formatting.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const UNIT_ID: &str = "unit_id";

/// Shortest representation that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// A CSV file with a `unit_id` column and numeric value columns.
#[derive(Debug, Clone)]
pub struct KeyedTable {
    pub path: PathBuf,
    /// Value column names in file order (`unit_id` excluded).
    pub columns: Vec<String>,
    pub rows: Vec<KeyedRow>,
}

#[derive(Debug, Clone)]
pub struct KeyedRow {
    pub id: String,
    /// 1-based line number in the file (the header is line 1).
    pub line: u64,
    pub values: Vec<f64>,
}

impl KeyedTable {
    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::csv(path, e))?;
        let headers = rdr.headers().map_err(|e| CliError::csv(path, e))?.clone();
        let id_col = headers.iter().position(|h| h == UNIT_ID).ok_or_else(|| {
            CliError::Data(format!("{}: header lacks a `{UNIT_ID}` column", path.display()))
        })?;
        let columns: Vec<String> =
            headers.iter().enumerate().filter(|&(j, _)| j != id_col).map(|(_, h)| h.to_string()).collect();
        if let Some(dup) = columns.iter().enumerate().find(|(j, c)| columns[..*j].contains(c)) {
            return Err(CliError::Data(format!("{}: duplicate column `{}`", path.display(), dup.1)));
        }
        let mut rows = Vec::new();
        let mut seen: HashMap<String, u64> = HashMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| CliError::csv(path, e))?;
            let line = rec.position().map_or(0, |p| p.line());
            let id = rec[id_col].to_string();
            if id.is_empty() {
                return Err(CliError::Data(format!("{} line {line}: missing {UNIT_ID}", path.display())));
            }
            if let Some(first) = seen.insert(id.clone(), line) {
                return Err(CliError::Data(format!(
                    "{}: duplicate {UNIT_ID} `{id}` on lines {first} and {line}",
                    path.display()
                )));
            }
            let mut values = Vec::with_capacity(columns.len());
            for (j, cell) in rec.iter().enumerate().filter(|&(j, _)| j != id_col) {
                let v: f64 = cell.parse().map_err(|_| {
                    CliError::Data(format!(
                        "{} line {line}: column `{}` value `{cell}` is not a number",
                        path.display(),
                        &headers[j]
                    ))
                })?;
                values.push(v);
            }
            rows.push(KeyedRow { id, line, values });
        }
        Ok(KeyedTable { path: path.to_path_buf(), columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }
}

/// Sort key for unit ids: numeric when every id is an integer, else lexicographic.
pub fn id_order(ids: &mut [String]) {
    if ids.iter().all(|s| s.parse::<i64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<i64>().unwrap_or_default());
    } else {
        ids.sort();
    }
}

pub struct CsvOut {
    path: PathBuf,
    w: csv::Writer<std::fs::File>,
}

impl CsvOut {
    pub fn create(path: PathBuf, header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
        w.write_record(header).map_err(|e| CliError::csv(&path, e))?;
        Ok(CsvOut { path, w })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|e| CliError::csv(&self.path, e))
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

pub fn write_json<T: serde::Serialize>(path: PathBuf, value: &T, what: &'static str) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Serialize { what, message: e.to_string() })?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::io(path, e))
}
