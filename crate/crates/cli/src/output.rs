//! Result tables and how they are written to disk.

use std::fmt;
use std::path::{Path, PathBuf};

use cutpost::io::{fmt_f64, header, write_rows};
use cutpost::{Error, Result};
use serde::{Serialize, Serializer};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
    Empty,
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Float(v) => f.write_str(&fmt_f64(*v)),
            Cell::Text(s) => f.write_str(s),
            Cell::Empty => Ok(()),
        }
    }
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Cell::Int(v) => s.serialize_u64(*v),
            Cell::Float(v) if v.is_finite() => s.serialize_f64(*v),
            Cell::Float(v) => s.serialize_str(&fmt_f64(*v)),
            Cell::Text(t) => s.serialize_str(t),
            Cell::Empty => s.serialize_none(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
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

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Table {
            name,
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let rows: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(ToString::to_string).collect()).collect();
        write_rows(&self.columns, &rows)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Serialize)]
struct JsonTable<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a serde_json::Value,
    seed: u64,
    columns: &'a [&'static str],
    rows: &'a [Vec<Cell>],
}

/// Writes each table as `<name>.csv` (comment header, then the table) or
/// `<name>.json`.
pub fn write_tables(dir: &Path, tables: &[Table], config: &serde_json::Value, seed: u64, format: Format) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let config_line = serde_json::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    let mut paths = Vec::new();
    for t in tables {
        let (path, text) = match format {
            Format::Csv => {
                let mut text = header(crate::TOOL, crate::VERSION, &config_line, seed);
                text.push_str(&t.to_csv());
                (dir.join(format!("{}.csv", t.name)), text)
            }
            Format::Json => {
                let doc = JsonTable {
                    tool: crate::TOOL,
                    version: crate::VERSION,
                    config,
                    seed,
                    columns: &t.columns,
                    rows: &t.rows,
                };
                let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?;
                text.push('\n');
                (dir.join(format!("{}.json", t.name)), text)
            }
        };
        std::fs::write(&path, text)?;
        paths.push(path);
    }
    Ok(paths)
}
