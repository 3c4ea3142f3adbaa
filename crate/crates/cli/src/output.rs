//! Output directory handling: atomic writes, number formatting, manifest.

use serde_json::{Number, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::CliError;

/// Which families of files to emit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// 17 significant digits, so values round-trip exactly.
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

/// JSON number with 17 significant digits; non-finite values become `null`.
pub fn num(v: f64) -> Value {
    if v.is_finite() {
        Value::Number(Number::from_str(&fmt(v)).expect("formatted float is valid JSON"))
    } else {
        Value::Null
    }
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

pub fn opt(v: Option<f64>) -> Value {
    v.map_or(Value::Null, num)
}

/// Tabular output assembled in memory, written in one go.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn with_header(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn push_nums(&mut self, row: &[f64]) {
        self.push(row.iter().map(|&v| fmt(v)).collect());
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory csv");
        for r in &self.rows {
            w.write_record(r).expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }
}

/// Output directory plus the list of files written so far.
pub struct OutDir {
    root: PathBuf,
    formats: Vec<Format>,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path, formats: &[Format]) -> Result<Self, CliError> {
        std::fs::create_dir_all(root).map_err(|e| CliError::io(format!("creating {}", root.display()), e))?;
        Ok(Self {
            root: root.to_path_buf(),
            formats: formats.to_vec(),
            written: Vec::new(),
        })
    }

    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    pub fn manifest(&self) -> &[String] {
        &self.written
    }

    /// Temp file in the target directory, then rename over the destination.
    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let dest = self.root.join(name);
        let ctx = || format!("writing {}", dest.display());
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root).map_err(|e| CliError::io(ctx(), e))?;
        tmp.write_all(bytes).map_err(|e| CliError::io(ctx(), e))?;
        tmp.as_file().sync_all().map_err(|e| CliError::io(ctx(), e))?;
        tmp.persist(&dest).map_err(|e| CliError::io(ctx(), e.error))?;
        if !self.written.iter().any(|w| w == name) {
            self.written.push(name.to_string());
        }
        Ok(())
    }

    pub fn csv(&mut self, name: &str, table: &Table) -> Result<(), CliError> {
        if self.wants(Format::Csv) {
            self.write_bytes(name, &table.to_bytes())?;
        }
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        if self.wants(Format::Json) {
            self.write_json(name, value)?;
        }
        Ok(())
    }

    /// Written regardless of the requested formats.
    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
        bytes.push(b'\n');
        self.write_bytes(name, &bytes)
    }
}
