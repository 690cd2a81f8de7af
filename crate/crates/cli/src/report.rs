//! Check reports: a JSON summary plus CSV tables.

use std::fs;
use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub reference: f64,
    pub tolerance: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
}

impl Assertion {
    /// `|value - reference| <= tolerance`.
    pub fn near(name: impl Into<String>, value: f64, reference: f64, tolerance: f64, stderr: Option<f64>) -> Self {
        Self {
            name: name.into(),
            passed: (value - reference).abs() <= tolerance,
            value,
            reference,
            tolerance,
            stderr,
        }
    }

    /// `value <= reference + tolerance`.
    pub fn at_most(name: impl Into<String>, value: f64, reference: f64, tolerance: f64, stderr: Option<f64>) -> Self {
        Self {
            name: name.into(),
            passed: value <= reference + tolerance,
            value,
            reference,
            tolerance,
            stderr,
        }
    }

    /// `value >= reference - tolerance`.
    pub fn at_least(name: impl Into<String>, value: f64, reference: f64, tolerance: f64, stderr: Option<f64>) -> Self {
        Self {
            name: name.into(),
            passed: value >= reference - tolerance,
            value,
            reference,
            tolerance,
            stderr,
        }
    }

    /// `lo <= value <= hi`; `reference` records the midpoint, `tolerance` the half width.
    pub fn inside(name: impl Into<String>, value: f64, lo: f64, hi: f64, stderr: Option<f64>) -> Self {
        Self {
            name: name.into(),
            passed: value >= lo && value <= hi,
            value,
            reference: 0.5 * (lo + hi),
            tolerance: 0.5 * (hi - lo),
            stderr,
        }
    }

    pub fn flag(name: impl Into<String>, passed: bool) -> Self {
        Self {
            name: name.into(),
            passed,
            value: f64::from(u8::from(passed)),
            reference: 1.0,
            tolerance: 0.0,
            stderr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: vec![],
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Builds a CSV row from displayable cells.
#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($x.to_string()),*] };
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub check_id: String,
    pub version: String,
    pub passed: bool,
    pub assertions: Vec<Assertion>,
    pub values: Map<String, Value>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub report: Report,
    pub tables: Vec<Table>,
    /// Extra files written verbatim.
    pub files: Vec<(String, Vec<u8>)>,
}

impl RunOutput {
    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.report.assertions.iter().filter(|a| !a.passed)
    }

    pub fn write(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let json = serde_json::to_vec_pretty(&self.report).map_err(io::Error::other)?;
        fs::write(dir.join(format!("{}.json", self.report.check_id)), json)?;
        for t in &self.tables {
            fs::write(dir.join(format!("{}.csv", t.name)), t.to_csv())?;
        }
        for (name, bytes) in &self.files {
            fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }
}

/// Accumulates assertions, values and tables while a check runs.
#[derive(Debug, Default)]
pub struct Builder {
    pub assertions: Vec<Assertion>,
    pub values: Map<String, Value>,
    pub tables: Vec<Table>,
    pub files: Vec<(String, Vec<u8>)>,
}

impl Builder {
    pub fn check(&mut self, a: Assertion) {
        self.assertions.push(a);
    }

    pub fn value(&mut self, key: &str, v: impl Serialize) {
        self.values.insert(key.into(), serde_json::to_value(v).expect("serializable value"));
    }

    pub fn finish(self, config: &ExperimentConfig) -> RunOutput {
        let passed = self.assertions.iter().all(|a| a.passed);
        RunOutput {
            report: Report {
                check_id: config.check.id().into(),
                version: VERSION.into(),
                passed,
                assertions: self.assertions,
                values: self.values,
                config: config.clone(),
            },
            tables: self.tables,
            files: self.files,
        }
    }
}
