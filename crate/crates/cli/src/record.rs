//! Result records and their JSON/CSV serialization.

use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use hierfss::io::fmt17;

use crate::config::{Format, RunConfig};
use crate::CliError;

/// Version of the record layout.
pub const SCHEMA_VERSION: u32 = 1;

/// Where and when a record was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub artifact: String,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    /// Seeds of every random stream used, in order.
    pub seed_lineage: Vec<u64>,
}

/// Output of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub schema_version: u32,
    pub config: RunConfig,
    pub outputs: Value,
    /// Standard errors of the stochastic outputs; null for deterministic runs.
    pub stderr: Value,
    pub provenance: Provenance,
}

/// What a command produces before it is wrapped in a record.
#[derive(Debug, Clone, Default)]
pub struct Output {
    pub outputs: Value,
    pub stderr: Value,
    pub seed_lineage: Vec<u64>,
    /// CSV body; scalar outputs are written as `key,value` rows when absent.
    pub csv: Option<String>,
}

impl Output {
    pub fn deterministic(outputs: Value) -> Self {
        Output {
            outputs,
            ..Output::default()
        }
    }
}

impl ResultRecord {
    pub fn new(config: &RunConfig, out: &Output) -> Self {
        ResultRecord {
            schema_version: SCHEMA_VERSION,
            config: config.clone(),
            outputs: out.outputs.clone(),
            stderr: out.stderr.clone(),
            provenance: Provenance {
                artifact: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
                seed_lineage: out.seed_lineage.clone(),
            },
        }
    }
}

/// Table of optional floats as CSV with 17 significant digits.
pub fn csv_table(columns: &[&str], rows: &[Vec<Option<f64>>]) -> String {
    let mut s = columns.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| v.map(fmt17).unwrap_or_default()).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

fn scalar_csv(outputs: &Value) -> String {
    let mut s = String::from("key,value\n");
    if let Some(map) = outputs.as_object() {
        for (k, v) in map {
            let cell = match v {
                Value::Number(n) if n.is_f64() => n.as_f64().map(fmt17).unwrap_or_default(),
                Value::Number(n) => n.to_string(),
                Value::String(t) => t.clone(),
                Value::Bool(b) => b.to_string(),
                _ => continue,
            };
            s.push_str(&format!("{k},{cell}\n"));
        }
    }
    s
}

/// Renders the record in the configured format.
pub fn render(config: &RunConfig, out: &Output) -> String {
    match config.format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(&ResultRecord::new(config, out)).expect("record serializes");
            s.push('\n');
            s
        }
        Format::Csv => out.csv.clone().unwrap_or_else(|| scalar_csv(&out.outputs)),
    }
}

/// Writes `text` to `path`, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::Usage(format!("cannot write to stdout: {e}")))
        }
    }
}
