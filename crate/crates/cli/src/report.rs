//! Run reports and their CSV and JSON serialisation.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::CliError;

/// Least-squares fit reported with a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub name: String,
    pub slope: f64,
    pub intercept: f64,
    pub rms_residual: f64,
}

/// Outcome of one acceptance rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Result of one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub inputs: RunConfig,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
    pub fits: Vec<Fit>,
    pub verdicts: Vec<Verdict>,
    /// True when every verdict passed.
    pub passed: bool,
}

/// Wall-clock timings, kept out of the deterministic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub command: String,
    pub total_seconds: f64,
    pub stages: Vec<(String, f64)>,
}

/// Columns identifying the producing configuration, prepended to every row.
pub const PROVENANCE_COLUMNS: [&str; 5] = ["N", "m", "profile", "refinement", "seed"];

impl RunReport {
    pub fn new(command: &str, inputs: &RunConfig, columns: &[&str]) -> Self {
        let mut all: Vec<String> = PROVENANCE_COLUMNS.iter().map(|c| c.to_string()).collect();
        all.extend(columns.iter().map(|c| c.to_string()));
        Self {
            command: command.to_string(),
            inputs: inputs.clone(),
            columns: all,
            rows: Vec::new(),
            fits: Vec::new(),
            verdicts: Vec::new(),
            passed: true,
        }
    }

    /// Appends a row; the provenance cells are filled in from the inputs.
    pub fn push_row(&mut self, cells: Vec<Value>) {
        let c = &self.inputs;
        let mut row = vec![
            Value::from(c.params.n()),
            Value::from(c.params.m()),
            Value::from(c.profile.label()),
            Value::from(c.refinement),
            Value::from(c.seed),
        ];
        row.extend(cells);
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn push_verdict(&mut self, name: &str, passed: bool, detail: String) {
        self.passed &= passed;
        self.verdicts.push(Verdict {
            name: name.to_string(),
            passed,
            detail,
        });
    }

    /// Column values by name.
    pub fn column(&self, name: &str) -> Option<Vec<&Value>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    /// Deterministic JSON text of the report.
    pub fn to_json(&self) -> Result<String, CliError> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::Output(e.to_string()))
    }

    /// CSV text with floats printed to 17 significant digits.
    pub fn to_csv(&self) -> Result<String, CliError> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        let out = |e: csv::Error| CliError::Output(e.to_string());
        writer.write_record(&self.columns).map_err(out)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(format_cell)).map_err(out)?;
        }
        let bytes = writer.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| CliError::Output(e.to_string()))
    }

    /// Writes `config.json`, `report.json`, `<command>.csv` and `timing.json`.
    pub fn write(&self, timing: &Timing, dir: &Path) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Output(format!("{}: {e}", dir.display()));
        fs::create_dir_all(dir).map_err(io)?;
        let config = serde_json::to_string_pretty(&self.inputs).map_err(|e| CliError::Output(e.to_string()))?;
        fs::write(dir.join("config.json"), config).map_err(io)?;
        fs::write(dir.join("report.json"), self.to_json()?).map_err(io)?;
        fs::write(dir.join(format!("{}.csv", self.command)), self.to_csv()?).map_err(io)?;
        let timing = serde_json::to_string_pretty(timing).map_err(|e| CliError::Output(e.to_string()))?;
        fs::write(dir.join("timing.json"), timing).map_err(io)?;
        Ok(())
    }
}

/// Text of one CSV cell.
pub fn format_cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.to_string()
            } else if let Some(u) = n.as_u64() {
                u.to_string()
            } else {
                format!("{:.16e}", n.as_f64().unwrap_or(f64::NAN))
            }
        }
        Value::String(s) => s.clone(),
        Value::Bool(b) => b.to_string(),
        other => other.to_string(),
    }
}

/// JSON number for finite floats, `null` otherwise.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}
