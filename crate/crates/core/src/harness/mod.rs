//! Batch front end: configuration, sweeps, Monte Carlo, tables and reports.

pub mod config;
pub mod report;
pub mod run;

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::calibration::CalibrationError;
use crate::engine::EngineError;

pub use config::{parse_config, Resolved, RunConfig, Scale, SweepSpec, SweepVariable};
pub use report::{report, ReportInputs};
pub use run::{
    build_report_inputs, run_calibrate, run_command, run_montecarlo, run_sim, run_size, run_sweep,
    Command,
};

pub const TOOL: &str = "dyncomp-sim";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{}{msg}", line.map(|l| format!("line {l}: ")).unwrap_or_default())]
    Parse { line: Option<usize>, msg: String },
    #[error("unknown key '{key}'{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("{key}: {msg}")]
    Range { key: String, msg: String },
    #[error("{path}: {msg}")]
    Io { path: String, msg: String },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error("malformed table: {0}")]
    Table(String),
}

impl HarnessError {
    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Parse { .. } => "parse",
            HarnessError::UnknownKey { .. } => "unknown-key",
            HarnessError::Range { .. } => "range",
            HarnessError::Io { .. } => "io",
            HarnessError::Engine(_) => "engine",
            HarnessError::Calibration(_) => "calibration",
            HarnessError::Table(_) => "table",
        }
    }

    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        }
    }
}

/// Rounds to the nine significant digits used on output, so that tables
/// built live and tables read back from disk hold identical values.
pub fn round9(x: f64) -> f64 {
    if x.is_finite() {
        format!("{x:.8e}").parse().expect("formatted float")
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    pub fn num(x: f64) -> Self {
        Cell::Num(round9(x))
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(x) => Some(*x),
            Cell::Int(i) => Some(*i as f64),
            Cell::Text(_) => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Num(x) if x.is_nan() => "NaN".to_string(),
            Cell::Num(x) => format!("{x:.8e}"),
            Cell::Int(i) => i.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn parse(s: &str) -> Self {
        if let Ok(i) = s.parse::<i64>() {
            if !s.starts_with('+') {
                return Cell::Int(i);
            }
        }
        match s {
            "NaN" => Cell::Num(f64::NAN),
            _ => s
                .parse::<f64>()
                .map(Cell::Num)
                .unwrap_or_else(|_| Cell::Text(s.to_string())),
        }
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(if b { "true" } else { "false" }.to_string())
    }
}

/// A result table with its provenance block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub command: String,
    /// Resolved configuration, canonical order.
    pub config: Vec<(String, String)>,
    pub warnings: Vec<String>,
    /// Free-form `key=value ...` annotation lines (hints, summaries).
    pub notes: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(command: &str, cfg: &RunConfig, columns: &[&str]) -> Self {
        Self {
            command: command.to_string(),
            config: cfg
                .entries()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
            warnings: cfg.warnings.clone(),
            notes: Vec::new(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Values of one column, `None` where a cell is not numeric.
    pub fn numbers(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| r[k].as_f64().unwrap_or(f64::NAN))
                .collect(),
        )
    }

    pub fn texts(&self, name: &str) -> Option<Vec<String>> {
        let k = self.column(name)?;
        Some(self.rows.iter().map(|r| r[k].render()).collect())
    }

    /// Looks up `key=value` inside the notes that start with `prefix`.
    pub fn note_value(&self, prefix: &str, key: &str) -> Option<&str> {
        self.notes
            .iter()
            .filter(|n| n.split_whitespace().next() == Some(prefix))
            .flat_map(|n| n.split_whitespace().skip(1))
            .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('='))
    }

    /// Configuration recovered from the metadata block.
    pub fn run_config(&self) -> Result<RunConfig, HarnessError> {
        let mut cfg = RunConfig::default();
        for (k, v) in &self.config {
            cfg.set(k, v)?;
        }
        cfg.warnings = self.warnings.clone();
        cfg.resolve()?;
        Ok(cfg)
    }

    fn metadata_lines(&self) -> Vec<String> {
        let mut out = vec![format!("tool={TOOL} version={VERSION} command={}", self.command)];
        out.extend(self.config.iter().map(|(k, v)| format!("cfg {k}={v}")));
        out.extend(self.warnings.iter().map(|w| format!("warning {w}")));
        out.extend(self.notes.iter().cloned());
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for m in self.metadata_lines() {
            let _ = writeln!(out, "# {m}");
        }
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        w.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))
                .expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
        out
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Doc<'a> {
            tool: &'a str,
            version: &'a str,
            #[serde(flatten)]
            table: &'a Table,
        }
        // NaN is not representable in JSON; serde_json writes null
        let mut s = serde_json::to_string_pretty(&Doc {
            tool: TOOL,
            version: VERSION,
            table: self,
        })
        .expect("serializable table");
        s.push('\n');
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, HarnessError> {
        let mut command = None;
        let mut config = Vec::new();
        let mut warnings = Vec::new();
        let mut notes = Vec::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(m) = line.strip_prefix("# ") {
                if let Some(rest) = m.strip_prefix("tool=") {
                    command = rest
                        .split_whitespace()
                        .find_map(|kv| kv.strip_prefix("command="))
                        .map(str::to_string);
                } else if let Some(kv) = m.strip_prefix("cfg ") {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| HarnessError::Table(format!("bad cfg line '{line}'")))?;
                    config.push((k.to_string(), v.to_string()));
                } else if let Some(w) = m.strip_prefix("warning ") {
                    warnings.push(w.to_string());
                } else {
                    notes.push(m.to_string());
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let command = command.ok_or_else(|| HarnessError::Table("missing tool line".to_string()))?;
        let mut r = csv::ReaderBuilder::new().from_reader(body.as_bytes());
        let columns: Vec<String> = r
            .headers()
            .map_err(|e| HarnessError::Table(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| HarnessError::Table(e.to_string()))?;
            rows.push(rec.iter().map(Cell::parse).collect());
        }
        Ok(Self {
            command,
            config,
            warnings,
            notes,
            columns,
            rows,
        })
    }

    pub fn write(&self, path: &Path, json: bool) -> Result<(), HarnessError> {
        let text = if json { self.to_json() } else { self.to_csv() };
        std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Table {
        let cfg = parse_config("[engine]\nvdd=1.7\nvdd=1.8\n").unwrap();
        let mut t = Table::new("sweep", &cfg, &["vid_V", "decision", "late", "status"]);
        t.notes.push("hint y_scale=log".to_string());
        t.rows.push(vec![Cell::num(1e-3), Cell::Int(1), false.into(), Cell::Text("ok".into())]);
        t.rows.push(vec![
            Cell::num(std::f64::consts::PI),
            Cell::Int(-1),
            true.into(),
            Cell::Text("no decision, window 1e-9".into()),
        ]);
        t
    }

    #[test]
    fn csv_layout() {
        let csv = sample().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with("# tool=dyncomp-sim version="));
        assert!(lines.contains(&"# cfg engine.vdd=1.8"));
        assert!(lines.iter().any(|l| l.starts_with("# warning duplicate key engine.vdd")));
        assert!(lines.contains(&"vid_V,decision,late,status"));
        assert!(lines.contains(&"1.00000000e-3,1,false,ok"));
        assert!(lines.contains(&"3.14159265e0,-1,true,\"no decision, window 1e-9\""));
    }

    #[test]
    fn csv_round_trip() {
        let t = sample();
        let back = Table::from_csv(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_csv(), t.to_csv());
        let cfg = back.run_config().unwrap();
        assert_eq!(cfg.get("engine.vdd"), Some("1.8"));
        assert_eq!(cfg.warnings.len(), 1);
        assert_eq!(back.note_value("hint", "y_scale"), Some("log"));
        // stored values are already rounded, so the round trip is exact;
        // against the unrounded input nine digits leave at most 5e-9
        let pi = back.numbers("vid_V").unwrap()[1];
        assert_eq!(pi, round9(std::f64::consts::PI));
        assert!((pi - std::f64::consts::PI).abs() <= 5e-9 * pi);
    }

    #[test]
    fn json_mirror() {
        let v: serde_json::Value = serde_json::from_str(&sample().to_json()).unwrap();
        assert_eq!(v["tool"], "dyncomp-sim");
        assert_eq!(v["command"], "sweep");
        assert_eq!(v["rows"][0][1], 1);
        assert_eq!(v["columns"][0], "vid_V");
    }

    #[test]
    fn error_kinds_and_messages() {
        let e = parse_config("[x]\ny=1").unwrap_err();
        assert_eq!(e.kind(), "unknown-key");
        assert_eq!(e.to_string(), "unknown key 'x.y' at line 2");
        let e = parse_config("vdd=-1").unwrap_err();
        assert_eq!(e.kind(), "range");
        assert!(e.to_string().starts_with("engine.vdd:"));
    }
}
