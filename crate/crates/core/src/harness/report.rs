use std::fmt::Write as _;

use super::{HarnessError, Table, TOOL, VERSION};

/// Tables summarized by [`report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportInputs {
    /// Single comparison at the report input and clock.
    pub point: Table,
    /// Sweeps run with both shutdown modes.
    pub sweeps: Vec<Table>,
    /// Monte Carlo with calibration.
    pub mc: Table,
}

impl ReportInputs {
    /// Regroups tables read back from disk by their recorded command.
    pub fn from_tables(tables: Vec<Table>) -> Result<Self, HarnessError> {
        let mut point = None;
        let mut mc = None;
        let mut sweeps = Vec::new();
        for t in tables {
            match t.command.as_str() {
                "sim" => point = Some(t),
                "mc" => mc = Some(t),
                "sweep" => sweeps.push(t),
                other => {
                    return Err(HarnessError::Table(format!(
                        "report cannot use a '{other}' table"
                    )))
                }
            }
        }
        Ok(Self {
            point: point.ok_or_else(|| HarnessError::Table("report needs a sim table".to_string()))?,
            sweeps,
            mc: mc.ok_or_else(|| HarnessError::Table("report needs an mc table".to_string()))?,
        })
    }

    pub fn tables(&self) -> Vec<&Table> {
        std::iter::once(&self.point)
            .chain(self.sweeps.iter())
            .chain(std::iter::once(&self.mc))
            .collect()
    }
}

/// Lowest savings over every successful sweep row, with where it occurred.
fn worst_savings(sweeps: &[Table]) -> Option<(f64, String)> {
    let mut worst: Option<(f64, String)> = None;
    for t in sweeps {
        let (Some(sav), Some(status)) = (t.numbers("savings_pct"), t.texts("status")) else {
            continue;
        };
        let var = t.columns[0].clone();
        let xs = t.texts(&var).unwrap_or_default();
        for ((s, st), x) in sav.iter().zip(&status).zip(&xs) {
            if st != "ok" || s.is_nan() {
                continue;
            }
            if worst.as_ref().is_none_or(|(w, _)| s < w) {
                worst = Some((*s, format!("{var}={x}")));
            }
        }
    }
    worst
}

fn sigma(mc: &Table, phase: &str) -> Option<f64> {
    mc.notes
        .iter()
        .filter(|n| n.starts_with("summary ") && n.contains(&format!("phase={phase} ")))
        .find_map(|n| n.split_whitespace().find_map(|kv| kv.strip_prefix("sigma_V=")))
        .and_then(|s| s.parse().ok())
}

/// One-page performance summary. A pure function of the tables, so a report
/// rebuilt from saved CSV files matches the live one.
pub fn report(inputs: &ReportInputs) -> String {
    let p = &inputs.point;
    let get = |col: &str| p.numbers(col).and_then(|v| v.first().copied()).unwrap_or(f64::NAN);
    let mut out = String::new();
    let _ = writeln!(out, "# tool={TOOL} version={VERSION} command=report");
    for (k, v) in &p.config {
        let _ = writeln!(out, "# cfg {k}={v}");
    }
    for w in &p.warnings {
        let _ = writeln!(out, "# warning {w}");
    }
    let _ = writeln!(out, "vid_V={:.8e}", get("vid_V"));
    let _ = writeln!(out, "delay_t_dm_s={:.8e}", get("t_dm_s"));
    let _ = writeln!(out, "freq_Hz={}", p.config.iter().find(|(k, _)| k == "engine.freq").map_or("?", |(_, v)| v));
    let _ = writeln!(out, "power_W={:.8e}", get("power_W"));
    let _ = writeln!(out, "energy_per_comparison_J={:.8e}", get("energy_J"));
    match worst_savings(&inputs.sweeps) {
        Some((s, at)) => {
            let _ = writeln!(out, "power_savings_worst_case_pct={s:.8e}");
            let _ = writeln!(out, "power_savings_worst_case_at={at}");
        }
        None => {
            let _ = writeln!(out, "power_savings_worst_case_pct=NaN");
        }
    }
    let before = sigma(&inputs.mc, "before");
    let after = sigma(&inputs.mc, "after");
    let fmt = |x: Option<f64>| x.map_or("NaN".to_string(), |v| format!("{v:.8e}"));
    let _ = writeln!(out, "offset_sigma_uncalibrated_V={}", fmt(before));
    let _ = writeln!(out, "offset_sigma_calibrated_V={}", fmt(after));
    let ratio = match (before, after) {
        (Some(b), Some(a)) if a > 0.0 => Some(b / a),
        _ => None,
    };
    let _ = writeln!(out, "offset_sigma_reduction={}", fmt(ratio));
    if let Some(n) = inputs.mc.note_value("summary", "n") {
        let _ = writeln!(out, "mc_trials={n}");
    }
    out
}
