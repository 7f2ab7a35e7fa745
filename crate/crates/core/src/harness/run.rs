use rayon::prelude::*;

use crate::calibration::{
    monte_carlo, pelgrom_pair_sigma, run_calibration, OffsetStats,
};
use crate::device::{sample_mismatch, MismatchSample};
use crate::engine::{BodyBias, Comparator, ComparisonResult, EngineError, OperatingPoint};
use crate::sizing::{solve_sizing, BalanceTerms};

use super::config::{GridValue, KELVIN_OFFSET};
use super::report::{report, ReportInputs};
use super::{Cell, HarnessError, Resolved, RunConfig, SweepSpec, SweepVariable, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Sim,
    Sweep,
    Mc,
    Calibrate,
    Size,
    Report,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Sim => "sim",
            Command::Sweep => "sweep",
            Command::Mc => "mc",
            Command::Calibrate => "calibrate",
            Command::Size => "size",
            Command::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Command::Sim,
            Command::Sweep,
            Command::Mc,
            Command::Calibrate,
            Command::Size,
            Command::Report,
        ]
        .into_iter()
        .find(|c| c.as_str() == s)
    }
}

/// Output of one subcommand: a table, or report text.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Table(Box<Table>),
    Text(String),
}

pub fn run_command(cmd: Command, cfg: &RunConfig) -> Result<Output, HarnessError> {
    Ok(match cmd {
        Command::Sim => Output::Table(Box::new(run_sim(cfg)?)),
        Command::Sweep => Output::Table(Box::new(run_sweep(cfg)?)),
        Command::Mc => Output::Table(Box::new(run_montecarlo(cfg)?)),
        Command::Calibrate => Output::Table(Box::new(run_calibrate(cfg)?)),
        Command::Size => Output::Table(Box::new(run_size(cfg)?)),
        Command::Report => Output::Text(report(&build_report_inputs(cfg)?)),
    })
}

const SIM_COLUMNS: [&str; 18] = [
    "vid_V", "vcm_V", "vdd_V", "corner", "temp_C", "decision", "t0_s", "t1_s", "t_esd_s", "t_dm_s",
    "shutdown", "late", "e_preamp_J", "e_latch_J", "e_ddvb_J", "e_reset_J", "energy_J", "power_W",
];

/// Single comparison at the configured operating point.
pub fn run_sim(cfg: &RunConfig) -> Result<Table, HarnessError> {
    let r = cfg.resolve()?;
    let comp = Comparator::new(r.comparator.clone())?;
    let body = BodyBias::tied(r.comparator.vdd);
    let res = comp.simulate(&r.op, &MismatchSample::zero(), body)?;
    let mut t = Table::new("sim", cfg, &SIM_COLUMNS);
    let e = res.energy;
    t.rows.push(vec![
        Cell::num(r.op.vid),
        Cell::num(r.op.vcm),
        Cell::num(res.vdd),
        Cell::Text(r.op.corner.to_string()),
        Cell::num(r.op.t_kelvin - KELVIN_OFFSET),
        Cell::Int(res.decision.sign() as i64),
        Cell::num(res.t0),
        Cell::num(res.t1),
        Cell::num(res.t_esd),
        Cell::num(res.t_dm),
        res.shutdown_occurred.into(),
        res.late.into(),
        Cell::num(e.e_preamp),
        Cell::num(e.e_latch),
        Cell::num(e.e_ddvb),
        Cell::num(e.e_reset),
        Cell::num(e.total),
        Cell::num(res.power(r.comparator.freq)),
    ]);
    Ok(t)
}

struct PointSetup {
    comp: Comparator,
    op: OperatingPoint,
    body: BodyBias,
}

fn setup_point(r: &Resolved, variable: SweepVariable, v: GridValue) -> Result<PointSetup, EngineError> {
    let mut cfg = r.comparator.clone();
    let mut op = r.op;
    let mut vdd = cfg.vdd;
    match (variable, v) {
        (SweepVariable::Vid, GridValue::Number(x)) => op.vid = x,
        (SweepVariable::Vcm, GridValue::Number(x)) => op.vcm = x,
        (SweepVariable::Vdd, GridValue::Number(x)) => {
            vdd = x;
            op.vdd_override = Some(x);
            if r.vcm_tracks_vdd {
                op.vcm = x / 2.0;
            }
        }
        (SweepVariable::Temp, GridValue::Number(x)) => op.t_kelvin = x + KELVIN_OFFSET,
        (SweepVariable::Corner, GridValue::Corner(c)) => op.corner = c,
        (SweepVariable::Width(target), GridValue::Number(w)) => target.apply(&mut cfg, w)?,
        _ => unreachable!("grid value matches its variable"),
    }
    Ok(PointSetup {
        comp: Comparator::new(cfg)?,
        op,
        body: BodyBias::tied(vdd),
    })
}

fn sweep_point(
    r: &Resolved,
    variable: SweepVariable,
    v: GridValue,
) -> Result<(ComparisonResult, Option<ComparisonResult>, f64), EngineError> {
    let p = setup_point(r, variable, v)?;
    let z = MismatchSample::zero();
    let main = p.comp.simulate(&p.op, &z, p.body)?;
    let alt = if r.sweep.both_modes {
        let off = p.comp.with_config(|c| c.early_shutdown = false)?;
        Some(off.simulate(&p.op, &z, p.body)?)
    } else {
        None
    };
    Ok((main, alt, p.comp.config().freq))
}

/// Evaluates the engine over the configured sweep grid. Engine failures
/// become rows with status other than `ok` and NaN metrics.
pub fn run_sweep(cfg: &RunConfig) -> Result<Table, HarnessError> {
    let r = cfg.resolve()?;
    Ok(sweep_table(cfg, &r, &r.sweep))
}

fn sweep_table(cfg: &RunConfig, r: &Resolved, spec: &SweepSpec) -> Table {
    let variable = spec.variable;
    let mut columns = vec![
        variable.column(),
        "decision",
        "t_dm_s",
        "t_esd_s",
        "power_W",
        "energy_J",
        "late",
    ];
    if spec.both_modes {
        columns.extend(["power_noesd_W", "energy_noesd_J", "savings_pct"]);
    }
    columns.push("status");
    let mut t = Table::new("sweep", cfg, &columns);
    t.notes.push(format!("sweep variable={}", variable.name()));
    if variable == SweepVariable::Vcm {
        t.notes.push("hint y_scale=log".to_string());
    }
    let mut r = r.clone();
    r.sweep = spec.clone();

    let grid = spec.grid();
    let results: Vec<_> = grid
        .par_iter()
        .map(|v| sweep_point(&r, variable, *v))
        .collect();
    for (v, res) in grid.iter().zip(results) {
        let x = match v {
            GridValue::Number(x) => Cell::num(*x),
            GridValue::Corner(c) => Cell::Text(c.to_string()),
        };
        let mut row = vec![x];
        match res {
            Ok((main, alt, freq)) => {
                row.extend([
                    Cell::Int(main.decision.sign() as i64),
                    Cell::num(main.t_dm),
                    Cell::num(main.t_esd),
                    Cell::num(main.power(freq)),
                    Cell::num(main.energy.total),
                    main.late.into(),
                ]);
                if let Some(alt) = alt {
                    let saved = alt.energy.total - main.energy.total;
                    row.extend([
                        Cell::num(alt.power(freq)),
                        Cell::num(alt.energy.total),
                        Cell::num(100.0 * saved / alt.energy.total),
                    ]);
                }
                row.push(Cell::Text("ok".to_string()));
            }
            Err(e) => {
                row.push(Cell::Int(0));
                row.extend(std::iter::repeat_n(Cell::Num(f64::NAN), 4));
                row.push(true.into());
                if spec.both_modes {
                    row.extend(std::iter::repeat_n(Cell::Num(f64::NAN), 3));
                }
                row.push(Cell::Text(format!("error: {e}")));
            }
        }
        t.rows.push(row);
    }
    t
}

/// The standard grids of the report: input, common mode, supply,
/// temperature and corner, each with both shutdown modes.
pub fn standard_sweeps(cfg: &RunConfig) -> Result<Vec<Table>, HarnessError> {
    let r = cfg.resolve()?;
    Ok([
        SweepVariable::Vid,
        SweepVariable::Vcm,
        SweepVariable::Vdd,
        SweepVariable::Temp,
        SweepVariable::Corner,
    ]
    .into_iter()
    .map(|v| sweep_table(cfg, &r, &SweepSpec::default_for(v)))
    .collect())
}

fn stats_note(phase: &str, s: &OffsetStats) -> String {
    format!(
        "summary phase={phase} n={} failures={} not_converged={} mean_V={:.8e} sigma_V={:.8e}",
        s.n, s.failures, s.not_converged, s.mean, s.sigma
    )
}

/// Offset statistics before (and after, with calibration) as paired
/// histograms.
pub fn run_montecarlo(cfg: &RunConfig) -> Result<Table, HarnessError> {
    let r = cfg.resolve()?;
    let comp = Comparator::new(r.comparator.clone())?;
    let before = monte_carlo(&comp, &r.op, &r.calibration, &r.mc, false)?;
    let after = if r.mc_calibrate {
        Some(monte_carlo(&comp, &r.op, &r.calibration, &r.mc, true)?)
    } else {
        None
    };
    let mut t = Table::new("mc", cfg, &["phase", "bin_lo_V", "bin_hi_V", "count"]);
    t.notes.push(format!(
        "summary pelgrom_pair_sigma_V={:.8e}",
        pelgrom_pair_sigma(&comp, &r.mc.pelgrom)?
    ));
    for (phase, stats) in std::iter::once(("before", &before)).chain(after.iter().map(|a| ("after", a))) {
        t.notes.push(stats_note(phase, stats));
        let h = &stats.histogram;
        for (k, count) in h.counts.iter().enumerate() {
            let (lo, hi) = h.edges(k);
            t.rows.push(vec![
                Cell::Text(phase.to_string()),
                Cell::num(lo),
                Cell::num(hi),
                Cell::Int(*count as i64),
            ]);
        }
    }
    Ok(t)
}

/// One calibration run with its per-cycle history.
pub fn run_calibrate(cfg: &RunConfig) -> Result<Table, HarnessError> {
    let r = cfg.resolve()?;
    let comp = Comparator::new(r.comparator.clone())?;
    let mut mismatch = match r.calibration_trial {
        Some(trial) => sample_mismatch(r.mc.seed, trial, comp.config().geometry.devices(), &r.mc.pelgrom),
        None => MismatchSample::zero(),
    };
    let base = mismatch.get("Mp4").delta_vth;
    mismatch = mismatch.with_vth("Mp4", base + r.inject_mp4_vth);
    let res = run_calibration(&comp, &r.op, &mismatch, &r.calibration, r.mc.search)?;
    let mut t = Table::new(
        "calibrate",
        cfg,
        &["phase", "cycle", "code", "daco_V", "step_V", "s", "vb_plus_V", "vb_minus_V"],
    );
    t.notes.push(format!(
        "summary offset_before_V={:.8e} offset_after_V={:.8e} residual_bound_V={:.8e} converged={} saturated={}",
        res.offset_before, res.offset_after, res.residual_bound, res.converged, res.state.saturated
    ));
    for h in &res.state.history {
        t.rows.push(vec![
            Cell::Int(h.phase as i64),
            Cell::Int(h.cycle as i64),
            Cell::Int(h.code as i64),
            Cell::num(h.daco),
            Cell::num(h.step),
            Cell::Int(h.s as i64),
            Cell::num(h.vb_plus),
            Cell::num(h.vb_minus),
        ]);
    }
    Ok(t)
}

/// Normalized sizing solution plus the un-normalized balance of the
/// configured geometry.
pub fn run_size(cfg: &RunConfig) -> Result<Table, HarnessError> {
    let r = cfg.resolve()?;
    let alpha = r.comparator.alpha;
    let sol = solve_sizing(alpha, r.size.x_max, r.size.y_max, r.size.grid_step)?;
    let terms = BalanceTerms::from_config(&r.comparator)?;
    let mut t = Table::new(
        "size",
        cfg,
        &["alpha", "x", "y", "residual", "geometry_balance_residual_s", "latch_ratio_holds"],
    );
    t.rows.push(vec![
        Cell::num(alpha),
        Cell::num(sol.vars.x),
        Cell::num(sol.vars.y),
        Cell::num(sol.residual),
        Cell::num(terms.residual()),
        r.comparator.geometry.latch_ratio_holds().into(),
    ]);
    Ok(t)
}

/// Every table the report summarizes.
pub fn build_report_inputs(cfg: &RunConfig) -> Result<ReportInputs, HarnessError> {
    cfg.resolve()?;
    let mut point_cfg = cfg.clone();
    point_cfg.set("op.vid", cfg.get("report.vid").expect("registered"))?;
    point_cfg.set("engine.freq", cfg.get("report.freq").expect("registered"))?;
    let point = run_sim(&point_cfg)?;
    let sweeps = standard_sweeps(cfg)?;
    let mut mc_cfg = cfg.clone();
    mc_cfg.set("mc.calibrate", "true")?;
    let mc = run_montecarlo(&mc_cfg)?;
    Ok(ReportInputs { point, sweeps, mc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::parse_config;

    #[test]
    fn sim_row() {
        let t = run_sim(&RunConfig::default()).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.numbers("decision").unwrap(), vec![1.0]);
        assert!(t.numbers("t_dm_s").unwrap()[0] > 0.0);
    }

    #[test]
    fn vid_sweep_default_grid() {
        let t = run_sweep(&RunConfig::default()).unwrap();
        assert_eq!(t.rows.len(), 20);
        let tdm = t.numbers("t_dm_s").unwrap();
        assert!(tdm.windows(2).all(|w| w[1] < w[0]));
        let sav = t.numbers("savings_pct").unwrap();
        assert!(sav.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn failed_points_are_flagged() {
        let cfg = parse_config("[sweep]\nvariable=vcm\nstart=1.0\nstop=1.8\npoints=9\n").unwrap();
        let t = run_sweep(&cfg).unwrap();
        assert_eq!(t.rows.len(), 9);
        let status = t.texts("status").unwrap();
        assert_eq!(status[0], "ok");
        assert!(status[8].starts_with("error:"));
        assert!(t.numbers("t_dm_s").unwrap()[8].is_nan());
        assert_eq!(t.note_value("hint", "y_scale"), Some("log"));
    }

    #[test]
    fn no_shutdown_saves_nothing() {
        let cfg = parse_config("[engine]\nearly_shutdown=false\n").unwrap();
        let t = run_sweep(&cfg).unwrap();
        assert!(t.numbers("savings_pct").unwrap().iter().all(|s| *s == 0.0));
    }

    #[test]
    fn width_and_corner_sweeps() {
        let cfg = parse_config("[sweep]\nvariable=width\nwidth_target=preamp\n").unwrap();
        let t = run_sweep(&cfg).unwrap();
        assert_eq!(t.columns[0], "width_m");
        let p = t.numbers("power_W").unwrap();
        assert!(p.windows(2).all(|w| w[1] > w[0]));
        let cfg = parse_config("[sweep]\nvariable=corner\n").unwrap();
        let t = run_sweep(&cfg).unwrap();
        assert_eq!(t.texts("corner").unwrap(), vec!["TT", "FF", "SS", "FS", "SF"]);
    }

    #[test]
    fn single_trial_mc() {
        let cfg = parse_config("[mc]\ntrials=1\n").unwrap();
        let t = run_montecarlo(&cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.note_value("summary", "n"), Some("1"));
        assert_eq!(t.notes.iter().filter(|n| n.contains("phase=")).count(), 1);
        assert!(t.notes.iter().any(|n| n.contains("sigma_V=0.00000000e0")));
    }

    #[test]
    fn calibrate_and_size_tables() {
        let t = run_calibrate(&RunConfig::default()).unwrap();
        assert_eq!(t.rows.len(), 6);
        assert_eq!(t.numbers("s").unwrap()[0], 1.0);
        assert_eq!(t.note_value("summary", "converged"), Some("true"));
        let t = run_size(&RunConfig::default()).unwrap();
        assert_eq!(t.numbers("x").unwrap(), vec![1.0]);
        assert_eq!(t.numbers("residual").unwrap(), vec![0.0]);
    }
}
