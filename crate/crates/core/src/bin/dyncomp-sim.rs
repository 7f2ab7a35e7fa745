use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dyncomp::harness::{
    parse_config, report, run_command, Command, HarnessError, ReportInputs, RunConfig, Table,
};

#[derive(Parser)]
#[command(name = "dyncomp-sim", version, about = "Early-shutdown dynamic comparator simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Args)]
struct Common {
    /// Sectioned key=value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one key (repeatable), e.g. --set engine.vdd=1.6
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo trial count.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Disable the early-shutdown path.
    #[arg(long, global = true)]
    no_shutdown: bool,
    /// Also run the offset calibration (mc).
    #[arg(long, global = true)]
    calibrate: bool,
    /// Write JSON instead of CSV.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Sub {
    /// Single comparison at the configured operating point.
    Sim,
    /// Parameter sweep (vid, vcm, vdd, temp, corner, width).
    Sweep {
        /// Shorthand for --set sweep.variable=<VAR>.
        #[arg(long)]
        var: Option<String>,
    },
    /// Monte Carlo offset statistics.
    Mc,
    /// One offset-calibration run with its cycle history.
    Calibrate,
    /// Solve the normalized power-delay balance.
    Size,
    /// Performance summary over the standard grids.
    Report {
        /// Rebuild the report from previously written sim, sweep and mc CSVs.
        #[arg(long, num_args = 1..)]
        from: Vec<PathBuf>,
    },
    /// Re-run the command recorded in an output file's metadata.
    Replay { file: PathBuf },
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        msg: e.to_string(),
    })
}

fn build_config(c: &Common, var: Option<&str>) -> Result<RunConfig, HarnessError> {
    let mut cfg = match &c.config {
        Some(p) => parse_config(&read(p)?)?,
        None => RunConfig::default(),
    };
    if let Some(v) = var {
        cfg.set("sweep.variable", v)?;
    }
    for pair in &c.set {
        cfg.set_pair(pair)?;
    }
    if let Some(seed) = c.seed {
        cfg.set("mc.seed", &seed.to_string())?;
    }
    if let Some(n) = c.trials {
        cfg.set("mc.trials", &n.to_string())?;
    }
    if c.no_shutdown {
        cfg.set("engine.early_shutdown", "false")?;
    }
    if c.calibrate {
        cfg.set("mc.calibrate", "true")?;
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn emit(c: &Common, text: String, inputs: &[&Path]) -> Result<(), HarnessError> {
    match &c.out {
        Some(out) => {
            let clash = c.config.iter().map(PathBuf::as_path).chain(inputs.iter().copied());
            for p in clash {
                if same_file(p, out) {
                    return Err(HarnessError::Io {
                        path: out.display().to_string(),
                        msg: "refusing to overwrite an input file".to_string(),
                    });
                }
            }
            std::fs::write(out, text).map_err(|e| HarnessError::Io {
                path: out.display().to_string(),
                msg: e.to_string(),
            })
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

fn render(out: dyncomp::harness::run::Output, json: bool) -> String {
    use dyncomp::harness::run::Output;
    match out {
        Output::Table(t) if json => t.to_json(),
        Output::Table(t) => t.to_csv(),
        Output::Text(s) => s,
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let c = &cli.common;
    let (cmd, cfg, inputs): (Command, RunConfig, Vec<PathBuf>) = match &cli.command {
        Sub::Sim => (Command::Sim, build_config(c, None)?, vec![]),
        Sub::Sweep { var } => (Command::Sweep, build_config(c, var.as_deref())?, vec![]),
        Sub::Mc => (Command::Mc, build_config(c, None)?, vec![]),
        Sub::Calibrate => (Command::Calibrate, build_config(c, None)?, vec![]),
        Sub::Size => (Command::Size, build_config(c, None)?, vec![]),
        Sub::Report { from } if !from.is_empty() => {
            let tables = from
                .iter()
                .map(|p| Table::from_csv(&read(p)?))
                .collect::<Result<Vec<_>, _>>()?;
            let text = report(&ReportInputs::from_tables(tables)?);
            let paths: Vec<&Path> = from.iter().map(PathBuf::as_path).collect();
            return emit(c, text, &paths);
        }
        Sub::Report { .. } => (Command::Report, build_config(c, None)?, vec![]),
        Sub::Replay { file } => {
            let t = Table::from_csv(&read(file)?)?;
            let cmd = Command::parse(&t.command)
                .ok_or_else(|| HarnessError::Table(format!("unknown command '{}'", t.command)))?;
            (cmd, t.run_config()?, vec![file.clone()])
        }
    };
    let text = render(run_command(cmd, &cfg)?, c.json);
    let paths: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    emit(c, text, &paths)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(if matches!(e, HarnessError::Io { .. }) { 3 } else { 2 })
        }
    }
}
