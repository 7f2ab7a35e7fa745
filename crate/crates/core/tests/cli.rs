use std::path::Path;
use std::process::{Command, Output};

const EXE: &str = env!("CARGO_BIN_EXE_dyncomp-sim");

fn sim(args: &[&str]) -> Output {
    Command::new(EXE).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn out_of_range_value_names_the_key() {
    let o = sim(&["sim", "--set", "engine.vdd=-1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[range]: engine.vdd"), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
}

#[test]
fn unknown_key_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "[engine]\nvdd = 1.6\nbogus = 3\n").unwrap();
    let o = sim(&["sim", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("error[unknown-key]") && e.contains("engine.bogus") && e.contains("line 3"), "{e}");
}

#[test]
fn missing_config_is_io_error() {
    let o = sim(&["sim", "--config", "/nonexistent/run.cfg"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).starts_with("error[io]"));
}

#[test]
fn config_file_and_set_agree() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# lower supply\n[engine]\nvdd = 1.6\n\n[op]\nvid = 0.01\n").unwrap();
    let a = sim(&["sim", "--config", cfg.to_str().unwrap()]);
    let b = sim(&["sim", "--set", "engine.vdd=1.6", "--set", "op.vid=0.01"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert!(stdout(&a).contains("# cfg engine.vdd=1.6\n"));
}

#[test]
fn refuses_to_overwrite_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "[engine]\nvdd = 1.8\n").unwrap();
    let p = cfg.to_str().unwrap();
    let o = sim(&["sim", "--config", p, "--out", p]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(std::fs::read_to_string(&cfg).unwrap(), "[engine]\nvdd = 1.8\n");
}

#[test]
fn json_output_is_valid() {
    let o = sim(&["sweep", "--var", "corner", "--json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["command"], "sweep");
    assert_eq!(v["rows"].as_array().unwrap().len(), 5);
}

#[test]
fn failed_sweep_points_are_rows_not_errors() {
    let o = sim(&["sweep", "--var", "vcm", "--set", "sweep.start=1.0", "--set", "sweep.stop=1.8", "--set", "sweep.points=9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.lines().any(|l| l.contains("error:")), "{out}");
    assert!(out.lines().any(|l| l.ends_with(",ok")));
}

fn write(args: &[&str], out: &Path) {
    let o = Command::new(EXE).args(args).arg("--out").arg(out).output().unwrap();
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
}

#[test]
fn report_from_saved_tables_matches_live() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let common = ["--trials", "60", "--seed", "9"];
    let with = |a: &[&str]| -> Vec<String> { a.iter().chain(common.iter()).map(|s| s.to_string()).collect() };

    let mut files = Vec::new();
    let p = d.join("sim.csv");
    let args = with(&["sim", "--set", "op.vid=1e-3", "--set", "engine.freq=500e6"]);
    write(&args.iter().map(String::as_str).collect::<Vec<_>>(), &p);
    files.push(p);
    for var in ["vid", "vcm", "vdd", "temp", "corner"] {
        let p = d.join(format!("{var}.csv"));
        let args = with(&["sweep", "--var", var]);
        write(&args.iter().map(String::as_str).collect::<Vec<_>>(), &p);
        files.push(p);
    }
    let p = d.join("mc.csv");
    let args = with(&["mc", "--calibrate"]);
    write(&args.iter().map(String::as_str).collect::<Vec<_>>(), &p);
    files.push(p);

    let live = d.join("live.txt");
    let args = with(&["report"]);
    write(&args.iter().map(String::as_str).collect::<Vec<_>>(), &live);

    let rebuilt = d.join("rebuilt.txt");
    let o = Command::new(EXE)
        .arg("report")
        .arg("--from")
        .args(&files)
        .arg("--out")
        .arg(&rebuilt)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let live = std::fs::read_to_string(live).unwrap();
    let rebuilt = std::fs::read_to_string(rebuilt).unwrap();
    let body = |s: &str| s.lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect::<Vec<_>>();
    assert_eq!(body(&live), body(&rebuilt));
    assert!(live.contains("offset_sigma_reduction="));
}

#[test]
fn report_from_rejects_missing_tables() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("size.csv");
    write(&["size"], &p);
    let o = sim(&["report", "--from", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[table]"));
}

#[test]
fn replay_reproduces_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    write(&["sweep", "--var", "temp", "--no-shutdown", "--set", "op.vid=0.02"], &a);
    let o = Command::new(EXE).arg("replay").arg(&a).arg("--out").arg(&b).output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let o = Command::new(EXE).arg("replay").arg(&a).arg("--out").arg(&a).output().unwrap();
    assert_eq!(o.status.code(), Some(3));
}
