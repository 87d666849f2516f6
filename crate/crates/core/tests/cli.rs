//! End-to-end runs of the `penning-md` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "n_ions=6",
    "--set",
    "sim.duration_us=3",
    "--set",
    "sim.snapshot_interval=500",
    "--set",
    "sim.rms_window_us=2",
    "--set",
    "sim.checkpoint_interval=1000",
    "--set",
    "thermalize.mh_scans=50",
];

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_penning-md"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn cool(dir: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["cool", "--output-dir", dir.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    cli(&args)
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn estimate_reports_trap_quantities() {
    let out = cli(&["estimate", "--set", "sim.dt_ns=2"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let wc = v["omega_c_hz"].as_f64().unwrap();
    // q B / (2 pi m) for 9Be+ at 4.4588 T
    assert!((wc - 7.5975e6).abs() < 1e3, "{wc}");
    assert!((v["omega_c_dt"].as_f64().unwrap() - 2.0 * std::f64::consts::PI * wc * 2e-9).abs() < 1e-12);
    assert!((v["vortex_hz"].as_f64().unwrap() - (wc - 800e3)).abs() < 1e-6);
    assert_eq!(v["extents_from"], "cold-fluid spheroid");
    assert!(v["exb_max_hz"].as_f64().unwrap() > 0.0);
}

#[test]
fn cool_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let out = cool(dir.path(), &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "spec.json",
        "equilibrium.bin",
        "equilibrium.json",
        "initial.bin",
        "initial.json",
        "final.bin",
        "final.json",
        "record.json",
        "timeseries.csv",
        "checkpoint.json",
    ] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let csv = fs::read_to_string(dir.path().join("timeseries.csv")).unwrap();
    // t = 0 plus one sample every 500 of 3000 steps
    assert_eq!(csv.lines().count(), 1 + 7);
}

#[test]
fn output_bytes_do_not_depend_on_thread_count() {
    let one = tempfile::tempdir().unwrap();
    let four = tempfile::tempdir().unwrap();
    assert!(cool(one.path(), &["--threads", "1"]).status.success());
    assert!(cool(four.path(), &["--threads", "4"]).status.success());
    assert_eq!(files(one.path()), files(four.path()));
}

#[test]
fn stages_chain_through_snapshots() {
    let full = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    assert!(cool(full.path(), &[]).status.success());

    let d = split.path().to_str().unwrap();
    let mut args = vec!["thermalize", "--output-dir", d];
    args.extend_from_slice(SMALL);
    assert!(cli(&args).status.success());
    let eq = split.path().join("equilibrium.bin");
    let init = split.path().join("initial.bin");
    let out = cool(
        split.path(),
        &["--equilibrium", eq.to_str().unwrap(), "--initial", init.to_str().unwrap()],
    );
    assert!(out.status.success());
    for name in ["record.json", "final.bin", "timeseries.csv"] {
        assert_eq!(
            fs::read(full.path().join(name)).unwrap(),
            fs::read(split.path().join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn resume_checks_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cool(dir.path(), &[]).status.success());
    let cp = dir.path().join("checkpoint.json");
    let record = fs::read(dir.path().join("record.json")).unwrap();

    let again = tempfile::tempdir().unwrap();
    let out = cool(again.path(), &["--resume", cp.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(again.path().join("record.json")).unwrap(), record);

    let other = cool(again.path(), &["--resume", cp.to_str().unwrap(), "--seed", "9"]);
    assert_eq!(other.status.code(), Some(5));

    let text = fs::read_to_string(&cp).unwrap();
    fs::write(&cp, &text[..text.len() / 3]).unwrap();
    assert_eq!(cool(again.path(), &["--resume", cp.to_str().unwrap()]).status.code(), Some(5));
}

#[test]
fn invalid_input_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(cli(&["estimate", "--set", "trap.delta=-1"]).status.code(), Some(2));
    assert_eq!(cli(&["estimate", "--set", "trap.no_such_key=1"]).status.code(), Some(2));
    assert_eq!(cli(&["cool", "--output-dir", d, "--set", "sim.dt_ns=0"]).status.code(), Some(2));
    let spec = dir.path().join("bad.toml");
    fs::write(&spec, "n_ions = \"many\"\n").unwrap();
    assert_eq!(cli(&["estimate", "--spec", spec.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn modes_table_lists_three_n_modes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = cli(&["modes", "--output-dir", d, "--set", "n_ions=5", "--set", "trap.omega_r_hz=220e3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = fs::read_to_string(dir.path().join("modes.csv")).unwrap();
    assert_eq!(table.lines().count(), 1 + 15);
    for branch in ["ExB", "axial", "cyclotron"] {
        assert_eq!(table.lines().filter(|l| l.ends_with(branch)).count(), 5, "{branch}");
    }
}
