use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use divkernel_cli::tables::{read_ergodic, read_series, write_series};

const LINRESP: &str = "seed = 11

[model]
name = \"mult1d\"

[simulation]
dt = 0.01
horizon = 0.3
paths = 3000

[bins]
lo = -2.0
hi = 2.0
count = 8
";

const ERGODIC: &str = "seed = 5

[model]
name = \"lorenz96\"
dim = 6

[ergodic]
dt = 0.005
window = 1.0
horizon = 10.0
orbits = 3
alpha = 20.0
burn_in = 2.0
fd_dgamma = 0.2
trace_duration = 2.0
";

fn divkernel(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_divkernel")).current_dir(dir).env_remove("DIVKERNEL_WORKERS").args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn results_are_byte_identical_across_runs_and_worker_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.toml"), LINRESP).unwrap();
    for (out, workers) in [("a", "1"), ("b", "1"), ("c", "3")] {
        ok(&divkernel(d, &["linresp", "--config", "run.toml", "--workers", workers, "--out", out]));
    }
    for name in ["results.csv", "plot.svg", "config.toml"] {
        assert_eq!(read(&d.join("a"), name), read(&d.join("b"), name), "{name} differs between runs");
        assert_eq!(read(&d.join("a"), name), read(&d.join("c"), name), "{name} differs between worker counts");
    }
    // a different seed must actually change something
    ok(&divkernel(d, &["linresp", "--config", "run.toml", "--seed", "12", "--out", "e"]));
    assert_ne!(read(&d.join("a"), "results.csv"), read(&d.join("e"), "results.csv"));
}

#[test]
fn series_csv_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("run.toml"), LINRESP).unwrap();
    ok(&divkernel(d, &["linresp", "--config", "run.toml", "--out", "o"]));
    let bytes = read(&d.join("o"), "results.csv");
    let tables = read_series(&bytes[..]).unwrap();
    assert_eq!(tables.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), ["score", "d0"]);
    assert!(tables.iter().all(|t| t.table.rows.len() == 8));
    let mut again = Vec::new();
    write_series(&mut again, &tables).unwrap();
    assert_eq!(again, bytes);
}

#[test]
fn bad_configs_exit_2_and_name_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cases = [
        (LINRESP.replace("paths = 3000", "paths = 3000\nbins = 4"), "line 10"),
        (LINRESP.replace("dt = 0.01", "dt = 0.0"), "line 7"),
        (LINRESP.replace("count = 8", "count = \"eight\""), "line 14"),
        (LINRESP.replace("name = \"mult1d\"", "name = \"lorenz63\""), "line 4"),
    ];
    for (k, (text, line)) in cases.iter().enumerate() {
        fs::write(d.join("bad.toml"), text).unwrap();
        let out = divkernel(d, &["linresp", "--config", "bad.toml", "--out", "o"]);
        let err = String::from_utf8_lossy(&out.stderr);
        assert_eq!(out.status.code(), Some(2), "case {k}: {err}");
        assert!(err.contains(line), "case {k}: expected {line} in {err}");
    }
    // nothing is written for a rejected config
    assert!(!d.join("o").exists());
}

#[test]
fn numerical_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let text = "[model]\nname = \"ou\"\ngamma = [0.0, -2.0]\n\n[simulation]\ndt = 0.1\nhorizon = 1.0\npaths = 10\n";
    fs::write(d.join("neg.toml"), text).unwrap();
    let out = divkernel(d, &["simulate", "--config", "neg.toml", "--out", "o"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn repro_mult1d_fills_every_bin() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&divkernel(d, &["repro", "sec4.1", "--out", "r"]));
    let tables = read_series(&read(&d.join("r"), "results.csv")[..]).unwrap();
    assert_eq!(tables.len(), 2);
    for t in &tables {
        assert_eq!(t.table.rows.len(), 10, "{}", t.name);
        for r in &t.table.rows {
            assert!(r.count >= 180 && r.mean.is_some() && r.se.is_some(), "{} bin {}: {r:?}", t.name, r.left);
        }
    }
}

#[test]
fn repro_fit_writes_history_and_data() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&divkernel(d, &["repro", "sec5.1", "--out", "f"]));
    let hist = String::from_utf8(read(&d.join("f"), "results.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert_eq!(lines[0], "iteration,gamma0,gamma1,grad0,grad1,distance");
    assert_eq!(lines.len(), 12);
    let data = String::from_utf8(read(&d.join("f"), "data.csv")).unwrap();
    assert_eq!(data.lines().count(), 201);
    let m: serde_json::Value = serde_json::from_slice(&read(&d.join("f"), "manifest.json")).unwrap();
    let (first, last) = (m["summary"]["initial_distance"].as_f64().unwrap(), m["summary"]["final_distance"].as_f64().unwrap());
    assert!(last < first, "{last} vs {first}");
}

#[test]
fn ergodic_run_reports_orbits_and_the_fd_check() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("erg.toml"), ERGODIC).unwrap();
    ok(&divkernel(d, &["ergodic", "--config", "erg.toml", "--out", "e"]));
    let rows = read_ergodic(&read(&d.join("e"), "results.csv")[..]).unwrap();
    let labels: Vec<&str> = rows.iter().map(|r| r.label.as_str()).collect();
    assert_eq!(labels, ["0", "1", "2", "combined", "fd"]);
    let orbit_mean = rows[..3].iter().map(|r| r.response).sum::<f64>() / 3.0;
    assert!((rows[3].response - orbit_mean).abs() < 1e-12);
    assert!(rows.iter().all(|r| r.response.is_finite()));
    let trace = String::from_utf8(read(&d.join("e"), "trace.csv")).unwrap();
    assert!(trace.starts_with("t,x0,x1,x2,x3,x4,x5\n"));
    assert!(read(&d.join("e"), "trace.svg").starts_with(b"<svg"));
}

#[test]
fn manifest_describes_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&divkernel(d, &["repro", "sec4.1", "--seed", "9", "--workers", "2", "--out", "r"]));
    let m: serde_json::Value = serde_json::from_slice(&read(&d.join("r"), "manifest.json")).unwrap();
    assert_eq!(m["command"], "linresp");
    assert_eq!(m["preset"], "sec4.1");
    assert_eq!(m["seed"], 9);
    assert_eq!(m["workers"], 2);
    assert_eq!(m["build"]["version"], env!("CARGO_PKG_VERSION"));
    assert!(m["build"]["git_describe"].as_str().is_some_and(|s| !s.is_empty()));
    assert!(m["wall_time_seconds"].as_f64().is_some_and(|t| t >= 0.0));
    assert_eq!(m["config"]["model"]["name"], "mult1d");
    for f in m["outputs"].as_array().unwrap() {
        assert!(d.join("r").join(f.as_str().unwrap()).exists(), "{f}");
    }
    // the stored config reproduces the run
    let stored = d.join("r").join("config.toml");
    ok(&divkernel(d, &["linresp", "--config", stored.to_str().unwrap(), "--out", "again"]));
    assert_eq!(read(&d.join("r"), "results.csv"), read(&d.join("again"), "results.csv"));
}

#[test]
fn oracle_commands_write_reference_series() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let text = "seed = 2\n\n[model]\nname = \"ou\"\n\n[simulation]\ndt = 0.01\nhorizon = 1.0\npaths = 4000\n\n[bins]\nlo = -2.0\nhi = 2.0\ncount = 6\n\n[oracle]\nkind = \"ou\"\n";
    fs::write(d.join("ou.toml"), text).unwrap();
    ok(&divkernel(d, &["oracle", "--config", "ou.toml", "--out", "o"]));
    let tables = read_series(&read(&d.join("o"), "results.csv")[..]).unwrap();
    let names: Vec<&str> = tables.iter().map(|t| t.name.as_str()).collect();
    assert_eq!(names, ["score", "kernel_d0", "kernel_d1", "ou_score", "ou_drift", "ou_sigma"]);
    // the closed-form score is odd about the stationary mean 0
    let s = &tables[3].table.rows;
    assert!((s[0].mean.unwrap() + s[5].mean.unwrap()).abs() < 1e-9);
}

#[test]
fn shipped_configs_validate() {
    use divkernel_cli::config::{load, Command as Cmd};
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let expected = [
        ("ou_oracle.toml", Cmd::Oracle),
        ("mult1d_fd.toml", Cmd::Oracle),
        ("lorenz96_ergodic.toml", Cmd::Ergodic),
        ("proto5d_fit.toml", Cmd::Fit),
    ];
    for (name, cmd) in expected {
        let (cfg, text) = load(&dir.join(name)).unwrap();
        cfg.validate(cmd, Some(&text)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}
