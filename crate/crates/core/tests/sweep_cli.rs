mod common;

use std::path::Path;
use std::process::Command;

use prodloom::sweep::{
    emit_report, figure_specs, prepare, run_single_tau, run_threshold_sweep, DemandMode, PipelineConfig,
    SweepTable, SWEEP_FILE,
};

use common::*;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_prodloom"))
}

fn run(args: &[&str]) -> i32 {
    bin().args(args).env_remove("PRODLOOM_SEED").output().unwrap().status.code().unwrap()
}

fn read(dir: &Path, f: &str) -> String {
    std::fs::read_to_string(dir.join(f)).unwrap_or_else(|e| panic!("{f}: {e}"))
}

#[test]
fn sweep_rows_equal_standalone_runs() {
    let out = small_synth(51, 200);
    let config = config_for(&out);
    let taus = [0.2, 0.3, 0.7, 1.0];
    let sweep = run_threshold_sweep(&out.panel, &taus, &config).unwrap();
    let prep = prepare(&out.panel, &config).unwrap();
    for (row, &tau) in sweep.rows.iter().zip(&taus) {
        let alone = run_single_tau(&prep, tau, &config).unwrap().row();
        assert_eq!(row.to_csv(), alone.to_csv());
    }
}

#[test]
fn calibrated_sweep_holds_demand_fixed() {
    let out = small_synth(52, 200);
    let config = PipelineConfig {
        mode: DemandMode::Calibrate { alpha: 0.5, sigma: 0.4 },
        ..config_for(&out)
    };
    let sweep = run_threshold_sweep(&out.panel, &[0.0, 0.25, 0.5, 0.75, 1.0], &config).unwrap();
    // Nothing survives tau = 0, so that row stops before demand.
    assert!(sweep.rows[0].error.as_deref().unwrap().contains("no input codes"));
    for r in &sweep.rows[1..] {
        assert_eq!(r.alpha, Some(0.5));
        assert_eq!(r.sigma, Some(0.4));
        assert_eq!(r.alpha_se, None);
        assert_eq!(r.f_p, None);
    }
    // Demand is fixed, so the production stage only sees the instrument set.
    assert!(sweep.rows[1..].iter().all(|r| r.beta.is_some()));

    let bad = PipelineConfig {
        mode: DemandMode::Calibrate { alpha: 0.5, sigma: 1.2 },
        ..config
    };
    assert!(run_threshold_sweep(&out.panel, &[0.5], &bad).is_err());
}

#[test]
fn report_round_trips_byte_identically() {
    let out = small_synth(53, 150);
    let sweep = run_threshold_sweep(&out.panel, &[0.1, 0.3, 0.6, 1.0], &config_for(&out)).unwrap();
    let echo = vec![("command".to_string(), "sweep".to_string())];
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let names = emit_report(&sweep, &echo, a.path()).unwrap();
    assert_eq!(names.len(), 8);
    for n in &names {
        assert!(a.path().join(n).exists(), "{n}");
    }
    let loaded = SweepTable::load(&a.path().join(SWEEP_FILE)).unwrap();
    emit_report(&loaded, &echo, b.path()).unwrap();
    for n in &names {
        assert_eq!(read(a.path(), n), read(b.path(), n), "{n}");
    }
}

#[test]
fn missing_estimates_render_as_gaps() {
    let out = small_synth(54, 150);
    let mut sweep = run_threshold_sweep(&out.panel, &[0.5, 1.0], &config_for(&out)).unwrap();
    sweep.rows[0].alpha = None;
    sweep.rows[0].alpha_se = None;
    sweep.rows[0].beta = None;
    let specs = figure_specs(&sweep);
    assert_eq!(specs.len(), 6);
    let alpha_fig = &specs.iter().find(|(_, s)| s.starts_with("figure=fig1a\n")).unwrap().1;
    let line = alpha_fig.lines().find(|l| l.starts_with("0.5,")).unwrap();
    assert!(line.split(',').skip(1).all(str::is_empty), "{line}");
    let line = alpha_fig.lines().find(|l| l.starts_with("1,")).unwrap();
    assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().is_ok()), "{line}");
}

#[test]
fn cli_estimate_sweep_and_report() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let d = data.to_str().unwrap();
    assert_eq!(run(&["synth", "--seed", "3", "--plants", "250", "--out", d]), 0);

    let est = root.path().join("est");
    let e = est.to_str().unwrap();
    assert_eq!(run(&["estimate", "--data", d, "--tau", "1", "--out", e]), 0);
    let manifest = read(&est, "manifest.txt");
    for f in ["demand_estimate.csv", "production_estimate.csv", "tfpr.csv", "table1.csv", "table2.csv"] {
        let line = manifest.lines().find(|l| l.starts_with(&format!("sha256.{f}="))).unwrap();
        assert_eq!(line.split_once('=').unwrap().1, prodloom::sweep::sha256_hex(read(&est, f).as_bytes()));
    }
    assert_eq!(run(&["estimate", "--data", d, "--tau", "1.5", "--out", e]), 1);
    assert_eq!(run(&["estimate", "--data", d, "--tau", "1", "--out", e, "--bootstrap", "5"]), 1);

    let sw = root.path().join("sweep");
    let s = sw.to_str().unwrap();
    let code = run(&["sweep", "--data", d, "--grid", "0:1:0.25", "--calibrate", "alpha=0.2,sigma=0.5", "--out", s]);
    assert_eq!(code, 0);
    let table = SweepTable::load(&sw.join(SWEEP_FILE)).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert!(table.rows[1..].iter().all(|r| r.alpha == Some(0.2) && r.sigma == Some(0.5)));

    let rep = root.path().join("report");
    assert_eq!(run(&["report", "--from", s, "--out", rep.to_str().unwrap()]), 0);
    for f in std::fs::read_dir(&sw).unwrap() {
        let name = f.unwrap().file_name().into_string().unwrap();
        assert_eq!(read(&sw, &name), read(&rep, &name), "{name}");
    }
}

#[test]
fn identical_runs_write_identical_manifests() {
    let root = tempfile::tempdir().unwrap();
    let data = root.path().join("data");
    let d = data.to_str().unwrap();
    assert_eq!(run(&["synth", "--seed", "4", "--plants", "150", "--out", d]), 0);
    let mut manifests = Vec::new();
    for (i, jobs) in ["1", "2"].iter().enumerate() {
        let out = root.path().join(format!("run{i}"));
        let code = run(&[
            "sweep", "--data", d, "--grid", "0.5:1:0.25", "--jobs", jobs, "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        manifests.push(read(&out, "manifest.txt"));
    }
    assert_eq!(manifests[0], manifests[1]);
    assert!(manifests[0].contains("sha256.outputs.csv="));
}
