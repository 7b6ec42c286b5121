use std::path::Path;
use std::process::Command;

use twofold::cli::{cmd_monitor, cmd_report, cmd_run, cmd_simulate, resolve_config, GlobalArgs};
use twofold::config::{Config, Segment};
use twofold::runtime::{fit_index, read_report, REPORT_FILE, STEPS_FILE};
use twofold::{Dataset, Error, VerdictTag};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_twofold"))
}

fn small_config() -> Config {
    let mut c = Config::desk();
    c.collect_len = 1000;
    c.schedule = vec![
        Segment::new("collect D1", 0, 1000),
        Segment::new("monitor regime 1", 0, 200),
        Segment::new("regime shift", 1, 1200),
        Segment::new("test day 1", 0, 200),
        Segment::new("test day 2", 1, 200),
    ];
    c.gp.retrain_every = 25;
    c.gp.k_max = 100;
    c
}

fn globals(config: Option<&Path>, seed: Option<u64>) -> GlobalArgs {
    GlobalArgs {
        config: config.map(Path::to_path_buf),
        preset: None,
        seed,
        out: None,
    }
}

#[test]
fn simulate_writes_header_plus_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let status = bin()
        .args(["simulate", "--length", "10", "--regime", "1", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 11);
    assert!(text.lines().next().unwrap().starts_with("k,u_1,"));
    let d = Dataset::load_csv(&out).unwrap();
    assert_eq!((d.len(), d.input_dim(), d.output_dim()), (10, 3, 3));
}

#[test]
fn simulate_round_trips_and_depends_on_seed() {
    let dir = tempfile::tempdir().unwrap();
    let c = Config::desk();
    let a = cmd_simulate(&c, 0, 50, &dir.path().join("a.csv")).unwrap();
    let back = Dataset::load_csv(&dir.path().join("a.csv")).unwrap();
    for (x, y) in a.outputs.iter().flatten().zip(back.outputs.iter().flatten()) {
        assert!((x - y).abs() <= 1e-8 * x.abs().max(1.0));
    }
    let again = cmd_simulate(&c, 0, 50, &dir.path().join("b.csv")).unwrap();
    assert_eq!(a, again);
    let mut other = c.clone();
    other.seed += 1;
    let b = cmd_simulate(&other, 0, 50, &dir.path().join("c.csv")).unwrap();
    assert_ne!(a.outputs, b.outputs);
    assert!(matches!(cmd_simulate(&c, 0, 0, &dir.path().join("z.csv")), Err(Error::Config { .. })));
}

#[test]
fn invalid_theta_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = Config::desk();
    c.slow.theta = 1.5;
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, toml::to_string(&c).unwrap()).unwrap();
    match resolve_config(&globals(Some(&path), None)) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "slow.theta"),
        other => panic!("{other:?}"),
    }
    let out = bin().arg("--config").arg(&path).args(["simulate", "--length", "5"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("slow.theta"));
}

#[test]
fn seed_flag_overrides_config() {
    let c = resolve_config(&globals(None, Some(7))).unwrap();
    assert_eq!(c.seed, 7);
    assert_eq!(c.preset, Config::desk().preset);
}

#[test]
fn report_on_missing_run_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(cmd_report(dir.path()), Err(Error::Io { .. })));
    assert!(matches!(cmd_report(&dir.path().join("nope")), Err(Error::Io { .. })));
}

#[test]
fn run_writes_artifacts_and_report_matches_log() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config();
    let report = cmd_run(&c, dir.path(), false).unwrap();
    for f in [REPORT_FILE, STEPS_FILE, "config.toml", "ensemble/manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    assert_eq!(read_report(dir.path()).unwrap(), report);
    let text = cmd_report(dir.path()).unwrap();
    assert!(text.contains("M_AVG") && text.contains("M_GP"));

    let mut rdr = csv::Reader::from_path(dir.path().join(STEPS_FILE)).unwrap();
    let header = rdr.headers().unwrap().clone();
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    let (yp, y) = ((1..=3).map(|i| col(&format!("y_p_{i}"))).collect::<Vec<_>>(), (1..=3).map(|i| col(&format!("y_{i}"))).collect::<Vec<_>>());
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), report.samples);
    let [s, e] = report.test_window;
    let parse = |r: &csv::StringRecord, idx: &[usize]| idx.iter().map(|&i| r[i].parse::<f64>().unwrap()).collect::<Vec<f64>>();
    let measured: Vec<Vec<f64>> = rows[s..e].iter().map(|r| parse(r, &yp)).collect();
    let combined: Vec<Vec<f64>> = rows[s..e].iter().map(|r| parse(r, &y)).collect();
    let fit = fit_index(&combined, &measured).unwrap().mean;
    assert!((fit - report.model_fit("M").unwrap()).abs() < 0.1, "{fit}");
}

#[test]
fn resume_and_monitor_use_persisted_ensemble() {
    let dir = tempfile::tempdir().unwrap();
    let c = small_config();
    let first = cmd_run(&c, dir.path(), false).unwrap();
    assert_eq!(first.member_count(), 2);
    let mut again = c.clone();
    again.schedule = vec![Segment::new("test day 1", 0, 200), Segment::new("test day 2", 1, 200)];
    again.test_len = 400;
    let resumed = cmd_run(&again, dir.path(), true).unwrap();
    assert_eq!(resumed.count(VerdictTag::NewRegime), 0);
    assert_eq!(resumed.member_count(), 2);

    let data = dir.path().join("r1.csv");
    cmd_simulate(&c, 1, 300, &data).unwrap();
    let v = cmd_monitor(&dir.path().join("ensemble"), &data, c.slow.theta).unwrap();
    assert_eq!(v.input_fractions.len(), 2);

    let empty = tempfile::tempdir().unwrap();
    assert!(cmd_run(&c, empty.path(), true).is_err());
}
