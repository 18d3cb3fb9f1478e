use std::path::Path;
use std::process::{Command, Output};

use bclab::output::{ENSEMBLE, MANIFEST};
use bclab::{load_config, report, run_experiment, CliError, RunManifest};

fn bclab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bclab"))
        .args(args)
        .output()
        .unwrap()
}

fn small_run(dir: &Path, extra: &[&str]) -> Vec<String> {
    let mut o = vec![
        format!("output.dir=\"{}\"", dir.display()),
        "ensemble.size=4".to_string(),
        "ensemble.orbit_length=20000".to_string(),
    ];
    o.extend(extra.iter().map(|s| s.to_string()));
    o
}

#[test]
fn empty_ensemble_has_nothing_to_report() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = load_config("thm1", &small_run(&dir, &["ensemble.size=0"])).unwrap();
    let manifest = run_experiment(&cfg, 1).unwrap();
    assert!(manifest.orbits.is_empty());
    let rep = report(&dir).unwrap();
    assert_eq!(rep.lines.last().unwrap(), "nothing to report");
    assert!(rep.checks.is_empty());
}

#[test]
fn identical_configs_give_identical_digests() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let digests = |workers: usize| {
        let cfg = load_config("custom", &small_run(&dir, &[])).unwrap();
        run_experiment(&cfg, workers).unwrap();
        let m = RunManifest::read(&dir).unwrap();
        assert!(m.verify(&dir).is_empty());
        m.files
            .into_iter()
            .map(|f| (f.path, f.sha256))
            .collect::<Vec<_>>()
    };
    let a = digests(1);
    assert!(a.iter().any(|(p, _)| p == ENSEMBLE));
    assert_eq!(a, digests(1));
    assert_eq!(a, digests(3));
}

#[test]
fn report_refuses_incomplete_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    let cfg = load_config("custom", &small_run(&dir, &[])).unwrap();
    run_experiment(&cfg, 1).unwrap();
    std::fs::remove_file(dir.join("traces/orbit_00002.csv")).unwrap();
    match report(&dir) {
        Err(CliError::Missing(files)) => assert!(files.iter().any(|f| f.contains("orbit_00002"))),
        other => panic!("{other:?}"),
    }
    let out = bclab(&["report", dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));

    std::fs::remove_file(dir.join(MANIFEST)).unwrap();
    assert!(report(&dir).is_err());
}

#[test]
fn tampered_outputs_are_detected() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("run");
    run_experiment(&load_config("custom", &small_run(&dir, &[])).unwrap(), 1).unwrap();
    std::fs::write(dir.join(ENSEMBLE), b"{}").unwrap();
    assert!(report(&dir).is_err());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("ok");
    let set = |s: String| vec!["--set".to_string(), s];
    let mut args = vec!["run".to_string(), "custom".to_string()];
    for s in small_run(&dir, &[]) {
        args.extend(set(s));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_bclab"))
        .args(&args)
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(out.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS"));

    // A threshold no run can meet turns the verdict into FAIL.
    let dir = tmp.path().join("fail");
    let mut args = vec!["run".to_string(), "custom".to_string()];
    for s in small_run(&dir, &["checks.median_ratio=[5.0, 6.0]"]) {
        args.extend(set(s));
    }
    let out = Command::new(env!("CARGO_BIN_EXE_bclab"))
        .args(&args)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));

    assert_eq!(
        bclab(&["run", "kim_counterexample", "--set", "map.alpha=2.0"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(bclab(&["run", "no_such_preset"]).status.code(), Some(2));
    assert_eq!(
        bclab(&["validate-config", "thm1", "--set", "map.alpha=0.5"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        bclab(&["validate-config", "thm1", "--set", "ensemble.bogus=1"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        bclab(&["validate-config", "kim_counterexample"])
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn config_errors_leave_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bad");
    let err = load_config("thm1", &small_run(&dir, &["schedule.exponent=1.5"]))
        .and_then(|cfg| run_experiment(&cfg, 1).map(|_| ()))
        .unwrap_err();
    assert!(err.is_config(), "{err}");
    assert!(!dir.join(MANIFEST).exists());
}

#[test]
fn list_presets_names_every_preset() {
    let out = bclab(&["list-presets"]);
    let text = String::from_utf8_lossy(&out.stdout);
    for name in [
        "thm1",
        "thm2",
        "thm3_returns",
        "thm4_short",
        "kim_counterexample",
        "chmv_counterexample",
        "prop1_expanding",
        "iid_baseline",
        "custom",
    ] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name}");
    }
}
