use std::path::Path;
use std::process::{Command, Output};

fn heat_spde(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heat-spde"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn passing_suite_exits_zero_and_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = heat_spde(&["assemble-check"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).lines().all(|l| l.starts_with("PASS") || l.starts_with("report:")));
    let dir = tmp.path().join("assemble-check/run-0001");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["header"]["suite"], "assemble-check");
    assert_eq!(report["passed"], true);
    let csv = std::fs::read_to_string(dir.join("elliptic_f_phi_1.csv")).unwrap();
    assert!(csv.starts_with("h,error,stderr\n"));
}

#[test]
fn failing_criterion_exits_two() {
    // 200 samples leave the weak estimates dominated by Monte Carlo noise
    let tmp = tempfile::tempdir().unwrap();
    let o = heat_spde(&["weak-rate", "--set", "monte_carlo.samples=200", "--set", "ladder.max_level=6"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL weak:gauss stderr"));
}

#[test]
fn invalid_input_exits_one_with_located_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let o = heat_spde(&["strong-rate", "--set", "scheme.dt=-0.1"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--set scheme.dt: must be positive"), "{}", stderr(&o));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[scheme]\nkind = \"exponential-ou\"\n\n[ladder]\nmax_level = 2\n").unwrap();
    let o = heat_spde(&["strong-rate", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.toml:5: ladder.max_level"), "{}", stderr(&o));

    let o = heat_spde(&["no-such-suite"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn reruns_are_byte_identical_and_append_only() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["strong-rate", "--set", "monte_carlo.samples=100", "--set", "ladder.max_level=6", "--seed", "3"];
    let codes: Vec<Option<i32>> = ["1", "2"]
        .iter()
        .map(|threads| {
            let mut a = args.to_vec();
            a.extend(["--threads", threads]);
            heat_spde(&a, tmp.path()).status.code()
        })
        .collect();
    assert_eq!(codes[0], codes[1]);
    assert_ne!(codes[0], Some(1));
    let dir = tmp.path().join("strong-rate");
    for name in ["report.json", "strong.csv"] {
        let a = std::fs::read(dir.join("run-0001").join(name)).unwrap();
        let b = std::fs::read(dir.join("run-0002").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn output_flag_wins_over_environment() {
    let flag = tempfile::tempdir().unwrap();
    let env = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_heat-spde"))
        .args(["assemble-check", "--out"])
        .arg(flag.path())
        .env("HEAT_SPDE_OUT", env.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(flag.path().join("assemble-check/run-0001/report.json").exists());
    assert!(!env.path().join("assemble-check").exists());

    let o = Command::new(env!("CARGO_BIN_EXE_heat-spde"))
        .arg("assemble-check")
        .env("HEAT_SPDE_OUT", env.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(env.path().join("assemble-check/run-0001/report.json").exists());
}
