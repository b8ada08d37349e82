use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn stcm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stcm")).args(args).output().expect("binary runs")
}

fn run_small(out: &Path, extra: &[&str]) -> Output {
    let scenario = data("small.json");
    let mut args = vec!["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    stcm(&args)
}

#[test]
fn csv_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m.csv");
    let o = run_small(&out, &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let got = std::fs::read_to_string(&out).unwrap();
    let want = std::fs::read_to_string(data("small.golden.csv")).unwrap();
    assert_eq!(got, want);
    // 3 Globals, each with 4 ledgers and the marketplace row
    assert_eq!(got.lines().count(), 1 + 3 * 5);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("double spends      1"));
    assert!(stdout.contains("binary units"));
}

#[test]
fn seed_override_changes_output() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    assert_eq!(run_small(&a, &["--seed", "2024"]).status.code(), Some(0));
    assert_eq!(run_small(&b, &["--seed", "9"]).status.code(), Some(0));
    let golden = std::fs::read_to_string(data("small.golden.csv")).unwrap();
    assert_eq!(std::fs::read_to_string(&a).unwrap(), golden);
    assert_ne!(std::fs::read_to_string(&b).unwrap(), golden);
}

#[test]
fn trace_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("t.log");
    let o = run_small(&dir.path().join("m.csv"), &["--trace", trace.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(trace).unwrap();
    assert!(text.lines().any(|l| l == "45 fault-start pl3 offline"));
    assert!(text.lines().any(|l| l.starts_with("50 primary psl1 failed absent 1")));
}

#[test]
fn missing_file_exits_1() {
    let o = stcm(&["run", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cannot read"));
}

#[test]
fn invalid_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let p = data("bad_shape.json");
    let o = stcm(&["run", "--scenario", p.to_str().unwrap(), "--out", dir.path().join("x.csv").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invalid scenario"));
}

#[test]
fn invariant_breach_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let p = data("breach.json");
    let o = stcm(&["run", "--scenario", p.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("invariant breach at tick 10"));
    assert!(!out.exists());
}

#[test]
fn growth_reports_extrapolation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let o = stcm(&["growth", "--transactions", "6000", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    // 6000 x 384 B
    assert!(stdout.contains("unique content     2304000 B"), "{stdout}");
    assert!(stdout.contains("unique content   10.73 GiB (384 B/block)"));
    assert!(stdout.contains("legacy platform  114.44 TiB (4194304 B/block)"));
    assert!(stdout.contains("ratio            10923x"));
    assert!(out.exists());
}

#[test]
fn growth_contract_preset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.csv");
    let o = stcm(&["growth", "--transactions", "600", "--legacy-block-bytes", "22kb", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    // 30e6 x 22,000 B
    assert!(String::from_utf8_lossy(&o.stdout).contains("legacy platform  0.60 TiB (22000 B/block)"));
}

#[test]
fn growth_rejects_small_psl() {
    let o = stcm(&["growth", "--transactions", "10", "--psl-size", "1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = stcm(&["growth", "--transactions", "0"]);
    assert_eq!(o.status.code(), Some(2));
}
