use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_airbreathe"))
}

const PRESET: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/configs/desk_logistic.toml");

#[test]
fn run_prints_summary_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = bin()
        .args(["run", PRESET, "--seed", "5", "--override", "rounds=5"])
        .arg("--override")
        .arg(format!("output.csv=\"{}\"", csv.display()))
        .arg("--override")
        .arg(format!("output.summary=\"{}\"", dir.path().join("t.txt").display()))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("scheme: adaptive_bd"));
    assert!(stdout.contains("master_seed = 5"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 6);

    let plots = dir.path().join("plots");
    let out = bin().args(["plotdata"]).arg(&csv).arg("--out-dir").arg(&plots).output().unwrap();
    assert!(out.status.success());
    assert!(plots.join("t.csv").exists());
}

#[test]
fn config_errors_exit_with_one() {
    let out = bin().args(["run", PRESET, "--override", "rounds=0"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rounds"));
    let out = bin().args(["run", "/nonexistent.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_telemetry_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "a,b\n1,2\n").unwrap();
    let out = bin().arg("plotdata").arg(&bad).arg("--out-dir").arg(dir.path()).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["sweep", PRESET, "--sir-db", "-20,-5", "--depth", "1,8", "--override", "rounds=3", "--out-dir"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["desk_logistic_sir-20_g1", "desk_logistic_sir-5_g8"] {
        assert!(dir.path().join(format!("{name}.csv")).exists(), "{name}");
    }
}

#[test]
fn verify_reports_selected_checks() {
    let out = bin().args(["verify", "--only", "4,5"]).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
}
