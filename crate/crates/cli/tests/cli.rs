use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn case_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/cases/case33.toml")
}

fn thermopf(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_thermopf"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn with_case<'a>(command: &'a str, extra: &[&'a str], case: &'a str) -> Vec<&'a str> {
    let mut args = vec![command, "--case", case];
    args.extend_from_slice(extra);
    args
}

fn stdout_value(output: &Output, key: &str) -> f64 {
    let text = String::from_utf8_lossy(&output.stdout);
    text.lines()
        .find_map(|l| {
            l.strip_prefix(key)?
                .trim_start_matches([' ', '=', ':'])
                .trim()
                .parse()
                .ok()
        })
        .unwrap_or_else(|| panic!("no {key} in output:\n{text}"))
}

#[test]
fn thermal_solve_writes_every_module() {
    let dir = tempfile::tempdir().unwrap();
    let case = case_path();
    let out = thermopf(
        &with_case("thermal-solve", &[], case.to_str().unwrap()),
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let temps = thermopf::report::read_temperatures(&dir.path().join("temperatures.csv")).unwrap();
    assert_eq!(temps.len(), 10);
    assert!(temps.iter().all(|t| *t > 308.0));
}

#[test]
fn policy_trades_current_for_fan() {
    let dir = tempfile::tempdir().unwrap();
    let case = case_path();
    let out = thermopf(
        &with_case(
            "policy",
            &["--target-scale", "0.95", "--weight", "0.25"],
            case.to_str().unwrap(),
        ),
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(stdout_value(&out, "delta_fan_rpm") > 0.0);
    assert!(stdout_value(&out, "delta_squared_current_a2") < 0.0);
    assert!(dir.path().join("policy.csv").exists());
}

#[test]
fn two_layer_reruns_are_byte_identical() {
    let case = case_path();
    let files = [
        "two_layer.csv",
        "sweep_weight.csv",
        "cost_vs_weight.csv",
        "sweep_target.csv",
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let out = thermopf(
            &with_case("two-layer", &[], case.to_str().unwrap()),
            dir.path(),
        );
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let bytes: Vec<Vec<u8>> = files
            .iter()
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
            .collect();
        runs.push(bytes);
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn compare_writes_a_timing_free_summary() {
    let dir = tempfile::tempdir().unwrap();
    let case = case_path();
    let out = thermopf(
        &with_case("compare", &[], case.to_str().unwrap()),
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(dir.path().join("comparison.txt")).unwrap();
    assert!(text.contains("nested"), "{text}");
    assert!(!text.contains(" ms") && !text.contains("elapsed"), "{text}");
    assert!(dir.path().join("mixed.csv").exists());
}

#[test]
fn opf_writes_dispatch_and_voltages() {
    let dir = tempfile::tempdir().unwrap();
    let case = case_path();
    let out = thermopf(
        &with_case("opf", &["--current", "50"], case.to_str().unwrap()),
        dir.path(),
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = thermopf::report::read_table(&dir.path().join("voltages.csv")).unwrap();
    assert_eq!(table.records.len(), 33);
    assert!(dir.path().join("dispatch.csv").exists());
}

#[test]
fn bad_input_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let case = case_path();
    let missing = dir.path().join("nope.toml");
    let out = thermopf(
        &with_case("thermal-solve", &[], missing.to_str().unwrap()),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = thermopf(
        &with_case("thermal-solve", &["--bogus"], case.to_str().unwrap()),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
    let out = thermopf(&["thermal-solve"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = thermopf(
        &with_case("policy", &["--weight", "-1"], case.to_str().unwrap()),
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn infeasible_runs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let case = case_path();
    // runaway: Joule feedback overwhelms convection
    let out = thermopf(
        &with_case(
            "thermal-solve",
            &["--current", "1000"],
            case.to_str().unwrap(),
        ),
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // the implied ESS power exceeds its rating
    let out = thermopf(
        &with_case("opf", &["--current", "60"], case.to_str().unwrap()),
        dir.path(),
    );
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn case_file_is_left_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let copy = dir.path().join("case.toml");
    std::fs::copy(case_path(), &copy).unwrap();
    let before = std::fs::read(&copy).unwrap();
    let out = thermopf(
        &with_case("two-layer", &[], copy.to_str().unwrap()),
        dir.path(),
    );
    assert!(out.status.success());
    assert_eq!(std::fs::read(&copy).unwrap(), before);
}
