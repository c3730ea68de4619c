use std::io::Write;

use proptest::prelude::*;

use thermopf::case::{load_case, load_case_file, CASE33};
use thermopf::network::{assemble_opf, solve_opf, EssConfig, GridCase};

fn case33() -> (GridCase, EssConfig) {
    let case = load_case(CASE33).unwrap();
    (case.grid, case.ess.unwrap())
}

#[test]
fn feeder_without_storage_imports_the_load() {
    let (grid, _) = case33();
    let d = solve_opf(&grid, None, None).unwrap();
    let s = &d.steps[0];
    assert!((s.import_mw - 3.715).abs() < 1e-7);
    assert!((s.q_grid_mvar - 2.3).abs() < 1e-7);
    assert_eq!(s.export_mw, 0.0);
    assert!(s.v_sq.iter().all(|v| (0.81..=1.21).contains(v)));
    assert!((d.total_cost - 3.715 * 30.0 / 12.0).abs() < 1e-9);
}

#[test]
fn voltages_follow_the_radial_recursion() {
    let (grid, _) = case33();
    let d = solve_opf(&grid, None, None).unwrap();
    let topo = grid.topology().unwrap();
    let s = &d.steps[0];
    // rebuild every voltage from the slack by walking the tree
    let mut v = vec![f64::NAN; grid.buses.len()];
    v[topo.slack] = grid.v_slack;
    let mut changed = true;
    while changed {
        changed = false;
        for (l, &(parent, child)) in topo.oriented.iter().enumerate() {
            if v[child].is_nan() && !v[parent].is_nan() {
                let line = &grid.lines[l];
                v[child] = v[parent] - 2.0 * (line.r * s.line_p[l] + line.x * s.line_q[l]);
                changed = true;
            }
        }
    }
    for (a, b) in v.iter().zip(&s.v_sq) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn doubling_loads_doubles_import() {
    let (grid, _) = case33();
    let mut doubled = grid.clone();
    for b in &mut doubled.buses {
        b.p_load *= 2.0;
        b.q_load *= 2.0;
    }
    doubled.v_min_sq = 0.5;
    let one = solve_opf(&grid, None, None).unwrap();
    let two = solve_opf(&doubled, None, None).unwrap();
    assert!((two.steps[0].import_mw - 2.0 * one.steps[0].import_mw).abs() < 1e-12);
}

#[test]
fn multi_step_storage_respects_soc_limits() {
    let (mut grid, ess) = case33();
    grid.horizon = 6;
    // make charging pay so the unit fills up and hits its ceiling
    grid.tariffs.ess_charge = 40.0;
    let d = solve_opf(&grid, Some(&ess), None).unwrap();
    let soc = d.soc_trajectory();
    assert_eq!(soc.len(), 7);
    assert!(soc
        .iter()
        .all(|e| *e >= ess.soc_min - 1e-9 && *e <= ess.soc_max + 1e-9));
    assert!(d.steps.iter().all(|s| !(s.charging && s.discharging)));
    assert!(d.steps[0].charging);
    assert!((soc[6] - ess.soc_max).abs() < 1e-6);
}

#[test]
fn fixed_magnitude_adds_two_binaries_per_step() {
    let (mut grid, ess) = case33();
    grid.horizon = 3;
    let p = assemble_opf(&grid, Some(&ess), Some(51.8)).unwrap();
    assert_eq!(p.lp.binaries.len(), 6);
    assert_eq!(p.layout.steps.len(), 3);
}

#[test]
fn tables_load_from_csv_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = std::fs::File::create(dir.path().join("lines.csv")).unwrap();
    writeln!(
        lines,
        "from,to,r_ohm,x_ohm\n1,2,0.0922,0.047\n2,3,0.493,0.2511"
    )
    .unwrap();
    let mut loads = std::fs::File::create(dir.path().join("loads.csv")).unwrap();
    writeln!(loads, "bus,p_kw,q_kvar\n# two loads\n2,100,60\n3,90,40").unwrap();
    let case_path = dir.path().join("tiny.toml");
    std::fs::write(
        &case_path,
        "[network]\nlines_file = \"lines.csv\"\nloads_file = \"loads.csv\"\n[ess]\nbus = 3\n",
    )
    .unwrap();
    let case = load_case_file(&case_path).unwrap();
    assert_eq!(case.grid.buses.len(), 3);
    assert_eq!(case.grid.lines.len(), 2);
    let (p, q) = case.grid.total_load();
    assert!((p - 0.19).abs() < 1e-12 && (q - 0.1).abs() < 1e-12);
    let d = solve_opf(&case.grid, case.ess.as_ref(), None).unwrap();
    assert!((d.steps[0].import_mw - 0.19).abs() < 1e-9);
}

#[test]
fn broken_csv_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("lines.csv"),
        "from,to,r_ohm,x_ohm\n1,2,abc,0.1\n",
    )
    .unwrap();
    let case_path = dir.path().join("bad.toml");
    std::fs::write(&case_path, "[network]\nlines_file = \"lines.csv\"\n").unwrap();
    let err = load_case_file(&case_path).unwrap_err().to_string();
    assert!(
        err.contains("lines.csv") && err.contains("record 1"),
        "{err}"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dispatch_invariants_hold(
        buy in 20.0..40.0f64,
        sell in 10.0..20.0f64,
        dis in 10.0..50.0f64,
        ch in 10.0..50.0f64,
        magnitude in prop::option::of(0.0..60.0f64),
        horizon in 1usize..4,
        allow_idle in any::<bool>(),
    ) {
        let (mut grid, mut ess) = case33();
        grid.tariffs.grid_buy = buy;
        grid.tariffs.grid_sell = sell;
        grid.tariffs.ess_discharge = dis;
        grid.tariffs.ess_charge = ch;
        grid.horizon = horizon;
        ess.allow_idle = allow_idle;
        ess.initial_soc = 30.0;
        // extract_solution re-verifies balance, SOC and exclusivity
        let d = match solve_opf(&grid, Some(&ess), magnitude) {
            Ok(d) => d,
            // forced operation can exhaust the SOC window
            Err(thermopf::network::NetworkError::NotOptimal(_)) => return Ok(()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let mut total = 0.0;
        for s in &d.steps {
            prop_assert!(!(s.charging && s.discharging));
            if let Some(m) = magnitude {
                let moved = s.charge_kw + s.discharge_kw;
                prop_assert!(moved.abs() < 1e-7 || (moved - m).abs() < 1e-7);
            }
            total += grid.dt_hours * (buy * s.import_mw - sell * s.export_mw
                + (dis * s.discharge_kw - ch * s.charge_kw) / 1000.0);
        }
        prop_assert!((total - d.total_cost).abs() < 1e-9);
        prop_assert!((d.grid_cost + d.ess_cost - d.total_cost).abs() < 1e-12);
    }
}
