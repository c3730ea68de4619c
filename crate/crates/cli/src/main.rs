use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use thermopf::case::{load_case_file, Case};
use thermopf::control::{apply_effort, compute_effort_coefficients, optimal_policy, Reduction};
use thermopf::coordinator::{compare, run_mixed, run_two_layer, RunReport};
use thermopf::network::solve_opf;
use thermopf::report::{self, format_number};
use thermopf::thermal::OperatingPoint;
use thermopf::Error;

#[derive(Debug, Parser)]
#[command(
    name = "thermopf",
    version,
    about = "Battery rack thermal control and grid dispatch"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Case file (TOML).
    #[arg(long)]
    case: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Steady-state module temperatures.
    ThermalSolve {
        #[command(flatten)]
        common: Common,
        /// Fan speed (rpm).
        #[arg(long)]
        fan: Option<f64>,
        /// Module current (A).
        #[arg(long)]
        current: Option<f64>,
    },
    /// One step of the control policy toward a scaled reference.
    Policy {
        #[command(flatten)]
        common: Common,
        /// Starting fan speed (rpm).
        #[arg(long)]
        fan: Option<f64>,
        /// Starting module current (A).
        #[arg(long)]
        current: Option<f64>,
        /// Target scaling s in (0, 1].
        #[arg(long)]
        target_scale: Option<f64>,
        /// Effort weight c > 0.
        #[arg(long)]
        weight: Option<f64>,
        /// weighted_mean[:w1,..], hottest, least_squares or node:<k>.
        #[arg(long)]
        reduction: Option<Reduction>,
    },
    /// Dispatch OPF; with --current the ESS power magnitude is fixed.
    Opf {
        #[command(flatten)]
        common: Common,
        /// Module current (A) that fixes the ESS power magnitude.
        #[arg(long)]
        current: Option<f64>,
        /// Number of dispatch steps.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Two-layer sweep over target scalings and weights.
    TwoLayer {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
    /// Mixed grid search over fan speed and current.
    Mixed {
        #[command(flatten)]
        common: Common,
        /// Number of dispatch steps.
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Two-layer sweep, mixed search on a covering grid, and the comparison.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Starting fan speed (rpm).
    #[arg(long)]
    fan: Option<f64>,
    /// Starting module current (A).
    #[arg(long)]
    current: Option<f64>,
    /// Scaling whose weight sweep goes to sweep_weight.csv and cost_vs_weight.csv.
    #[arg(long)]
    target_scale: Option<f64>,
    /// Weight whose scaling sweep goes to sweep_target.csv.
    #[arg(long)]
    weight: Option<f64>,
    /// weighted_mean[:w1,..], hottest, least_squares or node:<k>.
    #[arg(long)]
    reduction: Option<Reduction>,
    /// Number of dispatch steps.
    #[arg(long)]
    horizon: Option<usize>,
}

fn load(common: &Common) -> Result<Case, Error> {
    let case = load_case_file(&common.case)?;
    std::fs::create_dir_all(&common.out).map_err(|source| report::ReportError::Io {
        path: common.out.clone(),
        source,
    })?;
    Ok(case)
}

fn point_at(case: &Case, fan: Option<f64>, current: Option<f64>) -> Result<OperatingPoint, Error> {
    let fan = fan.unwrap_or(case.fan_speed);
    let current = current.unwrap_or(case.current);
    Ok(OperatingPoint::steady(
        &case.system,
        fan,
        current * current,
    )?)
}

fn apply_sweep_args(case: &mut Case, args: &SweepArgs) {
    if let Some(f) = args.fan {
        case.fan_speed = f;
    }
    if let Some(i) = args.current {
        case.current = i;
    }
    if let Some(s) = args.target_scale {
        case.control.target_scale = s;
    }
    if let Some(c) = args.weight {
        case.control.weight = c;
    }
    if let Some(r) = &args.reduction {
        case.control.reduction = r.clone();
        case.sweep.reduction = r.clone();
    }
    if let Some(h) = args.horizon {
        case.grid.horizon = h;
    }
}

fn write_two_layer(case: &Case, report: &RunReport, out: &Path) -> Result<(), Error> {
    let all: Vec<_> = report.rows.iter().collect();
    report::write_candidates(&out.join("two_layer.csv"), &all)?;
    let by_weight = report.at_scale(case.control.target_scale);
    report::write_candidates(&out.join("sweep_weight.csv"), &by_weight)?;
    report::write_cost_vs_weight(&out.join("cost_vs_weight.csv"), &by_weight)?;
    report::write_candidates(
        &out.join("sweep_target.csv"),
        &report.at_weight(case.control.weight),
    )?;
    Ok(())
}

fn print_best(label: &str, report: &RunReport) {
    match report.best_row() {
        Some(b) => println!(
            "{label}: best cost {} at fan {} rpm, current {} A ({} of {} candidates feasible)",
            format_number(b.total_cost.unwrap_or(f64::NAN)),
            format_number(b.fan_speed.unwrap_or(f64::NAN)),
            format_number(b.current.unwrap_or(f64::NAN)),
            report.feasible_count(),
            report.rows.len()
        ),
        None => println!("{label}: no feasible candidate among {}", report.rows.len()),
    }
}

fn print_spread(case: &Case, report: &RunReport) {
    let s = case.control.target_scale;
    if let Some(sp) = report.cost_spread(s) {
        println!(
            "cost spread over weights at scale {}: min {} max {} mean {} relative {}",
            format_number(s),
            format_number(sp.min),
            format_number(sp.max),
            format_number(sp.mean),
            format_number(sp.relative)
        );
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::ThermalSolve {
            common,
            fan,
            current,
        } => {
            let case = load(&common)?;
            let point = point_at(&case, fan, current)?;
            report::write_temperatures(&common.out.join("temperatures.csv"), &point)?;
            for (i, t) in point.temperatures.iter().enumerate() {
                println!("module {:>2}: {} K", i + 1, format_number(*t));
            }
        }
        Command::Policy {
            common,
            fan,
            current,
            target_scale,
            weight,
            reduction,
        } => {
            let case = load(&common)?;
            let point = point_at(&case, fan, current)?;
            let s = target_scale.unwrap_or(case.control.target_scale);
            let c = weight.unwrap_or(case.control.weight);
            let reduction = reduction.unwrap_or_else(|| case.control.reduction.clone());
            let ambient = case.system.params().ambient;
            let target = case
                .control
                .target_mode
                .target(&point.temperatures, ambient, s);
            let coeffs = compute_effort_coefficients(&case.system, &point, &target, &reduction)?;
            let effort = optimal_policy(&coeffs, c)?;
            let next = apply_effort(&case.system, &point, &effort)?;
            let rows: Vec<Vec<String>> = (0..point.temperatures.len())
                .map(|i| {
                    vec![
                        (i + 1).to_string(),
                        format_number(coeffs.a[i]),
                        format_number(coeffs.b[i]),
                        format_number(point.temperatures[i]),
                        format_number(target[i]),
                        format_number(next.temperatures[i]),
                    ]
                })
                .collect();
            write_policy(&common.out.join("policy.csv"), rows)?;
            println!("reduction = {reduction}");
            println!("reduced_a = {}", format_number(coeffs.reduced_a));
            println!("reduced_b = {}", format_number(coeffs.reduced_b));
            println!("delta_fan_rpm = {}", format_number(effort.delta_fan));
            println!(
                "delta_squared_current_a2 = {}",
                format_number(effort.delta_squared_current)
            );
            println!(
                "max_temperature_before_k = {}",
                format_number(point.max_temperature())
            );
            println!(
                "max_temperature_after_k = {}",
                format_number(next.max_temperature())
            );
        }
        Command::Opf {
            common,
            current,
            horizon,
        } => {
            let mut case = load(&common)?;
            if let Some(h) = horizon {
                case.grid.horizon = h;
            }
            let ess = case.ess.as_ref();
            let magnitude = match (current, ess) {
                (Some(i), Some(e)) => Some(e.power_magnitude_kw(i * i)),
                _ => None,
            };
            let dispatch = solve_opf(&case.grid, ess, magnitude)?;
            report::write_dispatch(&common.out.join("dispatch.csv"), &case.grid, &dispatch)?;
            report::write_voltages(&common.out.join("voltages.csv"), &case.grid, &dispatch)?;
            println!("grid_cost = {}", format_number(dispatch.grid_cost));
            println!("ess_cost = {}", format_number(dispatch.ess_cost));
            println!("total_cost = {}", format_number(dispatch.total_cost));
        }
        Command::TwoLayer { common, sweep } => {
            let mut case = load(&common)?;
            apply_sweep_args(&mut case, &sweep);
            let report = run_two_layer(&case, &case.sweep)?;
            write_two_layer(&case, &report, &common.out)?;
            print_best("two-layer", &report);
            print_spread(&case, &report);
            eprintln!("two-layer wall time: {:.3} s", report.elapsed.as_secs_f64());
        }
        Command::Mixed { common, horizon } => {
            let mut case = load(&common)?;
            if let Some(h) = horizon {
                case.grid.horizon = h;
            }
            let report = run_mixed(&case, &case.mixed)?;
            let all: Vec<_> = report.rows.iter().collect();
            report::write_candidates(&common.out.join("mixed.csv"), &all)?;
            print_best("mixed", &report);
            eprintln!("mixed wall time: {:.3} s", report.elapsed.as_secs_f64());
        }
        Command::Compare { common, sweep } => {
            let mut case = load(&common)?;
            apply_sweep_args(&mut case, &sweep);
            let two = run_two_layer(&case, &case.sweep)?;
            write_two_layer(&case, &two, &common.out)?;
            let mixed = run_mixed(&case, &case.mixed.covering(&two))?;
            let all: Vec<_> = mixed.rows.iter().collect();
            report::write_candidates(&common.out.join("mixed.csv"), &all)?;
            let cmp = compare(&two, &mixed)?;
            let spread = two
                .cost_spread(case.control.target_scale)
                .map(|sp| (case.control.target_scale, sp));
            let text = report::comparison_text(&cmp, spread);
            report::write_text(&common.out.join("comparison.txt"), &text)?;
            print!("{text}");
            eprintln!(
                "wall time: two-layer {:.3} s, mixed {:.3} s",
                cmp.two_layer_time.as_secs_f64(),
                cmp.mixed_time.as_secs_f64()
            );
        }
    }
    Ok(())
}

fn write_policy(path: &Path, rows: Vec<Vec<String>>) -> Result<(), Error> {
    let header = [
        "module",
        "a",
        "b",
        "temperature_k",
        "target_k",
        "new_temperature_k",
    ];
    let mut text = header.join(",");
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    report::write_text(path, &text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.is_infeasibility() {
                eprintln!("infeasible: {e}");
                ExitCode::from(2)
            } else {
                eprintln!("error: {e}");
                ExitCode::from(1)
            }
        }
    }
}
