//! LinDistFlow OPF assembly and solution extraction.

use super::{EssConfig, GridCase, NetworkError, Topology};
use crate::lp::{solve_lp, solve_milp, LinearProgram, SolveOutcome, Status, INTEGRALITY_TOLERANCE};

const BALANCE_TOLERANCE: f64 = 1e-7;
const SOC_TOLERANCE: f64 = 1e-9;
const COST_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EssVars {
    pub charge: usize,
    pub discharge: usize,
    pub alpha_charge: usize,
    pub alpha_discharge: usize,
    pub soc: usize,
}

/// Variable positions for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepVars {
    /// Active flow on every line, parent to child, in line order (p.u.).
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    /// Squared voltage at every bus, in bus order.
    pub v: Vec<usize>,
    pub import: usize,
    pub export: usize,
    pub q_grid: usize,
    pub ess: Option<EssVars>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpfLayout {
    pub steps: Vec<StepVars>,
    pub topology: Topology,
    /// Fixed ESS power magnitude in kW, when imposed.
    pub magnitude: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpfProblem {
    pub lp: LinearProgram,
    pub layout: OpfLayout,
}

/// Builds the multi-step OPF.
///
/// With `ess_power_magnitude` set, the ESS either idles or moves exactly
/// that many kW in one direction: `P_c + P_d = magnitude (alpha_c + alpha_d)`.
pub fn assemble_opf(
    grid: &GridCase,
    ess: Option<&EssConfig>,
    ess_power_magnitude: Option<f64>,
) -> Result<OpfProblem, NetworkError> {
    let topology = grid.topology()?;
    if let Some(ess) = ess {
        ess.validate(grid)?;
    }
    if let Some(mag) = ess_power_magnitude {
        let Some(ess) = ess else {
            return Err(NetworkError::Invalid {
                field: "ess".into(),
                message: "a fixed ESS power magnitude needs an ESS".into(),
            });
        };
        if !(mag >= 0.0 && mag.is_finite()) {
            return Err(NetworkError::Invalid {
                field: "ess_power_magnitude".into(),
                message: format!("must be a non-negative number of kW, got {mag}"),
            });
        }
        if mag > ess.p_charge_max {
            return Err(NetworkError::MagnitudeExceedsLimit {
                magnitude: mag,
                limit: "charging",
                max: ess.p_charge_max,
            });
        }
        if mag > ess.p_discharge_max {
            return Err(NetworkError::MagnitudeExceedsLimit {
                magnitude: mag,
                limit: "discharging",
                max: ess.p_discharge_max,
            });
        }
    }

    let n_bus = grid.buses.len();
    let n_line = grid.lines.len();
    let dt = grid.dt_hours;
    let base = grid.base_mva;
    let kw_to_pu = 1.0 / (1000.0 * base);
    let inf = f64::INFINITY;
    let t = &grid.tariffs;

    let mut lp = LinearProgram::new();
    let mut steps = Vec::with_capacity(grid.horizon);
    let ess_bus = ess.map(|e| topology.index[&e.bus]);

    for step in 0..grid.horizon {
        let p: Vec<usize> = (0..n_line).map(|_| lp.add_var(0.0, -inf, inf)).collect();
        let q: Vec<usize> = (0..n_line).map(|_| lp.add_var(0.0, -inf, inf)).collect();
        let v: Vec<usize> = (0..n_bus)
            .map(|b| {
                if b == topology.slack {
                    lp.add_var(0.0, grid.v_slack, grid.v_slack)
                } else {
                    lp.add_var(0.0, grid.v_min_sq, grid.v_max_sq)
                }
            })
            .collect();
        let import = lp.add_var(dt * base * t.grid_buy, 0.0, inf);
        let export = lp.add_var(-dt * base * t.grid_sell, 0.0, inf);
        let q_grid = lp.add_var(0.0, -inf, inf);

        let ess_vars = ess.map(|e| {
            let charge = lp.add_var(-dt * t.ess_charge / 1000.0, 0.0, e.p_charge_max);
            let discharge = lp.add_var(dt * t.ess_discharge / 1000.0, 0.0, e.p_discharge_max);
            let alpha_charge = lp.add_binary(0.0);
            let alpha_discharge = lp.add_binary(0.0);
            let soc = lp.add_var(0.0, e.soc_min, e.soc_max);

            // P_c <= alpha_c Pmax_c, P_d <= alpha_d Pmax_d, alpha_c + alpha_d <= 1
            let slack_c = lp.add_var(0.0, 0.0, inf);
            lp.add_row(
                vec![
                    (charge, 1.0),
                    (alpha_charge, -e.p_charge_max),
                    (slack_c, 1.0),
                ],
                0.0,
            );
            let slack_d = lp.add_var(0.0, 0.0, inf);
            lp.add_row(
                vec![
                    (discharge, 1.0),
                    (alpha_discharge, -e.p_discharge_max),
                    (slack_d, 1.0),
                ],
                0.0,
            );
            let idle_upper = if ess_power_magnitude.is_some() && !e.allow_idle {
                0.0
            } else {
                inf
            };
            let slack_x = lp.add_var(0.0, 0.0, idle_upper);
            lp.add_row(
                vec![(alpha_charge, 1.0), (alpha_discharge, 1.0), (slack_x, 1.0)],
                1.0,
            );

            if let Some(mag) = ess_power_magnitude {
                lp.add_row(
                    vec![
                        (charge, 1.0),
                        (discharge, 1.0),
                        (alpha_charge, -mag),
                        (alpha_discharge, -mag),
                    ],
                    0.0,
                );
            }
            EssVars {
                charge,
                discharge,
                alpha_charge,
                alpha_discharge,
                soc,
            }
        });

        // E_t - E_{t-1} - dt (eta_c P_c - P_d / eta_d) = 0
        if let (Some(e), Some(vars)) = (ess, ess_vars.as_ref()) {
            let mut terms = vec![
                (vars.soc, 1.0),
                (vars.charge, -dt * e.eta_charge),
                (vars.discharge, dt / e.eta_discharge),
            ];
            let rhs = if step == 0 {
                e.initial_soc
            } else {
                let prev = steps
                    .last()
                    .map(|s: &StepVars| s.ess.as_ref().unwrap().soc)
                    .unwrap();
                terms.push((prev, -1.0));
                0.0
            };
            lp.add_row(terms, rhs);
        }

        // nodal balance: inflow + generation - demand = outflow
        for (b, bus) in grid.buses.iter().enumerate() {
            let mut p_terms = Vec::new();
            let mut q_terms = Vec::new();
            for (l, &(parent, child)) in topology.oriented.iter().enumerate() {
                if child == b {
                    p_terms.push((p[l], 1.0));
                    q_terms.push((q[l], 1.0));
                } else if parent == b {
                    p_terms.push((p[l], -1.0));
                    q_terms.push((q[l], -1.0));
                }
            }
            if b == topology.slack {
                p_terms.push((import, 1.0));
                p_terms.push((export, -1.0));
                q_terms.push((q_grid, 1.0));
            }
            if let (Some(eb), Some(vars)) = (ess_bus, ess_vars.as_ref()) {
                if eb == b {
                    p_terms.push((vars.discharge, kw_to_pu));
                    p_terms.push((vars.charge, -kw_to_pu));
                }
            }
            lp.add_row(p_terms, bus.p_load);
            lp.add_row(q_terms, bus.q_load);
        }

        // v_child = v_parent - 2 (r P + x Q)
        for (l, &(parent, child)) in topology.oriented.iter().enumerate() {
            let line = &grid.lines[l];
            lp.add_row(
                vec![
                    (v[child], 1.0),
                    (v[parent], -1.0),
                    (p[l], 2.0 * line.r),
                    (q[l], 2.0 * line.x),
                ],
                0.0,
            );
        }

        steps.push(StepVars {
            p,
            q,
            v,
            import,
            export,
            q_grid,
            ess: ess_vars,
        });
    }

    Ok(OpfProblem {
        lp,
        layout: OpfLayout {
            steps,
            topology,
            magnitude: ess_power_magnitude,
        },
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDispatch {
    /// Active flow parent to child per line (MW).
    pub line_p: Vec<f64>,
    /// Reactive flow parent to child per line (MVAr).
    pub line_q: Vec<f64>,
    /// Squared voltage magnitude per bus (p.u.^2).
    pub v_sq: Vec<f64>,
    pub import_mw: f64,
    pub export_mw: f64,
    pub q_grid_mvar: f64,
    pub charge_kw: f64,
    pub discharge_kw: f64,
    pub charging: bool,
    pub discharging: bool,
    /// Stored energy at the end of the step (kWh).
    pub soc_kwh: f64,
    /// Total ESS current implied by the terminal power (A).
    pub ess_current_a: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DispatchSolution {
    pub steps: Vec<StepDispatch>,
    /// Stored energy before the first step (kWh).
    pub initial_soc: f64,
    pub grid_cost: f64,
    pub ess_cost: f64,
    pub total_cost: f64,
}

impl DispatchSolution {
    /// SOC before the first step followed by the end-of-step values.
    pub fn soc_trajectory(&self) -> Vec<f64> {
        std::iter::once(self.initial_soc)
            .chain(self.steps.iter().map(|s| s.soc_kwh))
            .collect()
    }
}

fn inconsistent(constraint: String, residual: f64) -> NetworkError {
    NetworkError::Inconsistent {
        constraint,
        residual,
    }
}

/// Reads the dispatch out of an optimal outcome and re-verifies the
/// physical constraints on it.
pub fn extract_solution(
    outcome: &SolveOutcome,
    problem: &OpfProblem,
    grid: &GridCase,
    ess: Option<&EssConfig>,
) -> Result<DispatchSolution, NetworkError> {
    if outcome.status != Status::Optimal {
        return Err(NetworkError::NotOptimal(outcome.status));
    }
    let x = &outcome.values;
    let layout = &problem.layout;
    let base = grid.base_mva;
    let dt = grid.dt_hours;
    let t = &grid.tariffs;
    let topo = &layout.topology;

    let mut steps = Vec::with_capacity(layout.steps.len());
    let mut grid_cost = 0.0;
    let mut ess_cost = 0.0;
    let mut prev_soc = ess.map_or(0.0, |e| e.initial_soc);

    for (step, vars) in layout.steps.iter().enumerate() {
        let import_mw = x[vars.import] * base;
        let export_mw = x[vars.export] * base;
        grid_cost += dt * (t.grid_buy * import_mw - t.grid_sell * export_mw);

        let (mut charge_kw, mut discharge_kw, mut charging, mut discharging, mut soc_kwh) =
            (0.0, 0.0, false, false, 0.0);
        if let (Some(e), Some(ev)) = (ess, vars.ess.as_ref()) {
            charge_kw = x[ev.charge];
            discharge_kw = x[ev.discharge];
            let (ac, ad) = (x[ev.alpha_charge], x[ev.alpha_discharge]);
            for (name, a) in [("alpha_charge", ac), ("alpha_discharge", ad)] {
                if (a - a.round()).abs() > INTEGRALITY_TOLERANCE {
                    return Err(inconsistent(format!("step {step}: {name} integrality"), a));
                }
            }
            charging = ac.round() == 1.0;
            discharging = ad.round() == 1.0;
            if charging && discharging {
                return Err(inconsistent(
                    format!("step {step}: alpha_charge + alpha_discharge <= 1"),
                    1.0,
                ));
            }
            let tol = 1e-7;
            if charge_kw > ac * e.p_charge_max + tol {
                return Err(inconsistent(
                    format!("step {step}: P_c <= alpha_c Pmax"),
                    charge_kw,
                ));
            }
            if discharge_kw > ad * e.p_discharge_max + tol {
                return Err(inconsistent(
                    format!("step {step}: P_d <= alpha_d Pmax"),
                    discharge_kw,
                ));
            }
            soc_kwh = x[ev.soc];
            let expected =
                prev_soc + (charge_kw * e.eta_charge - discharge_kw / e.eta_discharge) * dt;
            let residual = (soc_kwh - expected).abs();
            if residual > SOC_TOLERANCE {
                return Err(inconsistent(
                    format!("step {step}: SOC recursion"),
                    residual,
                ));
            }
            prev_soc = soc_kwh;
            ess_cost += dt * (t.ess_discharge * discharge_kw - t.ess_charge * charge_kw) / 1000.0;
        }

        // nodal active and reactive balance
        let ess_bus = ess.map(|e| topo.index[&e.bus]);
        for (b, bus) in grid.buses.iter().enumerate() {
            let mut p_net = -bus.p_load;
            let mut q_net = -bus.q_load;
            for (l, &(parent, child)) in topo.oriented.iter().enumerate() {
                if child == b {
                    p_net += x[vars.p[l]];
                    q_net += x[vars.q[l]];
                } else if parent == b {
                    p_net -= x[vars.p[l]];
                    q_net -= x[vars.q[l]];
                }
            }
            if b == topo.slack {
                p_net += x[vars.import] - x[vars.export];
                q_net += x[vars.q_grid];
            }
            if ess_bus == Some(b) {
                p_net += (discharge_kw - charge_kw) / (1000.0 * base);
            }
            if p_net.abs() > BALANCE_TOLERANCE || q_net.abs() > BALANCE_TOLERANCE {
                return Err(inconsistent(
                    format!("step {step}: power balance at bus {}", bus.id),
                    p_net.abs().max(q_net.abs()),
                ));
            }
        }

        steps.push(StepDispatch {
            line_p: vars.p.iter().map(|&j| x[j] * base).collect(),
            line_q: vars.q.iter().map(|&j| x[j] * base).collect(),
            v_sq: vars.v.iter().map(|&j| x[j]).collect(),
            import_mw,
            export_mw,
            q_grid_mvar: x[vars.q_grid] * base,
            charge_kw,
            discharge_kw,
            charging,
            discharging,
            soc_kwh,
            ess_current_a: ess.map_or(0.0, |e| e.current_for_power(charge_kw + discharge_kw)),
        });
    }

    let total_cost = grid_cost + ess_cost;
    let gap = (total_cost - outcome.objective_value).abs();
    if gap > COST_TOLERANCE * (1.0 + total_cost.abs()) {
        return Err(inconsistent("cost decomposition".into(), gap));
    }
    Ok(DispatchSolution {
        steps,
        initial_soc: ess.map_or(0.0, |e| e.initial_soc),
        grid_cost,
        ess_cost,
        total_cost,
    })
}

/// Assembles, solves and extracts in one go.
pub fn solve_opf(
    grid: &GridCase,
    ess: Option<&EssConfig>,
    ess_power_magnitude: Option<f64>,
) -> Result<DispatchSolution, NetworkError> {
    let problem = assemble_opf(grid, ess, ess_power_magnitude)?;
    let outcome = if problem.lp.binaries.is_empty() {
        solve_lp(&problem.lp)?
    } else {
        solve_milp(&problem.lp)?
    };
    extract_solution(&outcome, &problem, grid, ess)
}
