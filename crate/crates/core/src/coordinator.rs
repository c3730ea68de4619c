//! Two-layer coordination and the mixed grid-search baseline.
//!
//! The two-layer scheme sweeps temperature references `T*` and policy
//! weights `c`: the thermal layer turns each reference into a fan-speed and
//! current change with the closed-form policy, the new current fixes the
//! ESS power magnitude, and the electrical layer prices it with the OPF.
//! The mixed baseline searches fan speed and current jointly on a grid,
//! keeping the points whose exact steady state stays under a temperature
//! cap.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::case::Case;
use crate::control::{
    apply_effort, compute_effort_coefficients, optimal_policy, ControlEffort, ControlError,
    Reduction,
};
use crate::network::{solve_opf, DispatchSolution, EssConfig, NetworkError};
use crate::thermal::{OperatingPoint, ThermalError};

/// Slack allowed when checking that a nested mixed search is no worse ($).
pub const DOMINANCE_TOLERANCE: f64 = 1e-6;

/// Two scalars closer than this are treated as the same sweep value.
const KEY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoordinatorError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("empty feasible set: none of {candidates} grid points keeps max T <= {temp_max} K")]
    EmptyFeasibleSet { candidates: usize, temp_max: f64 },
    #[error("report has no rows")]
    EmptyReport,
    #[error("mixed best cost {mixed} exceeds two-layer best cost {two_layer} on a nested grid")]
    DominanceViolated { mixed: f64, two_layer: f64 },
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

fn invalid(field: &str, message: impl Into<String>) -> CoordinatorError {
    CoordinatorError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// How a scaling factor `s` turns the current profile into a reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetMode {
    /// `T* = T_a + s (T - T_a)`; `s = 1` leaves the profile unchanged.
    #[default]
    Offset,
    /// `T* = s T`.
    Absolute,
}

impl TargetMode {
    pub fn target(self, temperatures: &[f64], ambient: f64, scale: f64) -> Vec<f64> {
        match self {
            TargetMode::Offset => temperatures
                .iter()
                .map(|t| ambient + scale * (t - ambient))
                .collect(),
            TargetMode::Absolute => temperatures.iter().map(|t| scale * t).collect(),
        }
    }
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::Offset => "offset",
            TargetMode::Absolute => "absolute",
        })
    }
}

impl FromStr for TargetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "offset" => Ok(TargetMode::Offset),
            "absolute" => Ok(TargetMode::Absolute),
            other => Err(format!(
                "unknown target mode {other:?} (expected offset or absolute)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub target_scalings: Vec<f64>,
    pub weights: Vec<f64>,
    pub reduction: Reduction,
    pub target_mode: TargetMode,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            target_scalings: vec![0.90, 0.925, 0.95, 0.975, 1.0],
            weights: (1..=20).map(|k| k as f64 / 20.0).collect(),
            reduction: Reduction::default(),
            target_mode: TargetMode::Offset,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CoordinatorError> {
        if self.target_scalings.is_empty() {
            return Err(invalid("sweep.target_scalings", "must not be empty"));
        }
        if self.weights.is_empty() {
            return Err(invalid("sweep.weights", "must not be empty"));
        }
        for &s in &self.target_scalings {
            if !(s.is_finite() && s > 0.0 && s <= 1.0) {
                return Err(invalid(
                    "sweep.target_scalings",
                    format!("scaling {s} outside (0, 1]"),
                ));
            }
        }
        for &c in &self.weights {
            if !(c.is_finite() && c > 0.0) {
                return Err(invalid(
                    "sweep.weights",
                    format!("weight {c} must be positive"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSpec {
    /// Fan speeds to try (rpm).
    pub fan_grid: Vec<f64>,
    /// Module currents to try (A).
    pub current_grid: Vec<f64>,
    /// Highest admissible module temperature (K).
    pub temp_max: f64,
}

impl Default for MixedSpec {
    fn default() -> Self {
        Self {
            fan_grid: (0..=10).map(|k| 1500.0 + 250.0 * k as f64).collect(),
            current_grid: (0..=16).map(|k| 40.0 + k as f64).collect(),
            temp_max: 318.0,
        }
    }
}

impl MixedSpec {
    pub fn validate(&self) -> Result<(), CoordinatorError> {
        if self.fan_grid.is_empty() || self.current_grid.is_empty() {
            return Err(invalid(
                "sweep.fan_grid/current_grid",
                "grids must not be empty",
            ));
        }
        if self.fan_grid.iter().any(|f| !f.is_finite()) {
            return Err(invalid("sweep.fan_grid", "fan speeds must be finite"));
        }
        if self
            .current_grid
            .iter()
            .any(|i| !(i.is_finite() && *i >= 0.0))
        {
            return Err(invalid(
                "sweep.current_grid",
                "currents must be non-negative",
            ));
        }
        if !self.temp_max.is_finite() {
            return Err(invalid("sweep.temp_max", "must be finite"));
        }
        Ok(())
    }

    /// This grid extended by every operating point of a two-layer report, so
    /// the mixed search covers all two-layer candidates.
    pub fn covering(&self, two_layer: &RunReport) -> MixedSpec {
        let mut fans = self.fan_grid.clone();
        let mut currents = self.current_grid.clone();
        for row in &two_layer.rows {
            if let (Some(f), Some(i)) = (row.fan_speed, row.current) {
                fans.push(f);
                currents.push(i);
            }
        }
        MixedSpec {
            fan_grid: sorted_unique(fans),
            current_grid: sorted_unique(currents),
            temp_max: self.temp_max,
        }
    }
}

fn sorted_unique(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// One evaluated candidate. Fields are `None` where the stage that
/// produces them was not reached.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRow {
    /// Target scaling `s` (two-layer rows only).
    pub target_scale: Option<f64>,
    /// Policy weight `c` (two-layer rows only).
    pub weight: Option<f64>,
    pub delta_fan: Option<f64>,
    pub delta_squared_current: Option<f64>,
    /// Fan speed after the effort (rpm).
    pub fan_speed: Option<f64>,
    /// Module current after the effort (A).
    pub current: Option<f64>,
    /// Realized maximum temperature from a fresh steady-state solve (K).
    pub max_temperature: Option<f64>,
    /// Fixed ESS power magnitude handed to the OPF (kW).
    pub ess_power_kw: Option<f64>,
    pub grid_cost: Option<f64>,
    pub ess_cost: Option<f64>,
    pub total_cost: Option<f64>,
    pub feasible: bool,
    /// Why the candidate is infeasible; empty when feasible.
    pub note: String,
}

impl CandidateRow {
    fn empty(target_scale: Option<f64>, weight: Option<f64>) -> Self {
        Self {
            target_scale,
            weight,
            delta_fan: None,
            delta_squared_current: None,
            fan_speed: None,
            current: None,
            max_temperature: None,
            ess_power_kw: None,
            grid_cost: None,
            ess_cost: None,
            total_cost: None,
            feasible: false,
            note: String::new(),
        }
    }

    fn price(&mut self, dispatch: &DispatchSolution) {
        self.grid_cost = Some(dispatch.grid_cost);
        self.ess_cost = Some(dispatch.ess_cost);
        self.total_cost = Some(dispatch.total_cost);
        self.feasible = true;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunKind {
    TwoLayer,
    Mixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub kind: RunKind,
    /// Candidates in grid order.
    pub rows: Vec<CandidateRow>,
    /// Index of the cheapest feasible row (first one on ties).
    pub best: Option<usize>,
    pub elapsed: Duration,
}

impl RunReport {
    fn new(kind: RunKind, rows: Vec<CandidateRow>, elapsed: Duration) -> Self {
        let mut best: Option<usize> = None;
        for (i, row) in rows.iter().enumerate() {
            if let (true, Some(cost)) = (row.feasible, row.total_cost) {
                if best.is_none_or(|b| cost < rows[b].total_cost.unwrap()) {
                    best = Some(i);
                }
            }
        }
        Self {
            kind,
            rows,
            best,
            elapsed,
        }
    }

    pub fn best_row(&self) -> Option<&CandidateRow> {
        self.best.map(|i| &self.rows[i])
    }

    pub fn best_cost(&self) -> Option<f64> {
        self.best_row().and_then(|r| r.total_cost)
    }

    pub fn feasible_count(&self) -> usize {
        self.rows.iter().filter(|r| r.feasible).count()
    }

    /// Two-layer rows at target scaling `s`, in weight order.
    pub fn at_scale(&self, s: f64) -> Vec<&CandidateRow> {
        self.rows
            .iter()
            .filter(|r| {
                r.target_scale
                    .is_some_and(|x| (x - s).abs() < KEY_TOLERANCE)
            })
            .collect()
    }

    /// Two-layer rows at weight `c`, in scaling order.
    pub fn at_weight(&self, c: f64) -> Vec<&CandidateRow> {
        self.rows
            .iter()
            .filter(|r| r.weight.is_some_and(|x| (x - c).abs() < KEY_TOLERANCE))
            .collect()
    }

    /// Spread of total cost over the feasible rows at scaling `s`.
    pub fn cost_spread(&self, s: f64) -> Option<CostSpread> {
        let costs: Vec<f64> = self
            .at_scale(s)
            .into_iter()
            .filter(|r| r.feasible)
            .filter_map(|r| r.total_cost)
            .collect();
        CostSpread::of(&costs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpread {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    /// `(max - min) / |mean|`.
    pub relative: f64,
}

impl CostSpread {
    pub fn of(costs: &[f64]) -> Option<Self> {
        if costs.is_empty() {
            return None;
        }
        let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // summation can drift an ulp past the extremes on flat sweeps
        let mean = (costs.iter().sum::<f64>() / costs.len() as f64).clamp(min, max);
        let relative = if max == min {
            0.0
        } else {
            (max - min) / mean.abs()
        };
        Some(Self {
            min,
            max,
            mean,
            relative,
        })
    }
}

fn require_ess(case: &Case) -> Result<&EssConfig, CoordinatorError> {
    case.ess
        .as_ref()
        .ok_or_else(|| invalid("ess", "case has no [ess] section"))
}

fn two_layer_row(
    case: &Case,
    ess: &EssConfig,
    start: &OperatingPoint,
    s: f64,
    c: f64,
    coeffs: &Result<crate::control::EffortCoefficients, ControlError>,
) -> CandidateRow {
    let mut row = CandidateRow::empty(Some(s), Some(c));
    let coeffs = match coeffs {
        Ok(k) => k,
        Err(e) => {
            row.note = e.to_string();
            return row;
        }
    };
    let effort: ControlEffort = match optimal_policy(coeffs, c) {
        Ok(e) => e,
        Err(e) => {
            row.note = e.to_string();
            return row;
        }
    };
    row.delta_fan = Some(effort.delta_fan);
    row.delta_squared_current = Some(effort.delta_squared_current);
    let fan = start.fan_speed + effort.delta_fan;
    let squared = start.squared_current + effort.delta_squared_current;
    row.fan_speed = Some(fan);
    if squared >= 0.0 {
        row.current = Some(squared.sqrt());
    }
    let point = match apply_effort(&case.system, start, &effort) {
        Ok(p) => p,
        Err(e) => {
            row.note = e.to_string();
            return row;
        }
    };
    row.max_temperature = Some(point.max_temperature());
    let magnitude = ess.power_magnitude_kw(point.squared_current);
    row.ess_power_kw = Some(magnitude);
    match solve_opf(&case.grid, Some(ess), Some(magnitude)) {
        Ok(d) => row.price(&d),
        Err(e) => row.note = e.to_string(),
    }
    row
}

/// Evaluates every `(s, c)` pair of the sweep from the case's initial
/// operating point. Candidates are evaluated in parallel and returned in
/// scaling-major, weight-minor order.
pub fn run_two_layer(case: &Case, sweep: &SweepSpec) -> Result<RunReport, CoordinatorError> {
    sweep.validate()?;
    let ess = require_ess(case)?;
    let started = Instant::now();
    let start = case.initial_point()?;
    let ambient = case.system.params().ambient;

    let coeffs: Vec<_> = sweep
        .target_scalings
        .par_iter()
        .map(|&s| {
            let target = sweep.target_mode.target(&start.temperatures, ambient, s);
            compute_effort_coefficients(&case.system, &start, &target, &sweep.reduction)
        })
        .collect();

    let pairs: Vec<(usize, f64)> = (0..sweep.target_scalings.len())
        .flat_map(|k| sweep.weights.iter().map(move |&c| (k, c)))
        .collect();
    let rows: Vec<CandidateRow> = pairs
        .par_iter()
        .map(|&(k, c)| two_layer_row(case, ess, &start, sweep.target_scalings[k], c, &coeffs[k]))
        .collect();
    Ok(RunReport::new(RunKind::TwoLayer, rows, started.elapsed()))
}

/// Exhaustive search over the fan-speed by current grid. The OPF depends on
/// the current only, so it is solved once per distinct current.
pub fn run_mixed(case: &Case, spec: &MixedSpec) -> Result<RunReport, CoordinatorError> {
    spec.validate()?;
    let ess = require_ess(case)?;
    let started = Instant::now();

    let currents = sorted_unique(spec.current_grid.clone());
    let priced: Vec<Result<(f64, DispatchSolution), NetworkError>> = currents
        .par_iter()
        .map(|&i| {
            let magnitude = ess.power_magnitude_kw(i * i);
            solve_opf(&case.grid, Some(ess), Some(magnitude)).map(|d| (magnitude, d))
        })
        .collect();
    let by_current: BTreeMap<u64, &Result<(f64, DispatchSolution), NetworkError>> = currents
        .iter()
        .zip(&priced)
        .map(|(i, r)| (i.to_bits(), r))
        .collect();

    let points: Vec<(f64, f64)> = spec
        .fan_grid
        .iter()
        .flat_map(|&f| spec.current_grid.iter().map(move |&i| (f, i)))
        .collect();
    let rows: Vec<CandidateRow> = points
        .par_iter()
        .map(|&(fan, current)| {
            let mut row = CandidateRow::empty(None, None);
            row.fan_speed = Some(fan);
            row.current = Some(current);
            let point = match OperatingPoint::steady(&case.system, fan, current * current) {
                Ok(p) => p,
                Err(e) => {
                    row.note = e.to_string();
                    return row;
                }
            };
            let t_max = point.max_temperature();
            row.max_temperature = Some(t_max);
            if t_max > spec.temp_max {
                row.note = format!("max temperature {t_max} K exceeds cap {} K", spec.temp_max);
                return row;
            }
            match by_current[&current.to_bits()] {
                Ok((magnitude, d)) => {
                    row.ess_power_kw = Some(*magnitude);
                    row.price(d);
                }
                Err(e) => row.note = e.to_string(),
            }
            row
        })
        .collect();

    let report = RunReport::new(RunKind::Mixed, rows, started.elapsed());
    if report.best.is_none() {
        return Err(CoordinatorError::EmptyFeasibleSet {
            candidates: report.rows.len(),
            temp_max: spec.temp_max,
        });
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub two_layer_best: Option<f64>,
    pub mixed_best: Option<f64>,
    /// Two-layer best minus mixed best ($).
    pub gap: Option<f64>,
    pub two_layer_candidates: usize,
    pub two_layer_feasible: usize,
    pub mixed_candidates: usize,
    pub mixed_feasible: usize,
    pub two_layer_time: Duration,
    pub mixed_time: Duration,
    /// Every feasible two-layer operating point is also a feasible mixed
    /// grid point.
    pub nested: bool,
}

fn nested(two_layer: &RunReport, mixed: &RunReport) -> bool {
    let covered: std::collections::BTreeSet<(u64, u64)> = mixed
        .rows
        .iter()
        .filter(|r| r.feasible)
        .filter_map(|r| Some((r.fan_speed?.to_bits(), r.current?.to_bits())))
        .collect();
    two_layer
        .rows
        .iter()
        .filter(|r| r.feasible)
        .all(|r| match (r.fan_speed, r.current) {
            (Some(f), Some(i)) => covered.contains(&(f.to_bits(), i.to_bits())),
            _ => false,
        })
}

/// Compares the two searches. On nested grids the mixed best must not
/// exceed the two-layer best by more than [`DOMINANCE_TOLERANCE`].
pub fn compare(two_layer: &RunReport, mixed: &RunReport) -> Result<Comparison, CoordinatorError> {
    if two_layer.rows.is_empty() || mixed.rows.is_empty() {
        return Err(CoordinatorError::EmptyReport);
    }
    let two = two_layer.best_cost();
    let mix = mixed.best_cost();
    let nested = nested(two_layer, mixed);
    if let (true, Some(t), Some(m)) = (nested, two, mix) {
        if m > t + DOMINANCE_TOLERANCE {
            return Err(CoordinatorError::DominanceViolated {
                mixed: m,
                two_layer: t,
            });
        }
    }
    Ok(Comparison {
        two_layer_best: two,
        mixed_best: mix,
        gap: two.zip(mix).map(|(t, m)| t - m),
        two_layer_candidates: two_layer.rows.len(),
        two_layer_feasible: two_layer.feasible_count(),
        mixed_candidates: mixed.rows.len(),
        mixed_feasible: mixed.feasible_count(),
        two_layer_time: two_layer.elapsed,
        mixed_time: mixed.elapsed,
        nested,
    })
}
