//! Radial distribution grid with one battery energy storage unit.
//!
//! All electrical quantities inside [`GridCase`] are per-unit on the case
//! power base; with the default 1 MVA base a per-unit active power is
//! numerically MW. Squared voltage magnitudes are carried directly, as in
//! the LinDistFlow model.

mod opf;

use std::collections::{BTreeMap, VecDeque};

use serde::Deserialize;
use thiserror::Error;

pub use opf::{
    assemble_opf, extract_solution, solve_opf, DispatchSolution, OpfLayout, OpfProblem,
    StepDispatch,
};

use crate::lp::{LpError, Status};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error("not radial: {0}")]
    NotRadial(String),
    #[error("ESS power magnitude {magnitude} kW exceeds the {limit} limit of {max} kW")]
    MagnitudeExceedsLimit {
        magnitude: f64,
        limit: &'static str,
        max: f64,
    },
    #[error("OPF is {0:?}")]
    NotOptimal(Status),
    #[error("inconsistent dispatch: {constraint} violated by {residual}")]
    Inconsistent { constraint: String, residual: f64 },
    #[error(transparent)]
    Lp(#[from] LpError),
}

impl NetworkError {
    fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        NetworkError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    /// Active demand (p.u.).
    pub p_load: f64,
    /// Reactive demand (p.u.).
    pub q_load: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    /// Resistance (p.u.).
    pub r: f64,
    /// Reactance (p.u.).
    pub x: f64,
}

/// Energy prices in $/MWh.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tariffs {
    pub grid_buy: f64,
    pub grid_sell: f64,
    /// Paid per MWh discharged from the ESS.
    pub ess_discharge: f64,
    /// Credited per MWh charged into the ESS.
    pub ess_charge: f64,
}

impl Default for Tariffs {
    fn default() -> Self {
        Self {
            grid_buy: 30.0,
            grid_sell: 26.0,
            ess_discharge: 32.0,
            ess_charge: 26.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridCase {
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub slack_bus: u32,
    /// Squared slack voltage (p.u.^2).
    pub v_slack: f64,
    /// Squared voltage bounds (p.u.^2).
    pub v_min_sq: f64,
    pub v_max_sq: f64,
    pub tariffs: Tariffs,
    pub horizon: usize,
    pub dt_hours: f64,
    pub base_mva: f64,
}

/// Tree orientation of a validated grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    /// Bus id to position in [`GridCase::buses`].
    pub index: BTreeMap<u32, usize>,
    /// Parent bus position and child bus position of every line, in line
    /// order.
    pub oriented: Vec<(usize, usize)>,
    pub slack: usize,
}

impl GridCase {
    /// Checks impedances, bus references, the slack bus and radiality,
    /// returning the tree orientation rooted at the slack bus.
    pub fn topology(&self) -> Result<Topology, NetworkError> {
        if self.buses.is_empty() {
            return Err(NetworkError::invalid("buses", "case has no buses"));
        }
        let mut index = BTreeMap::new();
        for (k, bus) in self.buses.iter().enumerate() {
            if index.insert(bus.id, k).is_some() {
                return Err(NetworkError::invalid(
                    format!("buses[{k}]"),
                    format!("duplicate bus id {}", bus.id),
                ));
            }
            if !(bus.p_load.is_finite() && bus.q_load.is_finite()) {
                return Err(NetworkError::invalid(
                    format!("buses[{k}]"),
                    "non-finite load",
                ));
            }
        }
        let slack = *index.get(&self.slack_bus).ok_or_else(|| {
            NetworkError::invalid("slack_bus", format!("missing slack bus {}", self.slack_bus))
        })?;
        if !(self.v_min_sq > 0.0 && self.v_min_sq < self.v_max_sq) {
            return Err(NetworkError::invalid(
                "voltage bounds",
                format!(
                    "need 0 < v_min^2 < v_max^2, got [{}, {}]",
                    self.v_min_sq, self.v_max_sq
                ),
            ));
        }
        if !(self.v_slack >= self.v_min_sq && self.v_slack <= self.v_max_sq) {
            return Err(NetworkError::invalid(
                "v_slack",
                "slack voltage outside bounds",
            ));
        }
        if self.horizon == 0 {
            return Err(NetworkError::invalid("horizon", "must be at least 1"));
        }
        if !(self.dt_hours > 0.0 && self.dt_hours.is_finite()) {
            return Err(NetworkError::invalid("dt_hours", "must be positive"));
        }
        if self.base_mva.is_nan() || self.base_mva <= 0.0 {
            return Err(NetworkError::invalid("base_mva", "must be positive"));
        }

        let n = self.buses.len();
        let mut adjacency: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        let mut parent_set = (0..n).collect::<Vec<_>>();
        fn find(sets: &mut [usize], mut a: usize) -> usize {
            while sets[a] != a {
                sets[a] = sets[sets[a]];
                a = sets[a];
            }
            a
        }
        for (k, line) in self.lines.iter().enumerate() {
            let field = format!("lines[{k}] ({} -> {})", line.from, line.to);
            if !(line.r.is_finite() && line.x.is_finite()) || line.r < 0.0 || line.x < 0.0 {
                return Err(NetworkError::invalid(
                    field,
                    format!(
                        "negative or non-finite impedance r = {}, x = {}",
                        line.r, line.x
                    ),
                ));
            }
            let a = *index.get(&line.from).ok_or_else(|| {
                NetworkError::invalid(&field, format!("unknown bus {}", line.from))
            })?;
            let b = *index
                .get(&line.to)
                .ok_or_else(|| NetworkError::invalid(&field, format!("unknown bus {}", line.to)))?;
            if a == b {
                return Err(NetworkError::NotRadial(format!("{field} is a self loop")));
            }
            let (ra, rb) = (find(&mut parent_set, a), find(&mut parent_set, b));
            if ra == rb {
                return Err(NetworkError::NotRadial(format!("{field} closes a loop")));
            }
            parent_set[ra] = rb;
            adjacency[a].push((b, k));
            adjacency[b].push((a, k));
        }

        let mut oriented = vec![(usize::MAX, usize::MAX); self.lines.len()];
        let mut seen = vec![false; n];
        seen[slack] = true;
        let mut queue = VecDeque::from([slack]);
        while let Some(u) = queue.pop_front() {
            for &(v, k) in &adjacency[u] {
                if !seen[v] {
                    seen[v] = true;
                    oriented[k] = (u, v);
                    queue.push_back(v);
                }
            }
        }
        if let Some(k) = seen.iter().position(|s| !s) {
            return Err(NetworkError::invalid(
                format!("buses[{k}]"),
                format!(
                    "dangling bus {} is not connected to the slack bus",
                    self.buses[k].id
                ),
            ));
        }
        Ok(Topology {
            index,
            oriented,
            slack,
        })
    }

    pub fn total_load(&self) -> (f64, f64) {
        self.buses
            .iter()
            .fold((0.0, 0.0), |(p, q), b| (p + b.p_load, q + b.q_load))
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EssConfig {
    pub bus: u32,
    /// kWh.
    pub capacity: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub initial_soc: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    /// kW.
    pub p_charge_max: f64,
    pub p_discharge_max: f64,
    /// Volts across one series string.
    pub rated_voltage: f64,
    pub series_modules: usize,
    pub parallel_strings: usize,
    /// Whether the unit may sit idle when a fixed power magnitude is imposed.
    pub allow_idle: bool,
}

impl Default for EssConfig {
    fn default() -> Self {
        Self {
            bus: 6,
            capacity: 66.304,
            soc_min: 5.0,
            soc_max: 66.304,
            initial_soc: 40.0,
            eta_charge: 0.95,
            eta_discharge: 0.95,
            p_charge_max: 60.0,
            p_discharge_max: 60.0,
            rated_voltage: 259.0,
            series_modules: 10,
            parallel_strings: 4,
            allow_idle: true,
        }
    }
}

impl EssConfig {
    pub fn validate(&self, grid: &GridCase) -> Result<(), NetworkError> {
        if !grid.buses.iter().any(|b| b.id == self.bus) {
            return Err(NetworkError::invalid(
                "ess.bus",
                format!("unknown bus {}", self.bus),
            ));
        }
        if !(self.soc_min >= 0.0
            && self.soc_min <= self.initial_soc
            && self.initial_soc <= self.soc_max
            && self.soc_max <= self.capacity)
        {
            return Err(NetworkError::invalid(
                "ess.soc",
                "need 0 <= soc_min <= initial_soc <= soc_max <= capacity",
            ));
        }
        for (field, eta) in [
            ("ess.eta_charge", self.eta_charge),
            ("ess.eta_discharge", self.eta_discharge),
        ] {
            if !(eta > 0.0 && eta <= 1.0) {
                return Err(NetworkError::invalid(
                    field,
                    format!("efficiency {eta} outside (0, 1]"),
                ));
            }
        }
        for (field, v) in [
            ("ess.p_charge_max", self.p_charge_max),
            ("ess.p_discharge_max", self.p_discharge_max),
            ("ess.rated_voltage", self.rated_voltage),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(NetworkError::invalid(
                    field,
                    format!("must be positive, got {v}"),
                ));
            }
        }
        if self.series_modules == 0 || self.parallel_strings == 0 {
            return Err(NetworkError::invalid(
                "ess.strings",
                "module counts must be positive",
            ));
        }
        Ok(())
    }

    /// Terminal power magnitude (kW) when every module carries current
    /// `sqrt(squared_current)`.
    pub fn power_magnitude_kw(&self, squared_current: f64) -> f64 {
        self.rated_voltage * self.parallel_strings as f64 * squared_current.max(0.0).sqrt() / 1000.0
    }

    /// Total ESS current (A) for a terminal power in kW.
    pub fn current_for_power(&self, power_kw: f64) -> f64 {
        power_kw * 1000.0 / self.rated_voltage
    }
}
