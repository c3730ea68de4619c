//! TOML case files.
//!
//! A case has five sections, all optional except the grid tables:
//!
//! * `[network]` with `lines = [[from, to, r_ohm, x_ohm], ..]` and
//!   `loads = [[bus, p_kw, q_kvar], ..]`, or `lines_file` / `loads_file`
//!   naming CSV files with those columns (paths relative to the case file),
//!   plus a `[network.tariffs]` table;
//! * `[ess]`, `[thermal]`, `[control]` and `[sweep]`.
//!
//! Omitted scalars take the defaults of the bundled 33-bus case. Impedances
//! and loads are converted to per-unit on `base_kv` / `base_mva`.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::control::Reduction;
use crate::coordinator::{CoordinatorError, MixedSpec, SweepSpec, TargetMode};
use crate::network::{Bus, EssConfig, GridCase, Line, NetworkError, Tariffs};
use crate::thermal::{OperatingPoint, RackGeometry, ThermalError, ThermalParams, ThermalSystem};

/// The bundled Baran-Wu 33-bus case.
pub const CASE33: &str = include_str!("../cases/case33.toml");

#[derive(Debug, Error)]
pub enum CaseError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("case file: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Table { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
}

fn invalid(field: &str, message: impl Into<String>) -> CaseError {
    CaseError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    network: RawNetwork,
    ess: Option<EssConfig>,
    #[serde(default)]
    thermal: RawThermal,
    #[serde(default)]
    control: RawControl,
    #[serde(default)]
    sweep: RawSweep,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawNetwork {
    slack_bus: u32,
    base_kv: f64,
    base_mva: f64,
    v_slack: f64,
    v_min_sq: f64,
    v_max_sq: f64,
    horizon: usize,
    dt_minutes: f64,
    lines: Option<Vec<(u32, u32, f64, f64)>>,
    loads: Option<Vec<(u32, f64, f64)>>,
    lines_file: Option<PathBuf>,
    loads_file: Option<PathBuf>,
    tariffs: Tariffs,
}

impl Default for RawNetwork {
    fn default() -> Self {
        Self {
            slack_bus: 1,
            base_kv: 12.66,
            base_mva: 1.0,
            v_slack: 1.0,
            v_min_sq: 0.81,
            v_max_sq: 1.21,
            horizon: 1,
            dt_minutes: 5.0,
            lines: None,
            loads: None,
            lines_file: None,
            loads_file: None,
            tariffs: Tariffs::default(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawThermal {
    n_modules: usize,
    length: f64,
    width: f64,
    height: f64,
    k_b: f64,
    h0: f64,
    lambda: f64,
    u_f0: f64,
    ambient: f64,
    r_ref: f64,
    alpha_t: f64,
    t_ref: f64,
    fan_speed: f64,
    current: f64,
}

impl Default for RawThermal {
    fn default() -> Self {
        let p = ThermalParams::default();
        Self {
            n_modules: 10,
            length: 0.45,
            width: 0.15,
            height: 0.23,
            k_b: p.k_b,
            h0: p.h0,
            lambda: p.lambda,
            u_f0: p.u_f0,
            ambient: p.ambient,
            r_ref: p.r_ref,
            alpha_t: p.alpha_t,
            t_ref: p.t_ref,
            fan_speed: 2000.0,
            current: 50.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawControl {
    reduction: String,
    weight: f64,
    target_scale: f64,
    target_mode: String,
}

impl Default for RawControl {
    fn default() -> Self {
        Self {
            reduction: "weighted_mean".into(),
            weight: 0.25,
            target_scale: 0.95,
            target_mode: "offset".into(),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RawSweep {
    target_scalings: Vec<f64>,
    weights: Vec<f64>,
    fan_grid: Vec<f64>,
    current_grid: Vec<f64>,
    temp_max: f64,
}

impl Default for RawSweep {
    fn default() -> Self {
        let sweep = SweepSpec::default();
        let mixed = MixedSpec::default();
        Self {
            target_scalings: sweep.target_scalings,
            weights: sweep.weights,
            fan_grid: mixed.fan_grid,
            current_grid: mixed.current_grid,
            temp_max: mixed.temp_max,
        }
    }
}

/// Single-point control settings used by the `policy` command.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSettings {
    pub reduction: Reduction,
    pub weight: f64,
    pub target_scale: f64,
    pub target_mode: TargetMode,
}

/// A fully validated case.
#[derive(Debug, Clone, PartialEq)]
pub struct Case {
    pub grid: GridCase,
    /// Absent when the case has no `[ess]` section.
    pub ess: Option<EssConfig>,
    pub system: ThermalSystem,
    /// Initial fan speed (rpm).
    pub fan_speed: f64,
    /// Initial module current (A).
    pub current: f64,
    pub control: ControlSettings,
    pub sweep: SweepSpec,
    pub mixed: MixedSpec,
}

impl Case {
    pub fn require_ess(&self) -> Result<&EssConfig, CaseError> {
        self.ess
            .as_ref()
            .ok_or_else(|| invalid("ess", "case has no [ess] section"))
    }

    /// Steady state at the initial fan speed and current.
    pub fn initial_point(&self) -> Result<OperatingPoint, ThermalError> {
        OperatingPoint::steady(&self.system, self.fan_speed, self.current * self.current)
    }
}

/// Parses a case whose table files, if any, are relative to the working
/// directory.
pub fn load_case(text: &str) -> Result<Case, CaseError> {
    load_case_in(text, Path::new("."))
}

pub fn load_case_file(path: &Path) -> Result<Case, CaseError> {
    let text = std::fs::read_to_string(path).map_err(|source| CaseError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dir = path.parent().unwrap_or(Path::new("."));
    load_case_in(&text, dir)
}

/// Parses a case, resolving `lines_file` and `loads_file` against `dir`.
pub fn load_case_in(text: &str, dir: &Path) -> Result<Case, CaseError> {
    let raw: RawCase = toml::from_str(text).map_err(|e| CaseError::Parse(e.to_string()))?;
    let grid = build_grid(&raw.network, dir)?;
    if let Some(ess) = &raw.ess {
        ess.validate(&grid)?;
    }

    let t = &raw.thermal;
    let geometry = RackGeometry::from_dimensions(t.n_modules, t.length, t.width, t.height);
    let params = ThermalParams {
        k_b: t.k_b,
        h0: t.h0,
        lambda: t.lambda,
        u_f0: t.u_f0,
        ambient: t.ambient,
        r_ref: t.r_ref,
        alpha_t: t.alpha_t,
        t_ref: t.t_ref,
    };
    let system = ThermalSystem::assemble(geometry, params)?;
    if !t.fan_speed.is_finite() {
        return Err(invalid("thermal.fan_speed", "must be finite"));
    }
    if !(t.current.is_finite() && t.current >= 0.0) {
        return Err(invalid(
            "thermal.current",
            format!("must be >= 0, got {}", t.current),
        ));
    }

    let c = &raw.control;
    let reduction: Reduction = c
        .reduction
        .parse()
        .map_err(|e: crate::control::ControlError| invalid("control.reduction", e.to_string()))?;
    let target_mode: TargetMode = c
        .target_mode
        .parse()
        .map_err(|e: String| invalid("control.target_mode", e))?;
    if !(c.weight.is_finite() && c.weight > 0.0) {
        return Err(invalid(
            "control.weight",
            format!("must be positive, got {}", c.weight),
        ));
    }
    if !(c.target_scale.is_finite() && c.target_scale > 0.0 && c.target_scale <= 1.0) {
        return Err(invalid(
            "control.target_scale",
            format!("must lie in (0, 1], got {}", c.target_scale),
        ));
    }

    let s = raw.sweep;
    let sweep = SweepSpec {
        target_scalings: s.target_scalings,
        weights: s.weights,
        reduction: reduction.clone(),
        target_mode,
    };
    sweep.validate()?;
    let mixed = MixedSpec {
        fan_grid: s.fan_grid,
        current_grid: s.current_grid,
        temp_max: s.temp_max,
    };
    mixed.validate()?;

    Ok(Case {
        grid,
        ess: raw.ess,
        system,
        fan_speed: t.fan_speed,
        current: t.current,
        control: ControlSettings {
            reduction,
            weight: c.weight,
            target_scale: c.target_scale,
            target_mode,
        },
        sweep,
        mixed,
    })
}

fn read_table<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, CaseError> {
    let table_err = |message: String| CaseError::Table {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| table_err(e.to_string()))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(k, rec)| rec.map_err(|e| table_err(format!("record {}: {e}", k + 1))))
        .collect()
}

fn build_grid(n: &RawNetwork, dir: &Path) -> Result<GridCase, CaseError> {
    if !(n.base_kv > 0.0 && n.base_mva > 0.0) {
        return Err(invalid(
            "network.base_kv/base_mva",
            "bases must be positive",
        ));
    }
    let z_base = n.base_kv * n.base_kv / n.base_mva;

    let lines: Vec<(u32, u32, f64, f64)> = match (&n.lines, &n.lines_file) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                "network.lines",
                "give either lines or lines_file, not both",
            ))
        }
        (Some(l), None) => l.clone(),
        (None, Some(f)) => read_table(&dir.join(f))?,
        (None, None) => return Err(invalid("network.lines", "missing line table")),
    };
    let loads: Vec<(u32, f64, f64)> = match (&n.loads, &n.loads_file) {
        (Some(_), Some(_)) => {
            return Err(invalid(
                "network.loads",
                "give either loads or loads_file, not both",
            ))
        }
        (Some(l), None) => l.clone(),
        (None, Some(f)) => read_table(&dir.join(f))?,
        (None, None) => Vec::new(),
    };

    let mut ids: Vec<u32> = lines.iter().flat_map(|l| [l.0, l.1]).collect();
    ids.push(n.slack_bus);
    ids.sort_unstable();
    ids.dedup();
    let mut buses: Vec<Bus> = ids
        .iter()
        .map(|&id| Bus {
            id,
            p_load: 0.0,
            q_load: 0.0,
        })
        .collect();
    for (k, &(bus, p_kw, q_kvar)) in loads.iter().enumerate() {
        let Ok(pos) = ids.binary_search(&bus) else {
            return Err(invalid(
                &format!("network.loads[{k}]"),
                format!("load at bus {bus}, which no line touches"),
            ));
        };
        buses[pos].p_load += p_kw / 1000.0 / n.base_mva;
        buses[pos].q_load += q_kvar / 1000.0 / n.base_mva;
    }

    let grid = GridCase {
        buses,
        lines: lines
            .iter()
            .map(|&(from, to, r, x)| Line {
                from,
                to,
                r: r / z_base,
                x: x / z_base,
            })
            .collect(),
        slack_bus: n.slack_bus,
        v_slack: n.v_slack,
        v_min_sq: n.v_min_sq,
        v_max_sq: n.v_max_sq,
        tariffs: n.tariffs,
        horizon: n.horizon,
        dt_hours: n.dt_minutes / 60.0,
        base_mva: n.base_mva,
    };
    grid.topology()?;
    Ok(grid)
}
