//! CSV and text outputs, and readers for the CSVs.
//!
//! Numbers are written with 9 significant digits; missing values are empty
//! fields.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::coordinator::{CandidateRow, Comparison, CostSpread};
use crate::network::{DispatchSolution, GridCase};
use crate::thermal::OperatingPoint;

pub const CANDIDATE_COLUMNS: [&str; 13] = [
    "target_scale",
    "weight",
    "delta_fan_rpm",
    "delta_squared_current_a2",
    "fan_speed_rpm",
    "current_a",
    "max_temperature_k",
    "ess_power_kw",
    "grid_cost",
    "ess_cost",
    "total_cost",
    "feasible",
    "note",
];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: record {record}: {message}")]
    Parse {
        path: PathBuf,
        record: usize,
        message: String,
    },
}

/// `x` with 9 significant digits, trailing zeros trimmed.
pub fn format_number(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    let s = if (-5..15).contains(&exp) {
        format!("{:.*}", (8 - exp).max(0) as usize, x)
    } else {
        let s = format!("{x:.8e}");
        let (mantissa, e) = s.split_once('e').unwrap();
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{e}");
    };
    let s = trim_zeros(&s);
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(format_number).unwrap_or_default()
}

fn writer(path: &Path) -> Result<csv::Writer<File>, ReportError> {
    csv::Writer::from_path(path).map_err(|source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), ReportError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = writer(path)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_candidates(path: &Path, rows: &[&CandidateRow]) -> Result<(), ReportError> {
    write_rows(
        path,
        &CANDIDATE_COLUMNS,
        rows.iter().map(|r| {
            vec![
                opt(r.target_scale),
                opt(r.weight),
                opt(r.delta_fan),
                opt(r.delta_squared_current),
                opt(r.fan_speed),
                opt(r.current),
                opt(r.max_temperature),
                opt(r.ess_power_kw),
                opt(r.grid_cost),
                opt(r.ess_cost),
                opt(r.total_cost),
                r.feasible.to_string(),
                r.note.clone(),
            ]
        }),
    )
}

/// Rows at one target scaling as `weight, total_cost, grid_cost, ess_cost`.
pub fn write_cost_vs_weight(path: &Path, rows: &[&CandidateRow]) -> Result<(), ReportError> {
    write_rows(
        path,
        &["weight", "total_cost", "grid_cost", "ess_cost"],
        rows.iter().map(|r| {
            vec![
                opt(r.weight),
                opt(r.total_cost),
                opt(r.grid_cost),
                opt(r.ess_cost),
            ]
        }),
    )
}

/// One row per module: `module, temperature_k` with one-based module index.
pub fn write_temperatures(path: &Path, point: &OperatingPoint) -> Result<(), ReportError> {
    write_rows(
        path,
        &["module", "temperature_k"],
        point
            .temperatures
            .iter()
            .enumerate()
            .map(|(i, t)| vec![(i + 1).to_string(), format_number(*t)]),
    )
}

pub const DISPATCH_COLUMNS: [&str; 11] = [
    "step",
    "import_mw",
    "export_mw",
    "q_grid_mvar",
    "charge_kw",
    "discharge_kw",
    "charging",
    "discharging",
    "soc_kwh",
    "ess_current_a",
    "step_cost",
];

pub fn write_dispatch(
    path: &Path,
    grid: &GridCase,
    dispatch: &DispatchSolution,
) -> Result<(), ReportError> {
    let t = &grid.tariffs;
    write_rows(
        path,
        &DISPATCH_COLUMNS,
        dispatch.steps.iter().enumerate().map(|(k, s)| {
            let cost = grid.dt_hours
                * (t.grid_buy * s.import_mw - t.grid_sell * s.export_mw
                    + (t.ess_discharge * s.discharge_kw - t.ess_charge * s.charge_kw) / 1000.0);
            vec![
                (k + 1).to_string(),
                format_number(s.import_mw),
                format_number(s.export_mw),
                format_number(s.q_grid_mvar),
                format_number(s.charge_kw),
                format_number(s.discharge_kw),
                u8::from(s.charging).to_string(),
                u8::from(s.discharging).to_string(),
                format_number(s.soc_kwh),
                format_number(s.ess_current_a),
                format_number(cost),
            ]
        }),
    )
}

/// `step, bus, v_sq` for every bus and step.
pub fn write_voltages(
    path: &Path,
    grid: &GridCase,
    dispatch: &DispatchSolution,
) -> Result<(), ReportError> {
    write_rows(
        path,
        &["step", "bus", "v_sq"],
        dispatch.steps.iter().enumerate().flat_map(|(k, s)| {
            grid.buses
                .iter()
                .zip(&s.v_sq)
                .map(move |(b, v)| vec![(k + 1).to_string(), b.id.to_string(), format_number(*v)])
        }),
    )
}

/// Summary of a comparison. Wall-clock times are left out so the text is
/// reproducible; callers print them separately.
pub fn comparison_text(cmp: &Comparison, spread: Option<(f64, CostSpread)>) -> String {
    let mut out = String::new();
    let line = |out: &mut String, key: &str, value: String| {
        out.push_str(&format!("{key:<26}{value}\n"));
    };
    line(&mut out, "two_layer_best_cost", opt(cmp.two_layer_best));
    line(&mut out, "mixed_best_cost", opt(cmp.mixed_best));
    line(&mut out, "gap", opt(cmp.gap));
    line(
        &mut out,
        "two_layer_candidates",
        format!(
            "{} ({} feasible)",
            cmp.two_layer_candidates, cmp.two_layer_feasible
        ),
    );
    line(
        &mut out,
        "mixed_candidates",
        format!("{} ({} feasible)", cmp.mixed_candidates, cmp.mixed_feasible),
    );
    line(&mut out, "nested", cmp.nested.to_string());
    let dominance = if cmp.nested {
        "holds".to_string()
    } else {
        "not checked".to_string()
    };
    line(&mut out, "dominance", dominance);
    if let Some((s, sp)) = spread {
        line(&mut out, "cost_spread_scale", format_number(s));
        line(&mut out, "cost_spread_min", format_number(sp.min));
        line(&mut out, "cost_spread_max", format_number(sp.max));
        line(&mut out, "cost_spread_mean", format_number(sp.mean));
        line(&mut out, "cost_spread_relative", format_number(sp.relative));
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ReportError> {
    let io = |source| ReportError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = File::create(path).map_err(io)?;
    f.write_all(text.as_bytes()).map_err(io)
}

/// A CSV read back as its header and raw string records.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Column `name` parsed as numbers; empty fields are `None`.
    pub fn numbers(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let j = self.column(name)?;
        self.records
            .iter()
            .map(|r| {
                let field = r.get(j)?;
                if field.is_empty() {
                    Some(None)
                } else {
                    field.parse().ok().map(Some)
                }
            })
            .collect()
    }
}

pub fn read_table(path: &Path) -> Result<Table, ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(str::to_string)
        .collect();
    let records = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()
        .map_err(csv_err)?;
    Ok(Table { header, records })
}

/// Reads a file written by [`write_candidates`].
pub fn read_candidates(path: &Path) -> Result<Vec<CandidateRow>, ReportError> {
    let table = read_table(path)?;
    if table.header != CANDIDATE_COLUMNS {
        return Err(ReportError::Parse {
            path: path.to_path_buf(),
            record: 0,
            message: format!("unexpected header {:?}", table.header),
        });
    }
    table
        .records
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let parse_err = |message: String| ReportError::Parse {
                path: path.to_path_buf(),
                record: k + 1,
                message,
            };
            let num = |j: usize| -> Result<Option<f64>, ReportError> {
                if r[j].is_empty() {
                    Ok(None)
                } else {
                    r[j].parse()
                        .map(Some)
                        .map_err(|e| parse_err(format!("{}: {e}", CANDIDATE_COLUMNS[j])))
                }
            };
            Ok(CandidateRow {
                target_scale: num(0)?,
                weight: num(1)?,
                delta_fan: num(2)?,
                delta_squared_current: num(3)?,
                fan_speed: num(4)?,
                current: num(5)?,
                max_temperature: num(6)?,
                ess_power_kw: num(7)?,
                grid_cost: num(8)?,
                ess_cost: num(9)?,
                total_cost: num(10)?,
                feasible: r[11]
                    .parse()
                    .map_err(|e| parse_err(format!("feasible: {e}")))?,
                note: r[12].clone(),
            })
        })
        .collect()
}

/// Reads a file written by [`write_temperatures`].
pub fn read_temperatures(path: &Path) -> Result<Vec<f64>, ReportError> {
    let table = read_table(path)?;
    table
        .numbers("temperature_k")
        .and_then(|v| v.into_iter().collect::<Option<Vec<f64>>>())
        .ok_or_else(|| ReportError::Parse {
            path: path.to_path_buf(),
            record: 0,
            message: "missing or malformed temperature_k column".into(),
        })
}
