//! Battery rack thermal control coordinated with distribution-grid dispatch.
//!
//! * [`thermal`]: steady-state lumped thermal network of a module row.
//! * [`control`]: closed-form fan-speed / current policy toward a reference
//!   temperature profile.
//! * [`lp`]: bounded-variable simplex and binary branch-and-bound.
//! * [`network`]: LinDistFlow OPF of a radial feeder with one ESS.
//! * [`coordinator`]: two-layer sweep and the mixed grid-search baseline.
//! * [`case`] and [`report`]: case files in, CSV and text out.

pub mod case;
pub mod control;
pub mod coordinator;
pub mod lp;
pub mod network;
pub mod report;
pub mod thermal;

use thiserror::Error;

use case::CaseError;
use control::ControlError;
use coordinator::CoordinatorError;
use lp::LpError;
use network::NetworkError;
use report::ReportError;
use thermal::ThermalError;

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Case(#[from] CaseError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Coordinator(#[from] CoordinatorError),
    #[error(transparent)]
    Report(#[from] ReportError),
}

impl Error {
    /// True when the inputs were well formed but no admissible operating
    /// point or dispatch exists; false for malformed input and I/O errors.
    pub fn is_infeasibility(&self) -> bool {
        match self {
            Error::Case(CaseError::Network(e)) | Error::Network(e) => network_infeasible(e),
            Error::Case(CaseError::Thermal(e)) | Error::Thermal(e) => thermal_infeasible(e),
            Error::Case(CaseError::Coordinator(e)) | Error::Coordinator(e) => {
                coordinator_infeasible(e)
            }
            Error::Case(_) | Error::Report(_) => false,
            Error::Control(e) => control_infeasible(e),
        }
    }
}

fn thermal_infeasible(e: &ThermalError) -> bool {
    matches!(
        e,
        ThermalError::ThermalRunaway { .. } | ThermalError::ResidualTooLarge { .. }
    )
}

fn control_infeasible(e: &ControlError) -> bool {
    match e {
        ControlError::NoConvectiveLeverage { .. }
        | ControlError::NegativeSquaredCurrent(_)
        | ControlError::NonPhysicalFan { .. } => true,
        ControlError::Thermal(t) => thermal_infeasible(t),
        _ => false,
    }
}

fn network_infeasible(e: &NetworkError) -> bool {
    match e {
        NetworkError::NotOptimal(_)
        | NetworkError::Inconsistent { .. }
        | NetworkError::MagnitudeExceedsLimit { .. } => true,
        NetworkError::Lp(l) => matches!(
            l,
            LpError::NodeLimit { .. } | LpError::IterationLimit { .. }
        ),
        NetworkError::Invalid { .. } | NetworkError::NotRadial(_) => false,
    }
}

fn coordinator_infeasible(e: &CoordinatorError) -> bool {
    match e {
        CoordinatorError::EmptyFeasibleSet { .. } | CoordinatorError::DominanceViolated { .. } => {
            true
        }
        CoordinatorError::Thermal(t) => thermal_infeasible(t),
        CoordinatorError::Control(c) => control_infeasible(c),
        CoordinatorError::Network(n) => network_infeasible(n),
        CoordinatorError::Invalid { .. } | CoordinatorError::EmptyReport => false,
    }
}
