//! Steady-state lumped thermal network for a row of battery modules.
//!
//! Each module is a single temperature node. Neighbouring modules exchange
//! heat by conduction through their shared contact face, and every module
//! loses heat to the surrounding air by convection from its lateral faces
//! (plus the exposed contact face at either end of the row). Heat is
//! generated resistively, with a module resistance that is affine in
//! temperature.
//!
//! The nodal balances are written against the augmented temperature vector
//! `[T_1, .., T_N, T_a]`, so the coefficient matrices are `N x (N + 1)` and
//! the ambient column carries the convective coupling to air:
//!
//! ```text
//! (B0 + K u_f) [T; T_a] = u_I (R0 + alpha T)
//! ```

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Maximum admissible imbalance of a solved nodal heat balance, in watts.
pub const RESIDUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ThermalError {
    #[error("invalid rack geometry: {field} {reason}")]
    InvalidGeometry { field: &'static str, reason: String },
    #[error("invalid thermal parameter: {field} {reason}")]
    InvalidParams { field: &'static str, reason: String },
    #[error("convection coefficient h = {h} W/m2K at fan speed {fan_speed} rpm is not positive")]
    NonPhysicalConvection { fan_speed: f64, h: f64 },
    #[error("squared current must be non-negative, got {0} A^2")]
    NegativeSquaredCurrent(f64),
    #[error("expected {expected} temperatures, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error(
        "thermal runaway / model invalid at module {node}: resistive feedback {feedback} W/K \
         is not outweighed by convection {convection} W/K"
    )]
    ThermalRunaway {
        node: usize,
        feedback: f64,
        convection: f64,
    },
    #[error("steady-state residual {residual} W exceeds tolerance")]
    ResidualTooLarge { residual: f64 },
}

/// Geometry of one row of identical, touching battery modules.
#[derive(Debug, Clone, PartialEq)]
pub struct RackGeometry {
    pub n_modules: usize,
    /// Module depth along the row axis (m).
    pub length: f64,
    /// Face shared with the neighbouring module (m^2).
    pub contact_face_area: f64,
    /// One lateral face (m^2).
    pub side_face_area: f64,
}

impl RackGeometry {
    /// Builds the geometry from module dimensions: the contact face is
    /// `width x height` and each lateral face is `length x height`.
    pub fn from_dimensions(n_modules: usize, length: f64, width: f64, height: f64) -> Self {
        Self {
            n_modules,
            length,
            contact_face_area: width * height,
            side_face_area: length * height,
        }
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        if self.n_modules < 2 {
            return Err(ThermalError::InvalidGeometry {
                field: "n_modules",
                reason: format!("must be at least 2, got {}", self.n_modules),
            });
        }
        for (field, value) in [
            ("length", self.length),
            ("contact_face_area", self.contact_face_area),
            ("side_face_area", self.side_face_area),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ThermalError::InvalidGeometry {
                    field,
                    reason: format!("must be positive and finite, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Convective area of module `i`: two lateral faces, plus the exposed
    /// contact face for the first and last module.
    pub fn convection_area(&self, i: usize) -> f64 {
        let ends = if i == 0 || i + 1 == self.n_modules {
            self.contact_face_area
        } else {
            0.0
        };
        2.0 * self.side_face_area + ends
    }
}

/// Material, cooling and electrical parameters of the modules.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalParams {
    /// Casing conduction coefficient (W/m K).
    pub k_b: f64,
    /// Base convection coefficient (W/m^2 K).
    pub h0: f64,
    /// Fan-speed sensitivity of the convection coefficient (1/rpm).
    pub lambda: f64,
    /// Reference fan speed at which `h = h0` (rpm).
    pub u_f0: f64,
    /// Ambient air temperature (K).
    pub ambient: f64,
    /// Module resistance at the reference temperature (ohm).
    pub r_ref: f64,
    /// Temperature coefficient of resistance (1/K).
    pub alpha_t: f64,
    /// Reference temperature for `r_ref` (K).
    pub t_ref: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            k_b: 205.0,
            h0: 5.0,
            lambda: 0.01814,
            u_f0: 0.0,
            ambient: 308.0,
            r_ref: 0.1,
            alpha_t: 0.004,
            t_ref: 298.15,
        }
    }
}

impl ThermalParams {
    pub fn validate(&self) -> Result<(), ThermalError> {
        let positive = [
            ("k_b", self.k_b),
            ("h0", self.h0),
            ("r_ref", self.r_ref),
            ("ambient", self.ambient),
            ("t_ref", self.t_ref),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(ThermalError::InvalidParams {
                    field,
                    reason: format!("must be positive and finite, got {value}"),
                });
            }
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(ThermalError::InvalidParams {
                field: "lambda",
                reason: format!("must be non-negative, got {}", self.lambda),
            });
        }
        if !self.u_f0.is_finite() || !self.alpha_t.is_finite() {
            return Err(ThermalError::InvalidParams {
                field: "u_f0/alpha_t",
                reason: "must be finite".into(),
            });
        }
        // resistance must stay positive at ambient, the coldest steady state
        if module_resistance(self, self.ambient) <= 0.0 {
            return Err(ThermalError::InvalidParams {
                field: "alpha_t",
                reason: "module resistance is not positive at ambient temperature".into(),
            });
        }
        Ok(())
    }

    /// Constant part of the affine resistance `R = R0 + alpha T`.
    pub fn r0(&self) -> f64 {
        self.r_ref * (1.0 - self.alpha_t * self.t_ref)
    }

    /// Slope of the affine resistance `R = R0 + alpha T` (ohm/K).
    pub fn alpha(&self) -> f64 {
        self.alpha_t * self.r_ref
    }

    /// Convection coefficient at the given fan speed.
    pub fn convection_coefficient(&self, fan_speed: f64) -> f64 {
        self.h0 * (1.0 + self.lambda * (fan_speed - self.u_f0))
    }
}

/// Module resistance `R_ref (1 + alpha_T (T - T_ref))` at temperature `t`.
pub fn module_resistance(params: &ThermalParams, temperature: f64) -> f64 {
    params.r0() + params.alpha() * temperature
}

/// Fan speed, squared module current and the temperature profile they hold.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub fan_speed: f64,
    pub squared_current: f64,
    pub temperatures: Vec<f64>,
}

impl OperatingPoint {
    /// Solves for the steady state at the given inputs.
    pub fn steady(
        system: &ThermalSystem,
        fan_speed: f64,
        squared_current: f64,
    ) -> Result<Self, ThermalError> {
        let temperatures = system.solve_steady_state(fan_speed, squared_current)?;
        Ok(Self {
            fan_speed,
            squared_current,
            temperatures,
        })
    }

    pub fn max_temperature(&self) -> f64 {
        self.temperatures
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Assembled nodal balance `B(u_f) = B0 + K u_f` over `[T; T_a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermalSystem {
    geometry: RackGeometry,
    params: ThermalParams,
    b0: DMatrix<f64>,
    k_mat: DMatrix<f64>,
    conduction_coupling: f64,
}

impl ThermalSystem {
    /// Assembles `B0` and `K` from the per-module energy balances.
    ///
    /// Row `i` reads `sum_j B_ij T_j + B_i,N+1 T_a = Q_i` with `Q_i` the heat
    /// generated in module `i`.
    pub fn assemble(geometry: RackGeometry, params: ThermalParams) -> Result<Self, ThermalError> {
        geometry.validate()?;
        params.validate()?;
        let n = geometry.n_modules;
        let coupling = params.k_b * geometry.contact_face_area / geometry.length;
        // h = h0 (1 - lambda u_f0) + h0 lambda u_f
        let h_static = params.h0 * (1.0 - params.lambda * params.u_f0);
        let h_slope = params.h0 * params.lambda;

        let mut b0 = DMatrix::zeros(n, n + 1);
        let mut k_mat = DMatrix::zeros(n, n + 1);
        for i in 0..n {
            let area = geometry.convection_area(i);
            if i > 0 {
                b0[(i, i)] += coupling;
                b0[(i, i - 1)] = -coupling;
            }
            if i + 1 < n {
                b0[(i, i)] += coupling;
                b0[(i, i + 1)] = -coupling;
            }
            b0[(i, i)] += h_static * area;
            b0[(i, n)] = -h_static * area;
            k_mat[(i, i)] = h_slope * area;
            k_mat[(i, n)] = -h_slope * area;
        }

        Ok(Self {
            geometry,
            params,
            b0,
            k_mat,
            conduction_coupling: coupling,
        })
    }

    pub fn geometry(&self) -> &RackGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &ThermalParams {
        &self.params
    }

    pub fn n_modules(&self) -> usize {
        self.geometry.n_modules
    }

    /// Fan-independent part of `B`, `N x (N + 1)`.
    pub fn b0(&self) -> &DMatrix<f64> {
        &self.b0
    }

    /// Fan-speed sensitivity of `B`, `N x (N + 1)`.
    pub fn k_mat(&self) -> &DMatrix<f64> {
        &self.k_mat
    }

    /// `k_b A_1 / l` (W/K).
    pub fn conduction_coupling(&self) -> f64 {
        self.conduction_coupling
    }

    /// `B0 + K u_f`.
    pub fn coefficient_matrix(&self, fan_speed: f64) -> DMatrix<f64> {
        &self.b0 + &self.k_mat * fan_speed
    }

    /// `M = B0 + K u_f - alpha u_I [I | 0]`, the temperature-dependent
    /// generation folded into the left-hand side.
    pub fn m_matrix(&self, fan_speed: f64, squared_current: f64) -> DMatrix<f64> {
        let mut m = self.coefficient_matrix(fan_speed);
        let feedback = self.params.alpha() * squared_current;
        for i in 0..self.n_modules() {
            m[(i, i)] -= feedback;
        }
        m
    }

    /// Augmented vector `[T; T_a]`.
    pub fn augmented(&self, temperatures: &[f64]) -> DVector<f64> {
        let n = self.n_modules();
        DVector::from_fn(n + 1, |i, _| {
            if i < n {
                temperatures[i]
            } else {
                self.params.ambient
            }
        })
    }

    fn check_inputs(&self, fan_speed: f64, squared_current: f64) -> Result<f64, ThermalError> {
        let h = self.params.convection_coefficient(fan_speed);
        if !(h.is_finite() && h > 0.0) {
            return Err(ThermalError::NonPhysicalConvection { fan_speed, h });
        }
        if !(squared_current.is_finite() && squared_current >= 0.0) {
            return Err(ThermalError::NegativeSquaredCurrent(squared_current));
        }
        Ok(h)
    }

    /// Steady-state module temperatures at the given fan speed and squared
    /// current.
    ///
    /// Solves `M_N T = u_I R0 1 - M[:, N+1] T_a` by LU with partial pivoting
    /// after checking that `M_N` is strictly diagonally dominant; a matrix
    /// that fails the check means the resistive feedback outgrows the
    /// cooling and no physical steady state exists.
    pub fn solve_steady_state(
        &self,
        fan_speed: f64,
        squared_current: f64,
    ) -> Result<Vec<f64>, ThermalError> {
        let h = self.check_inputs(fan_speed, squared_current)?;
        let n = self.n_modules();
        let m = self.m_matrix(fan_speed, squared_current);
        let feedback = self.params.alpha() * squared_current;
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
            if m[(i, i)] <= off {
                return Err(ThermalError::ThermalRunaway {
                    node: i + 1,
                    feedback,
                    convection: h * self.geometry.convection_area(i),
                });
            }
        }

        let m_n = m.columns(0, n).into_owned();
        let ambient = self.params.ambient;
        let beta = squared_current * self.params.r0();
        let rhs = DVector::from_fn(n, |i, _| beta - m[(i, n)] * ambient);
        let temps = m_n.lu().solve(&rhs).ok_or(ThermalError::ThermalRunaway {
            node: 0,
            feedback,
            convection: h,
        })?;
        let temps: Vec<f64> = temps.iter().copied().collect();

        let residual = self
            .balance_residual(&OperatingPoint {
                fan_speed,
                squared_current,
                temperatures: temps.clone(),
            })?
            .iter()
            .fold(0.0_f64, |acc, r| acc.max(r.abs()));
        if residual >= RESIDUAL_TOLERANCE {
            return Err(ThermalError::ResidualTooLarge { residual });
        }
        Ok(temps)
    }

    /// Per-module heat generated minus heat leaving, in watts.
    pub fn balance_residual(&self, point: &OperatingPoint) -> Result<Vec<f64>, ThermalError> {
        let n = self.n_modules();
        if point.temperatures.len() != n {
            return Err(ThermalError::DimensionMismatch {
                expected: n,
                actual: point.temperatures.len(),
            });
        }
        let outflow =
            self.coefficient_matrix(point.fan_speed) * self.augmented(&point.temperatures);
        Ok(point
            .temperatures
            .iter()
            .zip(outflow.iter())
            .map(|(&t, &q_out)| point.squared_current * module_resistance(&self.params, t) - q_out)
            .collect())
    }
}
