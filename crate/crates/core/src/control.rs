//! Closed-form temperature control policy.
//!
//! Linearizing `M T = beta` around the current steady state gives, for every
//! module, a line relating the two control increments that drive the profile
//! toward a reference `T*`:
//!
//! ```text
//! [K T~]_i du_f - (alpha T_i + R0) du_I = -[M (T* - T)]_i
//! du_f = a_i + b_i du_I
//! ```
//!
//! The `N` lines are reduced to one scalar line `du_f = a + b du_I`, and the
//! effort minimizing `du_f^2 + c du_I^2` on that line is available in closed
//! form.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use thiserror::Error;

use crate::thermal::{OperatingPoint, ThermalError, ThermalSystem};

/// A node counts as having convective leverage only this far above ambient (K).
pub const AMBIENT_GUARD: f64 = 1e-6;

/// Iteration cap for [`iterate_policy`].
pub const MAX_POLICY_ITERATIONS: usize = 20;

/// Stopping tolerance of [`iterate_policy`] on `max |T - T*|` (K).
pub const POLICY_TOLERANCE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error(
        "no convective leverage at module {node}: T = {temperature} K is not above ambient \
         {ambient} K (or lambda = 0)"
    )]
    NoConvectiveLeverage {
        node: usize,
        temperature: f64,
        ambient: f64,
    },
    #[error("policy weight c must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("invalid reduction: {0}")]
    InvalidReduction(String),
    #[error("target has {actual} entries, expected {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("effort drives the squared current to {0} A^2 (must stay >= 0)")]
    NegativeSquaredCurrent(f64),
    #[error("effort drives the fan speed to {fan_speed} rpm where h = {h} W/m2K (must stay > 0)")]
    NonPhysicalFan { fan_speed: f64, h: f64 },
    #[error("linearization direction must be nonzero")]
    ZeroDirection,
    #[error(transparent)]
    Thermal(#[from] ThermalError),
}

/// How the per-module coefficients are collapsed onto one scalar line.
#[derive(Debug, Clone, PartialEq)]
pub enum Reduction {
    /// Use module `index` (zero-based) alone.
    SingleNode(usize),
    /// Use the currently hottest module (lowest index on ties).
    Hottest,
    /// Weighted average of `a_i` and `b_i`; `None` means uniform weights.
    WeightedMean(Option<Vec<f64>>),
    /// The line `du_f(du_I)` that best satisfies all `N` rows in the
    /// least-squares sense, i.e. a mean weighted by `[K T~]_i^2`.
    LeastSquares,
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::WeightedMean(None)
    }
}

impl Reduction {
    pub fn uniform() -> Self {
        Reduction::WeightedMean(None)
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reduction::SingleNode(i) => write!(f, "node:{}", i + 1),
            Reduction::Hottest => f.write_str("hottest"),
            Reduction::WeightedMean(None) => f.write_str("weighted_mean"),
            Reduction::WeightedMean(Some(w)) => {
                let parts: Vec<String> = w.iter().map(|x| x.to_string()).collect();
                write!(f, "weighted_mean:{}", parts.join(","))
            }
            Reduction::LeastSquares => f.write_str("least_squares"),
        }
    }
}

impl FromStr for Reduction {
    type Err = ControlError;

    /// Accepts `weighted_mean`, `weighted_mean:w1,w2,..`, `hottest`,
    /// `least_squares` and `node:<k>` with a one-based module index.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (head, tail) = match s.split_once(':') {
            Some((h, t)) => (h, Some(t)),
            None => (s, None),
        };
        match (head, tail) {
            ("weighted_mean" | "mean", None) => Ok(Reduction::WeightedMean(None)),
            ("weighted_mean" | "mean", Some(list)) => {
                let weights = list
                    .split(',')
                    .map(|w| w.trim().parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| {
                        ControlError::InvalidReduction(format!("bad weight in {s:?}: {e}"))
                    })?;
                Ok(Reduction::WeightedMean(Some(weights)))
            }
            ("hottest", None) => Ok(Reduction::Hottest),
            ("least_squares" | "lsq", None) => Ok(Reduction::LeastSquares),
            ("node", Some(k)) => {
                let k: usize = k.trim().parse().map_err(|_| {
                    ControlError::InvalidReduction(format!("bad node index in {s:?}"))
                })?;
                if k == 0 {
                    return Err(ControlError::InvalidReduction(
                        "node index is one-based".into(),
                    ));
                }
                Ok(Reduction::SingleNode(k - 1))
            }
            _ => Err(ControlError::InvalidReduction(format!(
                "unknown mode {s:?} (expected weighted_mean, hottest, least_squares or node:<k>)"
            ))),
        }
    }
}

/// Per-module effort coefficients and their scalar reduction.
#[derive(Debug, Clone, PartialEq)]
pub struct EffortCoefficients {
    /// `a_i = -[M (T* - T)]_i / [K T~]_i` (rpm).
    pub a: Vec<f64>,
    /// `b_i = (alpha T_i + R0) / [K T~]_i` (rpm per A^2).
    pub b: Vec<f64>,
    /// `[K T~]_i` (W/K per rpm); the leverage the fan has on each module.
    pub leverage: Vec<f64>,
    pub reduced_a: f64,
    pub reduced_b: f64,
    pub reduction: Reduction,
}

/// Fan-speed and squared-current increments chosen by the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlEffort {
    pub delta_fan: f64,
    pub delta_squared_current: f64,
    pub weight: f64,
}

impl ControlEffort {
    pub fn zero() -> Self {
        Self {
            delta_fan: 0.0,
            delta_squared_current: 0.0,
            weight: 1.0,
        }
    }

    /// `du_f^2 + c du_I^2`.
    pub fn objective(&self) -> f64 {
        self.delta_fan * self.delta_fan
            + self.weight * self.delta_squared_current * self.delta_squared_current
    }
}

fn nodes_used(reduction: &Reduction, point: &OperatingPoint) -> Result<Vec<usize>, ControlError> {
    let n = point.temperatures.len();
    match reduction {
        Reduction::SingleNode(i) if *i < n => Ok(vec![*i]),
        Reduction::SingleNode(i) => Err(ControlError::InvalidReduction(format!(
            "node {} out of range 1..={n}",
            i + 1
        ))),
        Reduction::Hottest => {
            let mut best = 0;
            for (i, &t) in point.temperatures.iter().enumerate() {
                if t > point.temperatures[best] {
                    best = i;
                }
            }
            Ok(vec![best])
        }
        Reduction::WeightedMean(Some(w)) => {
            if w.len() != n {
                return Err(ControlError::InvalidReduction(format!(
                    "{} weights for {n} modules",
                    w.len()
                )));
            }
            if w.iter().any(|x| !x.is_finite() || *x < 0.0) || w.iter().sum::<f64>() <= 0.0 {
                return Err(ControlError::InvalidReduction(
                    "weights must be non-negative with a positive sum".into(),
                ));
            }
            Ok((0..n).filter(|&i| w[i] > 0.0).collect())
        }
        Reduction::WeightedMean(None) | Reduction::LeastSquares => Ok((0..n).collect()),
    }
}

/// Computes `a_i`, `b_i` at the current steady state and reduces them.
///
/// Only the first `N` columns of `M` act on `T* - T`; the ambient does not
/// move. Every module used by the reduction must sit above ambient, since
/// the fan has no leverage on a module at ambient temperature.
pub fn compute_effort_coefficients(
    system: &ThermalSystem,
    point: &OperatingPoint,
    target: &[f64],
    reduction: &Reduction,
) -> Result<EffortCoefficients, ControlError> {
    let n = system.n_modules();
    if target.len() != n {
        return Err(ControlError::DimensionMismatch {
            expected: n,
            actual: target.len(),
        });
    }
    if point.temperatures.len() != n {
        return Err(ControlError::DimensionMismatch {
            expected: n,
            actual: point.temperatures.len(),
        });
    }
    let params = system.params();
    let used = nodes_used(reduction, point)?;
    for &i in &used {
        let t = point.temperatures[i];
        if params.lambda <= 0.0 || t <= params.ambient + AMBIENT_GUARD {
            return Err(ControlError::NoConvectiveLeverage {
                node: i + 1,
                temperature: t,
                ambient: params.ambient,
            });
        }
    }

    let m = system.m_matrix(point.fan_speed, point.squared_current);
    let m_n = m.columns(0, n);
    let shift = DVector::from_fn(n, |i, _| target[i] - point.temperatures[i]);
    let rhs = -(m_n * shift);
    let leverage_vec = system.k_mat() * system.augmented(&point.temperatures);

    let mut a = vec![f64::NAN; n];
    let mut b = vec![f64::NAN; n];
    let leverage: Vec<f64> = leverage_vec.iter().copied().collect();
    for i in 0..n {
        if leverage[i] != 0.0 {
            a[i] = rhs[i] / leverage[i];
            b[i] = (params.alpha() * point.temperatures[i] + params.r0()) / leverage[i];
        }
    }

    let (reduced_a, reduced_b) = match reduction {
        Reduction::SingleNode(_) | Reduction::Hottest => (a[used[0]], b[used[0]]),
        Reduction::WeightedMean(Some(w)) => weighted(&used, |i| w[i], &a, &b),
        Reduction::WeightedMean(None) => weighted(&used, |_| 1.0, &a, &b),
        Reduction::LeastSquares => weighted(&used, |i| leverage[i] * leverage[i], &a, &b),
    };

    Ok(EffortCoefficients {
        a,
        b,
        leverage,
        reduced_a,
        reduced_b,
        reduction: reduction.clone(),
    })
}

fn weighted(used: &[usize], weight: impl Fn(usize) -> f64, a: &[f64], b: &[f64]) -> (f64, f64) {
    let total: f64 = used.iter().map(|&i| weight(i)).sum();
    let ra = used.iter().map(|&i| weight(i) * a[i]).sum::<f64>() / total;
    let rb = used.iter().map(|&i| weight(i) * b[i]).sum::<f64>() / total;
    (ra, rb)
}

/// Minimizer of `du_f^2 + c du_I^2` subject to `du_f = a + b du_I`.
pub fn optimal_policy(
    coeffs: &EffortCoefficients,
    weight: f64,
) -> Result<ControlEffort, ControlError> {
    policy_for_line(coeffs.reduced_a, coeffs.reduced_b, weight)
}

/// [`optimal_policy`] on an explicit scalar line.
pub fn policy_for_line(a: f64, b: f64, weight: f64) -> Result<ControlEffort, ControlError> {
    if !(weight.is_finite() && weight > 0.0) {
        return Err(ControlError::InvalidWeight(weight));
    }
    let denom = b * b + weight;
    Ok(ControlEffort {
        delta_fan: a - a * b * b / denom,
        delta_squared_current: -a * b / denom,
        weight,
    })
}

/// Applies the increments and re-solves the steady state.
pub fn apply_effort(
    system: &ThermalSystem,
    point: &OperatingPoint,
    effort: &ControlEffort,
) -> Result<OperatingPoint, ControlError> {
    let fan_speed = point.fan_speed + effort.delta_fan;
    let squared_current = point.squared_current + effort.delta_squared_current;
    if squared_current.is_nan() || squared_current < 0.0 {
        return Err(ControlError::NegativeSquaredCurrent(squared_current));
    }
    let h = system.params().convection_coefficient(fan_speed);
    if h.is_nan() || h <= 0.0 {
        return Err(ControlError::NonPhysicalFan { fan_speed, h });
    }
    Ok(OperatingPoint::steady(system, fan_speed, squared_current)?)
}

/// Result of repeatedly applying the policy toward a fixed reference.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIteration {
    pub point: OperatingPoint,
    pub total_effort: ControlEffort,
    pub iterations: usize,
    pub converged: bool,
    /// `max |T - T*|` after each step.
    pub errors: Vec<f64>,
}

/// Re-linearizes and re-applies the policy until `max |T - T*| < 0.01 K`
/// or 20 steps have been taken.
pub fn iterate_policy(
    system: &ThermalSystem,
    start: &OperatingPoint,
    target: &[f64],
    reduction: &Reduction,
    weight: f64,
) -> Result<PolicyIteration, ControlError> {
    let mut point = start.clone();
    let mut errors = Vec::new();
    let mut total = ControlEffort {
        weight,
        ..ControlEffort::zero()
    };
    let gap = |p: &OperatingPoint| {
        p.temperatures
            .iter()
            .zip(target)
            .fold(0.0_f64, |acc, (t, s)| acc.max((t - s).abs()))
    };
    let mut converged = gap(&point) < POLICY_TOLERANCE;
    let mut iterations = 0;
    while !converged && iterations < MAX_POLICY_ITERATIONS {
        let coeffs = compute_effort_coefficients(system, &point, target, reduction)?;
        let effort = optimal_policy(&coeffs, weight)?;
        point = apply_effort(system, &point, &effort)?;
        total.delta_fan += effort.delta_fan;
        total.delta_squared_current += effort.delta_squared_current;
        iterations += 1;
        let err = gap(&point);
        errors.push(err);
        converged = err < POLICY_TOLERANCE;
    }
    Ok(PolicyIteration {
        point,
        total_effort: total,
        iterations,
        converged,
        errors,
    })
}

/// One row of the linearization-order table.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationSample {
    pub epsilon: f64,
    pub effort: ControlEffort,
    /// `max |T_new - (T + dT_lin)|`, where `dT_lin` solves the linearized
    /// balance `M dT + dM T = d beta` for the applied effort. This isolates
    /// the dropped `dM dT` term and is second order in `epsilon`.
    pub residual: f64,
    /// `max |T_new - T*|` with `T* = T + epsilon * direction`. Contains the
    /// first-order miss from collapsing `N` rows onto one scalar line.
    pub target_miss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationTable {
    pub samples: Vec<LinearizationSample>,
    /// `residual(eps_{k+1}) / residual(eps_k)` for consecutive samples whose
    /// residuals are both resolvable; `None` where the pair is degenerate.
    pub ratios: Vec<Option<f64>>,
}

/// Residuals below this are indistinguishable from solver round-off.
pub const LINEARIZATION_FLOOR: f64 = 10.0 * 1e-10;

impl LinearizationTable {
    /// True when every resolvable ratio lies in `[lo, hi]` and at least one
    /// ratio was resolvable.
    pub fn is_second_order(&self, lo: f64, hi: f64) -> bool {
        let mut any = false;
        for r in self.ratios.iter().flatten() {
            any = true;
            if !(lo..=hi).contains(r) {
                return false;
            }
        }
        any
    }
}

/// Measures how the one-step policy error shrinks with the size of the
/// requested temperature change.
pub fn linearization_order(
    system: &ThermalSystem,
    point: &OperatingPoint,
    direction: &[f64],
    epsilons: &[f64],
    reduction: &Reduction,
    weight: f64,
) -> Result<LinearizationTable, ControlError> {
    let n = system.n_modules();
    if direction.len() != n {
        return Err(ControlError::DimensionMismatch {
            expected: n,
            actual: direction.len(),
        });
    }
    if direction.iter().all(|d| *d == 0.0) {
        return Err(ControlError::ZeroDirection);
    }
    let params = system.params();
    let m = system.m_matrix(point.fan_speed, point.squared_current);
    let m_n = m.columns(0, n).into_owned();
    let lu = m_n.lu();
    let leverage = system.k_mat() * system.augmented(&point.temperatures);

    let mut samples = Vec::with_capacity(epsilons.len());
    for &epsilon in epsilons {
        let target: Vec<f64> = point
            .temperatures
            .iter()
            .zip(direction)
            .map(|(t, d)| t + epsilon * d)
            .collect();
        let coeffs = compute_effort_coefficients(system, point, &target, reduction)?;
        let effort = optimal_policy(&coeffs, weight)?;
        let new_point = apply_effort(system, point, &effort)?;

        // M dT = (R0 + alpha T) du_I - [K T~] du_f
        let rhs = DVector::from_fn(n, |i, _| {
            (params.r0() + params.alpha() * point.temperatures[i]) * effort.delta_squared_current
                - leverage[i] * effort.delta_fan
        });
        let predicted = lu.solve(&rhs).ok_or(ThermalError::ThermalRunaway {
            node: 0,
            feedback: params.alpha() * point.squared_current,
            convection: 0.0,
        })?;
        let mut residual = 0.0_f64;
        let mut target_miss = 0.0_f64;
        for i in 0..n {
            let t_new = new_point.temperatures[i];
            residual = residual.max((t_new - (point.temperatures[i] + predicted[i])).abs());
            target_miss = target_miss.max((t_new - target[i]).abs());
        }
        samples.push(LinearizationSample {
            epsilon,
            effort,
            residual,
            target_miss,
        });
    }

    let ratios = samples
        .windows(2)
        .map(|w| {
            if w[0].residual > LINEARIZATION_FLOOR && w[1].residual > LINEARIZATION_FLOOR {
                Some(w[1].residual / w[0].residual)
            } else {
                None
            }
        })
        .collect();
    Ok(LinearizationTable { samples, ratios })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::thermal::{RackGeometry, ThermalParams};

    fn table_system() -> ThermalSystem {
        ThermalSystem::assemble(
            RackGeometry::from_dimensions(10, 0.45, 0.15, 0.23),
            ThermalParams::default(),
        )
        .unwrap()
    }

    fn initial(sys: &ThermalSystem) -> OperatingPoint {
        OperatingPoint::steady(sys, 2000.0, 2500.0).unwrap()
    }

    fn scaled_target(sys: &ThermalSystem, p: &OperatingPoint, s: f64) -> Vec<f64> {
        let ta = sys.params().ambient;
        p.temperatures.iter().map(|t| ta + s * (t - ta)).collect()
    }

    #[test]
    fn target_equal_to_current_gives_zero_a() {
        let sys = table_system();
        let p = initial(&sys);
        let c =
            compute_effort_coefficients(&sys, &p, &p.temperatures, &Reduction::uniform()).unwrap();
        assert!(c.a.iter().all(|&x| x == 0.0));
        assert_eq!(c.reduced_a, 0.0);
        assert!(c.b.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn a_is_linear_in_target_shift() {
        let sys = table_system();
        let p = initial(&sys);
        let t1 = scaled_target(&sys, &p, 0.97);
        let t2 = scaled_target(&sys, &p, 0.94);
        let c1 = compute_effort_coefficients(&sys, &p, &t1, &Reduction::uniform()).unwrap();
        let c2 = compute_effort_coefficients(&sys, &p, &t2, &Reduction::uniform()).unwrap();
        for i in 0..10 {
            assert!((c2.a[i] - 2.0 * c1.a[i]).abs() < 1e-9 * c1.a[i].abs().max(1.0));
            assert_eq!(c1.b[i], c2.b[i]);
        }
    }

    #[test]
    fn cooling_gives_positive_a() {
        let sys = table_system();
        let p = initial(&sys);
        let t = scaled_target(&sys, &p, 0.95);
        let c = compute_effort_coefficients(&sys, &p, &t, &Reduction::uniform()).unwrap();
        assert!(c.a.iter().all(|&x| x > 0.0));
        let e = optimal_policy(&c, 0.25).unwrap();
        assert!(e.delta_fan > 0.0 && e.delta_squared_current < 0.0);
    }

    #[test]
    fn ambient_node_has_no_leverage() {
        let sys = table_system();
        let p = OperatingPoint::steady(&sys, 2000.0, 0.0).unwrap();
        let err = compute_effort_coefficients(&sys, &p, &p.temperatures, &Reduction::uniform())
            .unwrap_err();
        assert!(matches!(
            err,
            ControlError::NoConvectiveLeverage { node: 1, .. }
        ));

        let still = ThermalSystem::assemble(
            RackGeometry::from_dimensions(10, 0.45, 0.15, 0.23),
            ThermalParams {
                lambda: 0.0,
                ..ThermalParams::default()
            },
        )
        .unwrap();
        let p = OperatingPoint::steady(&still, 2000.0, 100.0).unwrap();
        assert!(matches!(
            compute_effort_coefficients(&still, &p, &p.temperatures, &Reduction::Hottest),
            Err(ControlError::NoConvectiveLeverage { .. })
        ));
    }

    #[test]
    fn reductions_agree_with_their_definitions() {
        let sys = table_system();
        let p = initial(&sys);
        let t = scaled_target(&sys, &p, 0.95);
        let lsq = compute_effort_coefficients(&sys, &p, &t, &Reduction::LeastSquares).unwrap();
        let hot = compute_effort_coefficients(&sys, &p, &t, &Reduction::Hottest).unwrap();
        let argmax = (0..10).fold(0, |best, i| {
            if p.temperatures[i] > p.temperatures[best] {
                i
            } else {
                best
            }
        });
        let node =
            compute_effort_coefficients(&sys, &p, &t, &Reduction::SingleNode(argmax)).unwrap();
        assert!(argmax == 4 || argmax == 5);
        assert_eq!(hot.reduced_a, node.reduced_a);

        // least squares over (du_f) of sum_i (g_i du_f - q_i du_I - m_i)^2
        let g = &lsq.leverage;
        let gg: f64 = g.iter().map(|x| x * x).sum();
        let a: f64 = (0..10).map(|i| g[i] * g[i] * lsq.a[i]).sum::<f64>() / gg;
        assert!((lsq.reduced_a - a).abs() < 1e-9);

        let w: Vec<f64> = (1..=10).map(|i| i as f64).collect();
        let wm =
            compute_effort_coefficients(&sys, &p, &t, &Reduction::WeightedMean(Some(w.clone())))
                .unwrap();
        let expect = (0..10).map(|i| w[i] * wm.b[i]).sum::<f64>() / 55.0;
        assert!((wm.reduced_b - expect).abs() < 1e-12);
    }

    #[test]
    fn bad_reductions_rejected() {
        let sys = table_system();
        let p = initial(&sys);
        let t = p.temperatures.clone();
        assert!(compute_effort_coefficients(&sys, &p, &t, &Reduction::SingleNode(10)).is_err());
        assert!(compute_effort_coefficients(
            &sys,
            &p,
            &t,
            &Reduction::WeightedMean(Some(vec![0.0; 10]))
        )
        .is_err());
        assert!(compute_effort_coefficients(&sys, &p, &t[..3], &Reduction::uniform()).is_err());
    }

    #[test]
    fn reduction_parsing() {
        assert_eq!(
            "weighted_mean".parse::<Reduction>().unwrap(),
            Reduction::WeightedMean(None)
        );
        assert_eq!(
            "node:3".parse::<Reduction>().unwrap(),
            Reduction::SingleNode(2)
        );
        assert_eq!("hottest".parse::<Reduction>().unwrap(), Reduction::Hottest);
        assert_eq!(
            "least_squares".parse::<Reduction>().unwrap(),
            Reduction::LeastSquares
        );
        assert_eq!(
            "weighted_mean:1,2".parse::<Reduction>().unwrap(),
            Reduction::WeightedMean(Some(vec![1.0, 2.0]))
        );
        assert!("node:0".parse::<Reduction>().is_err());
        assert!("median".parse::<Reduction>().is_err());
        for r in [
            Reduction::SingleNode(4),
            Reduction::Hottest,
            Reduction::LeastSquares,
        ] {
            assert_eq!(r.to_string().parse::<Reduction>().unwrap(), r);
        }
    }

    #[test]
    fn policy_closed_form_cases() {
        let e = policy_for_line(0.0, 3.0, 0.25).unwrap();
        assert_eq!((e.delta_fan, e.delta_squared_current), (0.0, 0.0));

        let e = policy_for_line(1.0, 1.0, 1.0).unwrap();
        assert!((e.delta_fan - 0.5).abs() < 1e-15);
        assert!((e.delta_squared_current + 0.5).abs() < 1e-15);

        let e = policy_for_line(2.0, 1.0, 1e9).unwrap();
        assert!((e.delta_fan - 2.0).abs() < 1e-8);
        assert!(e.delta_squared_current.abs() < 1e-8);

        assert!(matches!(
            policy_for_line(1.0, 1.0, 0.0),
            Err(ControlError::InvalidWeight(_))
        ));
        assert!(policy_for_line(1.0, 1.0, -2.0).is_err());
        assert!(policy_for_line(1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn zero_effort_keeps_point() {
        let sys = table_system();
        let p = initial(&sys);
        let q = apply_effort(&sys, &p, &ControlEffort::zero()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn removing_current_returns_to_ambient() {
        let sys = table_system();
        let p = initial(&sys);
        let e = ControlEffort {
            delta_fan: 150.0,
            delta_squared_current: -p.squared_current,
            weight: 1.0,
        };
        let q = apply_effort(&sys, &p, &e).unwrap();
        assert!(q.temperatures.iter().all(|&t| (t - 308.0).abs() < 1e-12));
    }

    #[test]
    fn policy_step_cools_the_hottest_module() {
        let sys = table_system();
        let p = initial(&sys);
        let t = scaled_target(&sys, &p, 0.95);
        let c = compute_effort_coefficients(&sys, &p, &t, &Reduction::uniform()).unwrap();
        let e = optimal_policy(&c, 0.25).unwrap();
        let q = apply_effort(&sys, &p, &e).unwrap();
        assert!(q.max_temperature() < p.max_temperature());
    }

    #[test]
    fn apply_effort_reports_physical_bounds() {
        let sys = table_system();
        let p = initial(&sys);
        let too_much = ControlEffort {
            delta_fan: 0.0,
            delta_squared_current: -2600.0,
            weight: 1.0,
        };
        assert!(matches!(
            apply_effort(&sys, &p, &too_much),
            Err(ControlError::NegativeSquaredCurrent(v)) if v == -100.0
        ));
        let stall = ControlEffort {
            delta_fan: -2100.0,
            delta_squared_current: 0.0,
            weight: 1.0,
        };
        assert!(matches!(
            apply_effort(&sys, &p, &stall),
            Err(ControlError::NonPhysicalFan { .. })
        ));
    }

    #[test]
    fn iterated_policy_converges_on_reachable_cooling() {
        let sys = table_system();
        let p = initial(&sys);
        let t = scaled_target(&sys, &p, 0.95);
        let it = iterate_policy(&sys, &p, &t, &Reduction::uniform(), 0.25).unwrap();
        assert!(it.converged, "errors {:?}", it.errors);
        assert!(it.iterations <= MAX_POLICY_ITERATIONS);
    }

    #[test]
    fn zero_epsilon_has_zero_residual() {
        let sys = table_system();
        let p = initial(&sys);
        let dir: Vec<f64> = p.temperatures.iter().map(|t| -0.01 * (t - 308.0)).collect();
        let table =
            linearization_order(&sys, &p, &dir, &[0.0], &Reduction::uniform(), 0.25).unwrap();
        assert!(table.samples[0].residual < 1e-10);
        assert!(table.ratios.is_empty());
    }

    #[test]
    fn linearization_error_is_quadratic() {
        let sys = table_system();
        let p = initial(&sys);
        let dir: Vec<f64> = p.temperatures.iter().map(|t| -0.01 * (t - 308.0)).collect();
        let eps = [2.0, 1.0, 0.5, 0.25];
        let table = linearization_order(&sys, &p, &dir, &eps, &Reduction::uniform(), 0.25).unwrap();
        assert!(table.is_second_order(0.15, 0.35), "{:?}", table.ratios);
        // doubling epsilon roughly quadruples the residual
        for w in table.samples.windows(2) {
            let growth = w[0].residual / w[1].residual;
            assert!((3.0..5.0).contains(&growth), "growth {growth}");
        }
        assert!(
            linearization_order(&sys, &p, &[0.0; 10], &eps, &Reduction::uniform(), 0.25).is_err()
        );
    }
}
