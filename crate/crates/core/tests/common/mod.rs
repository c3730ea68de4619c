//! Independent reference solvers used by the integration and acceptance
//! tests. None of them calls into the simplex or the matrix assembly under
//! test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use thermopf::lp::LinearProgram;
use thermopf::thermal::{RackGeometry, ThermalParams};

/// Minimizer of `(a + b x)^2 + c x^2` by golden-section search.
///
/// Function values are compared through their exact difference
/// `f(x1) - f(x2) = (x1 - x2) (2ab + (b^2 + c)(x1 + x2))`, which keeps the
/// comparison meaningful down to the spacing of floats near the minimizer.
pub fn golden_section_policy(a: f64, b: f64, c: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let l = a.abs() / c.sqrt() + 1.0;
    let (mut lo, mut hi) = (-l, l);
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    for _ in 0..400 {
        // sign of f(x1) - f(x2) with x1 < x2
        let slope = 2.0 * a * b + (b * b + c) * (x1 + x2);
        if slope > 0.0 {
            hi = x2;
            x2 = x1;
            x1 = hi - inv_phi * (hi - lo);
        } else {
            lo = x1;
            x1 = x2;
            x2 = lo + inv_phi * (hi - lo);
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(lo.abs()).max(1e-300) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Steady temperatures from damped Gauss-Seidel sweeps over the nodal heat
/// balances, written out directly from the geometry.
pub fn gauss_seidel_temperatures(
    geometry: &RackGeometry,
    params: &ThermalParams,
    fan_speed: f64,
    squared_current: f64,
) -> Vec<f64> {
    let n = geometry.n_modules;
    let kc = params.k_b * geometry.contact_face_area / geometry.length;
    let h = params.h0 * (1.0 + params.lambda * (fan_speed - params.u_f0));
    let r0 = params.r_ref * (1.0 - params.alpha_t * params.t_ref);
    let alpha = params.alpha_t * params.r_ref;
    let area = |i: usize| {
        if i == 0 || i == n - 1 {
            2.0 * geometry.side_face_area + geometry.contact_face_area
        } else {
            2.0 * geometry.side_face_area
        }
    };
    let omega = 0.9;
    let mut t = vec![params.ambient; n];
    for _ in 0..1_000_000 {
        let mut change = 0.0_f64;
        for i in 0..n {
            let mut neighbours = 0.0;
            let mut degree = 0.0;
            if i > 0 {
                neighbours += t[i - 1];
                degree += 1.0;
            }
            if i + 1 < n {
                neighbours += t[i + 1];
                degree += 1.0;
            }
            // kc (T_i - T_j) summed + h A (T_i - T_a) = u_I (R0 + alpha T_i)
            let fresh = (kc * neighbours + h * area(i) * params.ambient + squared_current * r0)
                / (kc * degree + h * area(i) - squared_current * alpha);
            let next = (1.0 - omega) * t[i] + omega * fresh;
            change = change.max((next - t[i]).abs());
            t[i] = next;
        }
        if change < 1e-13 {
            break;
        }
    }
    t
}

/// A random rack that is far from thermal runaway and whose relaxation
/// contracts reasonably fast.
pub fn random_thermal(rng: &mut ChaCha8Rng) -> (RackGeometry, ThermalParams, f64, f64) {
    loop {
        let n = rng.random_range(2..=20);
        let geometry = RackGeometry::from_dimensions(
            n,
            rng.random_range(0.2..0.6),
            rng.random_range(0.1..0.3),
            rng.random_range(0.1..0.3),
        );
        let params = ThermalParams {
            k_b: rng.random_range(20.0..250.0),
            h0: rng.random_range(2.0..10.0),
            lambda: rng.random_range(0.0..0.03),
            u_f0: rng.random_range(0.0..500.0),
            ambient: rng.random_range(280.0..320.0),
            r_ref: rng.random_range(0.01..0.2),
            alpha_t: rng.random_range(0.0..0.006),
            t_ref: 298.15,
        };
        let fan = rng.random_range(500.0..4000.0);
        let current: f64 = rng.random_range(0.0..60.0);
        let sq = current * current;
        let kc = params.k_b * geometry.contact_face_area / geometry.length;
        let h = params.h0 * (1.0 + params.lambda * (fan - params.u_f0));
        let sink = h * 2.0 * geometry.side_face_area - params.alpha_t * params.r_ref * sq;
        if h > 0.0 && sink > 0.25 * kc {
            return (geometry, params, fan, sq);
        }
    }
}

/// Optimal objective of an LP with finite lower bounds, by enumerating
/// every basic solution: each choice of at most `m` free columns with all
/// other variables at a finite bound. `None` when no basic solution is
/// feasible.
pub fn vertex_enumeration(lp: &LinearProgram) -> Option<(f64, Vec<f64>)> {
    let n = lp.num_vars();
    let m = lp.num_rows();
    let mut a = DMatrix::<f64>::zeros(m, n);
    let mut b = DVector::<f64>::zeros(m);
    for (r, row) in lp.rows.iter().enumerate() {
        for &(j, v) in &row.terms {
            a[(r, j)] += v;
        }
        b[r] = row.rhs;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    // state per variable: 0 = free, 1 = lower, 2 = upper
    let total = 3usize.pow(n as u32);
    'outer: for code in 0..total {
        let mut state = vec![0u8; n];
        let mut k = code;
        for s in state.iter_mut() {
            *s = (k % 3) as u8;
            k /= 3;
        }
        // a fixed variable is only ever at its lower bound
        if (0..n).any(|j| lp.lower[j] == lp.upper[j] && state[j] != 1) {
            continue;
        }
        let free: Vec<usize> = (0..n).filter(|&j| state[j] == 0).collect();
        if free.len() > m {
            continue;
        }
        let mut x = vec![0.0; n];
        for j in 0..n {
            match state[j] {
                1 if lp.lower[j].is_finite() => x[j] = lp.lower[j],
                2 if lp.upper[j].is_finite() => x[j] = lp.upper[j],
                0 => {}
                _ => continue 'outer,
            }
        }
        let mut rhs = b.clone();
        for j in 0..n {
            if state[j] != 0 {
                for r in 0..m {
                    rhs[r] -= a[(r, j)] * x[j];
                }
            }
        }
        if !free.is_empty() {
            let sub = DMatrix::from_fn(m, free.len(), |r, c| a[(r, free[c])]);
            let svd = sub.clone().svd(true, true);
            let smax = svd.singular_values.max();
            if svd.singular_values.min() <= 1e-10 * smax.max(1.0) {
                continue;
            }
            let sol = svd.solve(&rhs, 1e-14).ok()?;
            for (c, &j) in free.iter().enumerate() {
                x[j] = sol[c];
            }
        }
        let residual = (&a * DVector::from_vec(x.clone()) - &b).amax();
        if residual > 1e-9 {
            continue;
        }
        if (0..n).any(|j| x[j] < lp.lower[j] - 1e-9 || x[j] > lp.upper[j] + 1e-9) {
            continue;
        }
        let obj = lp.objective_value(&x);
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, x));
        }
    }
    best
}

/// Optimal objective over all binary assignments, each completed by
/// [`vertex_enumeration`].
pub fn binary_enumeration(lp: &LinearProgram) -> Option<f64> {
    let binaries: Vec<usize> = lp.binaries.iter().copied().collect();
    let mut best: Option<f64> = None;
    for mask in 0..(1u32 << binaries.len()) {
        let mut fixed = lp.clone();
        fixed.binaries.clear();
        for (k, &j) in binaries.iter().enumerate() {
            let v = f64::from((mask >> k) & 1);
            fixed.lower[j] = v;
            fixed.upper[j] = v;
        }
        if let Some((obj, _)) = vertex_enumeration(&fixed) {
            if best.is_none_or(|b| obj < b) {
                best = Some(obj);
            }
        }
    }
    best
}

/// Three bounded variables and two equality rows. Most draws are feasible
/// by construction; every fifth uses a random right-hand side.
pub fn random_small_lp(rng: &mut ChaCha8Rng, k: usize) -> LinearProgram {
    let mut lp = LinearProgram::new();
    let mut x0 = Vec::new();
    for _ in 0..3 {
        let lo: f64 = rng.random_range(-5.0..0.0);
        let hi = lo + rng.random_range(0.5..5.0);
        x0.push(rng.random_range(lo..hi));
        lp.add_var(rng.random_range(-5.0..5.0), lo, hi);
    }
    for _ in 0..2 {
        let coefs: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let rhs = if k % 5 == 4 {
            rng.random_range(-10.0..10.0)
        } else {
            coefs.iter().zip(&x0).map(|(c, x)| c * x).sum()
        };
        lp.add_row(coefs.into_iter().enumerate().collect(), rhs);
    }
    lp
}

/// Four binaries, two bounded continuous variables and two `<=` rows with
/// their slacks.
pub fn random_small_milp(rng: &mut ChaCha8Rng) -> LinearProgram {
    let mut lp = LinearProgram::new();
    let y: Vec<usize> = (0..4)
        .map(|_| lp.add_binary(rng.random_range(-5.0..5.0)))
        .collect();
    let x: Vec<usize> = (0..2)
        .map(|_| lp.add_var(rng.random_range(-3.0..3.0), 0.0, rng.random_range(1.0..5.0)))
        .collect();
    for _ in 0..2 {
        let s = lp.add_var(0.0, 0.0, f64::INFINITY);
        let mut terms: Vec<(usize, f64)> = y
            .iter()
            .map(|&j| (j, rng.random_range(-3.0..5.0)))
            .collect();
        terms.extend(x.iter().map(|&j| (j, rng.random_range(-2.0..3.0))));
        terms.push((s, 1.0));
        lp.add_row(terms, rng.random_range(0.5..6.0));
    }
    lp
}
