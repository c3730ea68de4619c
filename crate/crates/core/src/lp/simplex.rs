//! Bounded-variable primal simplex on a dense tableau.
//!
//! Nonbasic variables rest at one of their bounds (or at zero when free).
//! Phase one starts from an all-artificial basis sized to the residual of
//! that starting point and minimizes the artificial sum; phase two fixes the
//! artificials at zero and minimizes the real objective. Entering variables
//! are picked by Dantzig's rule until 50 degenerate pivots have been seen,
//! after which Bland's rule takes over for the remainder of the phase.
//! Basic values are recomputed from a fresh LU factorization of the basis at
//! the end of each phase.

use nalgebra::{DMatrix, DVector};

use super::{LinearProgram, LpError, SolveOutcome, Status, FEASIBILITY_TOLERANCE, PIVOT_TOLERANCE};

const OPTIMALITY_TOLERANCE: f64 = 1e-9;
const DEGENERATE_STEP: f64 = 1e-12;
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Degenerate pivots tolerated before switching to Bland's rule.
    pub bland_after: usize,
    /// Use Bland's rule from the first pivot.
    pub force_bland: bool,
    pub max_iterations: usize,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            bland_after: 50,
            force_bland: false,
            max_iterations: 200_000,
        }
    }
}

/// Solves the continuous relaxation of `problem` (binary markers ignored).
pub fn solve_lp(problem: &LinearProgram) -> Result<SolveOutcome, LpError> {
    solve_lp_with(problem, &SimplexOptions::default())
}

pub fn solve_lp_with(
    problem: &LinearProgram,
    options: &SimplexOptions,
) -> Result<SolveOutcome, LpError> {
    problem.validate()?;
    let mut tableau = Tableau::new(problem);
    let mut iterations = 0;

    let phase_one = tableau.run(options, &mut iterations, None)?;
    debug_assert_eq!(phase_one, PhaseEnd::Optimal);
    tableau.refresh_basic_values();
    let infeasibility: f64 = (tableau.n..tableau.ncols).map(|j| tableau.x[j].abs()).sum();
    let scale = 1.0 + problem.rows.iter().map(|r| r.rhs.abs()).fold(0.0, f64::max);
    if infeasibility > FEASIBILITY_TOLERANCE * scale {
        return Ok(SolveOutcome {
            status: Status::Infeasible,
            values: tableau.x[..tableau.n].to_vec(),
            objective_value: f64::NAN,
            iterations,
            objective_trace: Vec::new(),
            branching: None,
        });
    }

    tableau.retire_artificials();
    tableau.set_costs(&problem.objective);
    let mut trace = vec![problem.objective_value(&tableau.x[..tableau.n])];
    let phase_two = tableau.run(options, &mut iterations, Some((&mut trace, problem)))?;
    tableau.refresh_basic_values();

    let values = tableau.x[..tableau.n].to_vec();
    let status = match phase_two {
        PhaseEnd::Optimal => Status::Optimal,
        PhaseEnd::Unbounded => Status::Unbounded,
    };
    let objective_value = match status {
        Status::Optimal => problem.objective_value(&values),
        _ => f64::NEG_INFINITY,
    };
    Ok(SolveOutcome {
        status,
        values,
        objective_value,
        iterations,
        objective_trace: trace,
        branching: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable resting at zero.
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum PhaseEnd {
    Optimal,
    Unbounded,
}

struct Tableau {
    m: usize,
    /// Structural variable count; artificials occupy `n..n + m`.
    n: usize,
    ncols: usize,
    /// Original `[A | artificial]` columns, row-major `m x ncols`.
    original: Vec<f64>,
    rhs: Vec<f64>,
    /// `B^-1 [A | artificial]`, row-major `m x ncols`.
    tab: Vec<f64>,
    reduced: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    x: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Tableau {
    fn new(problem: &LinearProgram) -> Self {
        let m = problem.num_rows();
        let n = problem.num_vars();
        let ncols = n + m;

        let mut lower = problem.lower.clone();
        let mut upper = problem.upper.clone();
        let mut x = vec![0.0; ncols];
        let mut state = vec![VarState::Basic; ncols];
        for j in 0..n {
            (x[j], state[j]) = if lower[j].is_finite() {
                (lower[j], VarState::AtLower)
            } else if upper[j].is_finite() {
                (upper[j], VarState::AtUpper)
            } else {
                (0.0, VarState::Free)
            };
        }

        let mut original = vec![0.0; m * ncols];
        let mut rhs = vec![0.0; m];
        for (i, row) in problem.rows.iter().enumerate() {
            for &(j, coef) in &row.terms {
                original[i * ncols + j] += coef;
            }
            rhs[i] = row.rhs;
        }

        // artificial i carries the residual of row i at the starting point
        let mut tab = original.clone();
        let mut basis = Vec::with_capacity(m);
        for i in 0..m {
            let lhs: f64 = (0..n).map(|j| original[i * ncols + j] * x[j]).sum();
            let residual = rhs[i] - lhs;
            let sign = if residual >= 0.0 { 1.0 } else { -1.0 };
            original[i * ncols + n + i] = sign;
            for j in 0..ncols {
                tab[i * ncols + j] = sign * original[i * ncols + j];
            }
            x[n + i] = residual.abs();
            basis.push(n + i);
        }
        lower.extend(std::iter::repeat_n(0.0, m));
        upper.extend(std::iter::repeat_n(f64::INFINITY, m));

        let mut cost = vec![0.0; ncols];
        for c in &mut cost[n..] {
            *c = 1.0;
        }
        let mut t = Self {
            m,
            n,
            ncols,
            original,
            rhs,
            tab,
            reduced: vec![0.0; ncols],
            cost,
            basis,
            state,
            x,
            lower,
            upper,
        };
        t.recompute_reduced_costs();
        t
    }

    fn set_costs(&mut self, objective: &[f64]) {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.cost[..self.n].copy_from_slice(objective);
        self.recompute_reduced_costs();
    }

    fn recompute_reduced_costs(&mut self) {
        self.reduced.copy_from_slice(&self.cost);
        for i in 0..self.m {
            let cb = self.cost[self.basis[i]];
            if cb != 0.0 {
                let row = &self.tab[i * self.ncols..(i + 1) * self.ncols];
                for (d, a) in self.reduced.iter_mut().zip(row) {
                    *d -= cb * a;
                }
            }
        }
        for &k in &self.basis {
            self.reduced[k] = 0.0;
        }
    }

    /// Fixes every artificial at zero and pivots basic artificials out
    /// wherever a structural column allows it. Artificials left basic mark
    /// redundant rows and stay pinned at zero.
    fn retire_artificials(&mut self) {
        for j in self.n..self.ncols {
            self.upper[j] = 0.0;
            if self.state[j] != VarState::Basic {
                self.x[j] = 0.0;
                self.state[j] = VarState::AtLower;
            }
        }
        for r in 0..self.m {
            if self.basis[r] < self.n {
                continue;
            }
            let row = &self.tab[r * self.ncols..r * self.ncols + self.n];
            let mut best: Option<(usize, f64)> = None;
            for (j, &a) in row.iter().enumerate() {
                if self.state[j] != VarState::Basic
                    && a.abs() > 1e-7
                    && best.is_none_or(|(_, b)| a.abs() > b)
                {
                    best = Some((j, a.abs()));
                }
            }
            if let Some((j, _)) = best {
                let leaving = self.basis[r];
                self.pivot(r, j);
                self.x[leaving] = 0.0;
                self.state[leaving] = VarState::AtLower;
            }
        }
    }

    fn pivot(&mut self, r: usize, j: usize) {
        let nc = self.ncols;
        let piv = self.tab[r * nc + j];
        for v in &mut self.tab[r * nc..(r + 1) * nc] {
            *v /= piv;
        }
        let pivot_row: Vec<f64> = self.tab[r * nc..(r + 1) * nc].to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.tab[i * nc + j];
            if f != 0.0 {
                for (v, p) in self.tab[i * nc..(i + 1) * nc].iter_mut().zip(&pivot_row) {
                    *v -= f * p;
                }
                self.tab[i * nc + j] = 0.0;
            }
        }
        let dj = self.reduced[j];
        if dj != 0.0 {
            for (d, p) in self.reduced.iter_mut().zip(&pivot_row) {
                *d -= dj * p;
            }
        }
        self.reduced[j] = 0.0;
        self.basis[r] = j;
        self.state[j] = VarState::Basic;
    }

    /// Recomputes basic values as `B^-1 (b - N x_N)` from the original
    /// columns, discarding drift accumulated by tableau updates.
    fn refresh_basic_values(&mut self) {
        if self.m == 0 {
            return;
        }
        let nc = self.ncols;
        let mut rhs = DVector::from_column_slice(&self.rhs);
        for j in 0..nc {
            if self.state[j] != VarState::Basic && self.x[j] != 0.0 {
                for i in 0..self.m {
                    rhs[i] -= self.original[i * nc + j] * self.x[j];
                }
            }
        }
        let basis_matrix =
            DMatrix::from_fn(self.m, self.m, |i, k| self.original[i * nc + self.basis[k]]);
        if let Some(xb) = basis_matrix.lu().solve(&rhs) {
            for (k, &var) in self.basis.iter().enumerate() {
                self.x[var] = xb[k];
            }
        }
    }

    fn choose_entering(&self, bland: bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.ncols {
            if self.lower[j] == self.upper[j] {
                continue;
            }
            let d = self.reduced[j];
            let dir = match self.state[j] {
                VarState::Basic => continue,
                VarState::AtLower if d < -OPTIMALITY_TOLERANCE => 1.0,
                VarState::AtUpper if d > OPTIMALITY_TOLERANCE => -1.0,
                VarState::Free if d.abs() > OPTIMALITY_TOLERANCE => -d.signum(),
                _ => continue,
            };
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(_, _, score)| d.abs() > score) {
                best = Some((j, dir, d.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn run(
        &mut self,
        options: &SimplexOptions,
        iterations: &mut usize,
        mut trace: Option<(&mut Vec<f64>, &LinearProgram)>,
    ) -> Result<PhaseEnd, LpError> {
        let nc = self.ncols;
        let mut bland = options.force_bland;
        let mut degenerate = 0usize;
        loop {
            let Some((j, dir)) = self.choose_entering(bland) else {
                return Ok(PhaseEnd::Optimal);
            };
            if *iterations >= options.max_iterations {
                return Err(LpError::IterationLimit {
                    limit: options.max_iterations,
                });
            }
            *iterations += 1;

            // ratio test; `None` leaving row means the entering variable
            // reaches its own opposite bound first
            let mut theta = self.upper[j] - self.lower[j];
            let mut leaving: Option<usize> = None;
            for i in 0..self.m {
                let alpha = self.tab[i * nc + j];
                if alpha.abs() < PIVOT_TOLERANCE {
                    continue;
                }
                let k = self.basis[i];
                let rate = -dir * alpha;
                let limit = if rate < 0.0 {
                    if self.lower[k].is_finite() {
                        (self.x[k] - self.lower[k]).max(0.0) / -rate
                    } else {
                        continue;
                    }
                } else if self.upper[k].is_finite() {
                    (self.upper[k] - self.x[k]).max(0.0) / rate
                } else {
                    continue;
                };
                let better = if limit < theta - TIE_TOLERANCE {
                    true
                } else if limit <= theta + TIE_TOLERANCE {
                    match leaving {
                        None => false,
                        Some(prev) if bland => k < self.basis[prev],
                        Some(prev) => alpha.abs() > self.tab[prev * nc + j].abs(),
                    }
                } else {
                    false
                };
                if better {
                    theta = limit;
                    leaving = Some(i);
                }
            }
            if theta == f64::INFINITY {
                return Ok(PhaseEnd::Unbounded);
            }

            let step = dir * theta;
            self.x[j] += step;
            for i in 0..self.m {
                let alpha = self.tab[i * nc + j];
                if alpha != 0.0 {
                    self.x[self.basis[i]] -= step * alpha;
                }
            }

            match leaving {
                None => {
                    (self.x[j], self.state[j]) = if dir > 0.0 {
                        (self.upper[j], VarState::AtUpper)
                    } else {
                        (self.lower[j], VarState::AtLower)
                    };
                }
                Some(r) => {
                    let k = self.basis[r];
                    let rate = -dir * self.tab[r * nc + j];
                    self.pivot(r, j);
                    (self.x[k], self.state[k]) = if rate < 0.0 {
                        (self.lower[k], VarState::AtLower)
                    } else {
                        (self.upper[k], VarState::AtUpper)
                    };
                }
            }

            if theta <= DEGENERATE_STEP {
                degenerate += 1;
                if degenerate >= options.bland_after {
                    bland = true;
                }
            }
            if let Some((trace, problem)) = trace.as_mut() {
                trace.push(problem.objective_value(&self.x[..self.n]));
            }
        }
    }
}
