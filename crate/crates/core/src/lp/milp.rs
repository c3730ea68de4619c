//! Best-first branch-and-bound over binary variables.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::simplex::{solve_lp_with, SimplexOptions};
use super::{LinearProgram, LpError, SolveOutcome, Status, INTEGRALITY_TOLERANCE};

/// Largest binary count accepted by [`solve_milp`].
pub const MAX_BINARIES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MilpOptions {
    pub node_limit: usize,
    pub simplex: SimplexOptions,
}

impl Default for MilpOptions {
    fn default() -> Self {
        Self {
            node_limit: 100_000,
            simplex: SimplexOptions::default(),
        }
    }
}

/// Search statistics attached to a MILP outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchStats {
    /// LP relaxations solved.
    pub nodes: usize,
    /// Incumbent objective each time it improved.
    pub incumbent_trace: Vec<f64>,
    /// Relaxation bounds of every node discarded against an incumbent.
    pub pruned_bounds: Vec<f64>,
}

struct Node {
    bound: f64,
    seq: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    values: Vec<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then oldest node
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

fn most_fractional(problem: &LinearProgram, values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for &j in &problem.binaries {
        let v = values[j];
        let frac = (v - v.floor()).min(v.ceil() - v);
        if frac > INTEGRALITY_TOLERANCE && best.is_none_or(|(_, f)| frac > f) {
            best = Some((j, frac));
        }
    }
    best.map(|(j, _)| j)
}

/// Globally optimal solution over all binary assignments.
pub fn solve_milp(problem: &LinearProgram) -> Result<SolveOutcome, LpError> {
    solve_milp_with(problem, &MilpOptions::default())
}

pub fn solve_milp_with(
    problem: &LinearProgram,
    options: &MilpOptions,
) -> Result<SolveOutcome, LpError> {
    problem.validate()?;
    if problem.binaries.len() > MAX_BINARIES {
        return Err(LpError::TooManyBinaries {
            count: problem.binaries.len(),
            max: MAX_BINARIES,
        });
    }

    let mut stats = BranchStats {
        nodes: 0,
        incumbent_trace: Vec::new(),
        pruned_bounds: Vec::new(),
    };
    let mut iterations = 0;
    let mut relaxed = problem.clone();

    let mut solve_node = |lower: &[f64], upper: &[f64], stats: &mut BranchStats| {
        if stats.nodes >= options.node_limit {
            return Err(LpError::NodeLimit {
                limit: options.node_limit,
            });
        }
        stats.nodes += 1;
        relaxed.lower.copy_from_slice(lower);
        relaxed.upper.copy_from_slice(upper);
        let out = solve_lp_with(&relaxed, &options.simplex)?;
        iterations += out.iterations;
        Ok(out)
    };

    let root = solve_node(&problem.lower, &problem.upper, &mut stats)?;
    if root.status != Status::Optimal {
        return Ok(SolveOutcome {
            branching: Some(stats),
            ..root
        });
    }

    if most_fractional(problem, &root.values).is_none() {
        stats.incumbent_trace.push(root.objective_value);
        return Ok(SolveOutcome {
            iterations,
            branching: Some(stats),
            ..root
        });
    }

    let mut incumbent: Option<SolveOutcome> = None;
    let mut heap = BinaryHeap::new();
    let mut seq = 0;
    heap.push(Node {
        bound: root.objective_value,
        seq,
        lower: problem.lower.clone(),
        upper: problem.upper.clone(),
        values: root.values,
    });

    // every queued node has a fractional relaxation
    while let Some(node) = heap.pop() {
        let best = incumbent
            .as_ref()
            .map_or(f64::INFINITY, |s| s.objective_value);
        if node.bound >= best {
            stats.pruned_bounds.push(node.bound);
            continue;
        }
        let var = most_fractional(problem, &node.values).expect("queued node is fractional");

        for fixed in [0.0, 1.0] {
            let mut lower = node.lower.clone();
            let mut upper = node.upper.clone();
            lower[var] = fixed;
            upper[var] = fixed;
            let child = solve_node(&lower, &upper, &mut stats)?;
            if child.status != Status::Optimal {
                continue;
            }
            let best = incumbent
                .as_ref()
                .map_or(f64::INFINITY, |s| s.objective_value);
            if child.objective_value >= best {
                stats.pruned_bounds.push(child.objective_value);
                continue;
            }
            if most_fractional(problem, &child.values).is_none() {
                stats.incumbent_trace.push(child.objective_value);
                incumbent = Some(child);
                continue;
            }
            seq += 1;
            heap.push(Node {
                bound: child.objective_value,
                seq,
                lower,
                upper,
                values: child.values,
            });
        }
    }

    Ok(match incumbent {
        Some(best) => SolveOutcome {
            iterations,
            branching: Some(stats),
            ..best
        },
        None => SolveOutcome {
            status: Status::Infeasible,
            values: vec![f64::NAN; problem.num_vars()],
            objective_value: f64::NAN,
            iterations,
            objective_trace: Vec::new(),
            branching: Some(stats),
        },
    })
}
