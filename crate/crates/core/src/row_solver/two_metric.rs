//! Two-metric variable partitioning and the projected Armijo search.

use crate::numeric::{dot, norm2};

use super::{RowError, RowProblem, SolverParams};

/// Partition of the row variables into fixed, gradient, and free sets.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VariableSets {
    /// At zero with a positive gradient; held at the bound.
    pub fixed: Vec<usize>,
    /// Within `eps_k` of zero with a positive gradient; moved along `-g`.
    pub gradient: Vec<usize>,
    /// Everything else; moved along the second-order direction.
    pub free: Vec<usize>,
}

/// Splits the variables using the threshold `eps_k = min(w_k, epsilon)`,
/// `w_k = ||b - P+[b - g]||_2`. Returns the sets and `eps_k`.
pub fn partition_variables(b: &[f64], g: &[f64], epsilon: f64) -> (VariableSets, f64) {
    let projected_gap: Vec<f64> = b
        .iter()
        .zip(g)
        .map(|(&br, &gr)| br - (br - gr).max(0.0))
        .collect();
    let eps_k = norm2(&projected_gap).min(epsilon);

    let mut sets = VariableSets::default();
    for (r, (&br, &gr)) in b.iter().zip(g).enumerate() {
        if gr > 0.0 && br == 0.0 {
            sets.fixed.push(r);
        } else if gr > 0.0 && br > 0.0 && br <= eps_k {
            sets.gradient.push(r);
        } else {
            sets.free.push(r);
        }
    }
    (sets, eps_k)
}

/// Full-length search direction: `free_dir` placed on the free set, `-g` on
/// the gradient set, zero on the fixed set.
pub fn assemble_direction(free_dir: &[f64], g: &[f64], sets: &VariableSets) -> Vec<f64> {
    assert_eq!(free_dir.len(), sets.free.len());
    let mut d = vec![0.0; g.len()];
    for (&r, &v) in sets.free.iter().zip(free_dir) {
        d[r] = v;
    }
    for &r in &sets.gradient {
        d[r] = -g[r];
    }
    d
}

pub fn project_step(b: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    b.iter()
        .zip(d)
        .map(|(&br, &dr)| (br + alpha * dr).max(0.0))
        .collect()
}

/// An accepted line-search step.
#[derive(Debug, Clone, PartialEq)]
pub struct LineStep {
    pub alpha: f64,
    pub backtracks: usize,
    pub b_next: Vec<f64>,
    /// `f(b_next) - f(b)`.
    pub change: f64,
    /// `f(P+[b + d]) - f(b)`, the change for the unit step.
    pub unit_step_change: f64,
}

/// A search that exhausted its backtracks.
#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchFailure {
    pub unit_step_change: f64,
}

impl From<LineSearchFailure> for RowError {
    fn from(_: LineSearchFailure) -> Self {
        RowError::LineSearchFailure
    }
}

/// Finds the smallest `t <= max_backtracks` with
/// `f(P+[b + beta^t d]) - f(b) <= sigma (P+[b + beta^t d] - b)^T g`.
///
/// `m` holds the model values at `b`. A step is only accepted if it
/// moves `b` and does not raise the objective; an infinite objective always
/// fails the test.
pub fn armijo_projected_search(
    problem: &RowProblem,
    b: &[f64],
    m: &[f64],
    g: &[f64],
    d: &[f64],
    params: &SolverParams,
) -> Result<LineStep, LineSearchFailure> {
    let mut alpha = 1.0;
    let mut unit_step_change = f64::INFINITY;
    for t in 0..=params.max_backtracks {
        let trial = project_step(b, d, alpha);
        let delta: Vec<f64> = trial.iter().zip(b).map(|(n, o)| n - o).collect();
        let change = problem.objective_change(m, &delta);
        if t == 0 {
            unit_step_change = change;
        }
        let moved = delta.iter().any(|&v| v != 0.0);
        if moved && change <= 0.0 && change <= params.sigma * dot(&delta, g) {
            return Ok(LineStep {
                alpha,
                backtracks: t,
                b_next: trial,
                change,
                unit_step_change,
            });
        }
        alpha *= params.beta;
    }
    Err(LineSearchFailure { unit_step_change })
}
