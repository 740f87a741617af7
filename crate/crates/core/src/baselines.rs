//! Plain multiplicative-update (MU) baseline for the KL mode subproblem.
//!
//! Each inner iteration multiplies every row entry by
//! `phi_ir = sum_j x_ij pi_rj / (sum_t b_it pi_tj)`, summed over the row's
//! nonzeros only. This is the standard Lee-Seung KL update; no special
//! treatment of entries near zero is attempted beyond a one-time clamp.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::row_solver::{multiplicative_step, RowProblem};

/// Entries of `B` are raised to at least this value before the first inner
/// iteration so that no entry starts in the absorbing state `b = 0`.
pub const MU_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MuParams {
    pub inner_iterations: usize,
}

impl Default for MuParams {
    fn default() -> Self {
        Self {
            inner_iterations: 10,
        }
    }
}

impl MuParams {
    pub fn validate(&self) -> Result<()> {
        if self.inner_iterations < 1 {
            return Err(Error::InvalidConfig(
                "inner_iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of MU on one row.
#[derive(Debug, Clone, PartialEq)]
pub struct MuRowResult {
    pub b: Vec<f64>,
    /// Row objective before the first update and after each one
    /// (`inner_iterations + 1` values).
    pub objectives: Vec<f64>,
}

/// Runs `params.inner_iterations` multiplicative updates on one row,
/// starting from `problem.b` clamped to [`MU_FLOOR`].
pub fn mu_solve_row(problem: &RowProblem, params: &MuParams) -> MuRowResult {
    let mut b: Vec<f64> = problem.b.iter().map(|v| v.max(MU_FLOOR)).collect();
    let mut objectives = Vec::with_capacity(params.inner_iterations + 1);
    objectives.push(problem.objective_at(&b));
    for _ in 0..params.inner_iterations {
        let g = match problem.gradient_at(&b) {
            Ok(g) => g,
            Err(_) => break,
        };
        b = multiplicative_step(&b, &g);
        objectives.push(problem.objective_at(&b));
    }
    MuRowResult { b, objectives }
}

/// One MU update `B <- B * Phi` without the clamp, exposed for checking
/// fixed points.
pub fn mu_update(problem: &RowProblem, b: &[f64]) -> Option<Vec<f64>> {
    let g = problem.gradient_at(b).ok()?;
    Some(multiplicative_step(b, &g))
}
