//! Solvers for one bound-constrained row subproblem
//! `min f_row(b) s.t. b >= 0`.
//!
//! Both solvers share the same outer loop: compute the gradient, stop once
//! the KKT violation is at most `tau`, partition the variables into the
//! fixed / gradient / free sets, build a search direction, and take a
//! projected Armijo step. They differ only in the direction used on the
//! free set:
//!
//! - [`solve_row_pdnr`] solves the damped Newton system
//!   `(H_F + mu I) d_F = -g_F` and adapts `mu` from the ratio of actual to
//!   predicted decrease.
//! - [`solve_row_pqnr`] applies an L-BFGS inverse-Hessian approximation
//!   built over all `R` variables and keeps only its free components.
//!
//! When the line search runs out of backtracks, or the damped Hessian
//! cannot be factored even after raising `mu`, the solver takes one
//! multiplicative-update step instead so the iteration still makes
//! progress. Those events are counted in [`RowSolveReport`].

mod lbfgs;
mod newton;
mod problem;
mod two_metric;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};

pub use lbfgs::{LbfgsStore, SKIP_RATIO};
pub use newton::{damped_newton_direction, model_decrease, update_damping};
pub use problem::{kkt_violation, RowProblem};
pub use two_metric::{
    armijo_projected_search, assemble_direction, partition_variables, project_step,
    LineSearchFailure, LineStep, VariableSets,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RowError {
    #[error("objective undefined: a positive count has zero model value")]
    UndefinedAtZeroModel,
    #[error("damped Hessian is not positive definite")]
    FactorizationFailure,
    #[error("line search exhausted its backtracks")]
    LineSearchFailure,
}

/// Times `mu` is multiplied by 10 after a failed Cholesky before giving up
/// on the Newton direction for that iteration.
const MAX_FACTORIZATION_RETRIES: usize = 5;

/// Value given to zero variables when the starting point has an infinite
/// objective.
const INFEASIBLE_START_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    /// KKT tolerance.
    pub tau: f64,
    /// Initial damping for the Newton solver.
    pub mu0: f64,
    /// Armijo sufficient-decrease constant.
    pub sigma: f64,
    /// Backtracking factor.
    pub beta: f64,
    /// Two-metric closeness threshold.
    pub epsilon: f64,
    pub k_max: usize,
    pub lbfgs_memory: usize,
    pub max_backtracks: usize,
    /// Keep each row's L-BFGS pairs across outer iterations.
    pub persist_lbfgs: bool,
}

impl SolverParams {
    pub fn pdnr() -> Self {
        Self {
            tau: 1e-8,
            mu0: 1e-5,
            sigma: 1e-4,
            beta: 0.5,
            epsilon: 1e-3,
            k_max: 50,
            lbfgs_memory: 3,
            max_backtracks: 10,
            persist_lbfgs: false,
        }
    }

    pub fn pqnr() -> Self {
        Self {
            epsilon: 1e-8,
            ..Self::pdnr()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return bad("sigma must lie in (0, 1)");
        }
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad("beta must lie in (0, 1)");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(self.mu0 >= 0.0) {
            return bad("mu0 must be nonnegative");
        }
        if !(self.epsilon >= 0.0) {
            return bad("epsilon must be nonnegative");
        }
        if self.lbfgs_memory < 1 {
            return bad("lbfgs_memory must be at least 1");
        }
        Ok(())
    }
}

impl Default for SolverParams {
    fn default() -> Self {
        Self::pdnr()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowSolveReport {
    pub iterations: usize,
    pub final_kkt: f64,
    pub exact_zeros: usize,
    pub backtrack_failures: usize,
    pub fallback_steps: usize,
}

/// One multiplicative update `b_r <- b_r * sum_j x_j pi_rj / m_j`, written
/// in terms of the gradient as `b_r * (1 - g_r)`.
pub fn multiplicative_step(b: &[f64], g: &[f64]) -> Vec<f64> {
    b.iter()
        .zip(g)
        .map(|(&br, &gr)| br * (1.0 - gr).max(0.0))
        .collect()
}

trait DirectionRule {
    /// Search direction, or `None` to fall back to a multiplicative step.
    fn direction(
        &mut self,
        problem: &RowProblem,
        b: &[f64],
        m: &[f64],
        g: &[f64],
        sets: &VariableSets,
    ) -> Option<Vec<f64>>;

    fn after_search(&mut self, _unit_step_change: f64) {}

    fn after_step(&mut self, _b: &[f64], _g: &[f64], _b_next: &[f64], _g_next: &[f64]) {}

    /// Second direction tried after the first search fails.
    fn retry_direction(&mut self, _g: &[f64], _sets: &VariableSets) -> Option<Vec<f64>> {
        None
    }

    /// Called when a fallback step replaced the search.
    fn after_fallback(&mut self) {}
}

struct DampedNewton {
    mu: f64,
    predicted: Option<f64>,
}

impl DirectionRule for DampedNewton {
    fn direction(
        &mut self,
        problem: &RowProblem,
        _b: &[f64],
        m: &[f64],
        g: &[f64],
        sets: &VariableSets,
    ) -> Option<Vec<f64>> {
        self.predicted = None;
        if sets.free.is_empty() {
            return Some(assemble_direction(&[], g, sets));
        }
        let h_free = problem.hessian_block(m, &sets.free).ok()?;
        let g_free: Vec<f64> = sets.free.iter().map(|&r| g[r]).collect();
        let mut mu = self.mu;
        for attempt in 0..=MAX_FACTORIZATION_RETRIES {
            match damped_newton_direction(&h_free, &g_free, mu) {
                Ok(d_free) => {
                    self.mu = mu;
                    let predicted = model_decrease(&h_free, &g_free, &d_free);
                    debug_assert!(
                        predicted < 0.0 || g_free.iter().all(|v| v.abs() < 1e-150),
                        "predicted decrease {predicted} is not negative"
                    );
                    self.predicted = Some(predicted);
                    return Some(assemble_direction(&d_free, g, sets));
                }
                Err(_) if attempt < MAX_FACTORIZATION_RETRIES => mu = mu.max(1e-10) * 10.0,
                Err(_) => {}
            }
        }
        self.mu = mu;
        None
    }

    fn after_search(&mut self, unit_step_change: f64) {
        if let Some(predicted) = self.predicted.take() {
            if predicted < 0.0 {
                self.mu = update_damping(self.mu, unit_step_change, predicted);
            }
        }
    }
}

struct QuasiNewton<'a> {
    store: &'a mut LbfgsStore,
}

impl DirectionRule for QuasiNewton<'_> {
    fn direction(
        &mut self,
        _problem: &RowProblem,
        _b: &[f64],
        _m: &[f64],
        g: &[f64],
        sets: &VariableSets,
    ) -> Option<Vec<f64>> {
        let p = self.store.apply(g);
        let d_free: Vec<f64> = sets.free.iter().map(|&r| -p[r]).collect();
        Some(assemble_direction(&d_free, g, sets))
    }

    fn after_step(&mut self, b: &[f64], g: &[f64], b_next: &[f64], g_next: &[f64]) {
        let s = b_next.iter().zip(b).map(|(n, o)| n - o).collect();
        let y = g_next.iter().zip(g).map(|(n, o)| n - o).collect();
        self.store.update(s, y);
    }

    fn retry_direction(&mut self, g: &[f64], sets: &VariableSets) -> Option<Vec<f64>> {
        let mut masked = vec![0.0; g.len()];
        for &r in &sets.free {
            masked[r] = g[r];
        }
        let p = self.store.apply(&masked);
        let d_free: Vec<f64> = sets.free.iter().map(|&r| -p[r]).collect();
        Some(assemble_direction(&d_free, g, sets))
    }

    fn after_fallback(&mut self) {
        self.store.clear();
    }
}

/// Projected damped Newton solver. `mu` starts from `params.mu0` on every
/// call.
pub fn solve_row_pdnr(problem: &RowProblem, params: &SolverParams) -> (Vec<f64>, RowSolveReport) {
    let mut rule = DampedNewton {
        mu: params.mu0,
        predicted: None,
    };
    run(problem, params, &mut rule)
}

/// Projected quasi-Newton solver. `store` carries the L-BFGS pairs; pass a
/// fresh store for a cold start.
pub fn solve_row_pqnr(
    problem: &RowProblem,
    params: &SolverParams,
    store: &mut LbfgsStore,
) -> (Vec<f64>, RowSolveReport) {
    let mut rule = QuasiNewton { store };
    run(problem, params, &mut rule)
}

fn run(
    problem: &RowProblem,
    params: &SolverParams,
    rule: &mut dyn DirectionRule,
) -> (Vec<f64>, RowSolveReport) {
    let mut report = RowSolveReport::default();
    let mut b = problem.b.clone();
    let mut m = problem.model_values(&b);
    if m.iter().any(|&v| v <= 0.0) {
        for v in b.iter_mut().filter(|v| **v == 0.0) {
            *v = INFEASIBLE_START_FLOOR;
        }
        report.fallback_steps += 1;
        m = problem.model_values(&b);
    }
    let Ok(mut g) = problem.gradient_from(&m) else {
        report.final_kkt = f64::INFINITY;
        return (problem.b.clone(), report);
    };

    loop {
        report.final_kkt = kkt_violation(&b, &g);
        if report.final_kkt <= params.tau || report.iterations >= params.k_max {
            break;
        }
        let (sets, _) = partition_variables(&b, &g, params.epsilon);
        if sets.free.is_empty() && sets.gradient.is_empty() {
            break;
        }
        let mut fell_back = true;
        let b_next = match rule.direction(problem, &b, &m, &g, &sets) {
            Some(d) => match armijo_projected_search(problem, &b, &m, &g, &d, params) {
                Ok(step) => {
                    rule.after_search(step.unit_step_change);
                    fell_back = false;
                    step.b_next
                }
                Err(failure) => {
                    rule.after_search(failure.unit_step_change);
                    report.backtrack_failures += 1;
                    let retry = rule.retry_direction(&g, &sets).and_then(|d| {
                        armijo_projected_search(problem, &b, &m, &g, &d, params).ok()
                    });
                    match retry {
                        Some(step) => {
                            fell_back = false;
                            step.b_next
                        }
                        None => multiplicative_step(&b, &g),
                    }
                }
            },
            None => multiplicative_step(&b, &g),
        };
        let m_next = problem.model_values(&b_next);
        let Ok(g_next) = problem.gradient_from(&m_next) else {
            break;
        };
        if fell_back {
            report.fallback_steps += 1;
            rule.after_fallback();
        } else {
            rule.after_step(&b, &g, &b_next, &g_next);
        }
        b = b_next;
        m = m_next;
        g = g_next;
        report.iterations += 1;
    }
    report.exact_zeros = b.iter().filter(|&&v| v == 0.0).count();
    (b, report)
}
