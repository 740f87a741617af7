//! Alternating-block outer loop.
//!
//! Each outer iteration sweeps the modes in order. For mode `n` every row of
//! `B = A^(n) diag(lambda)` is re-solved as an independent row subproblem
//! using only the `Pi` columns of that row's nonzeros; the solved `B` is then
//! split back into `lambda` and a column-normalized `A^(n)`. After a full
//! sweep the KKT violation of every swept mode is recomputed against the
//! end-of-sweep model, and the fit stops once it is at most `tau`.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{mu_solve_row, MuParams};
use crate::error::{Error, Result};
use crate::kruskal::{FactorMatrix, KruskalModel, ZeroColumn};
use crate::row_solver::{
    kkt_violation, solve_row_pdnr, solve_row_pqnr, LbfgsStore, RowProblem, RowSolveReport,
    SolverParams,
};
use crate::sparse_tensor::{ModeRowGroup, Shape, SparseCountTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Projected damped Newton on each row.
    Pdnr,
    /// Projected quasi-Newton (L-BFGS) on each row.
    Pqnr,
    /// Plain multiplicative update.
    Mu,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Pdnr, Method::Pqnr, Method::Mu];

    pub fn name(self) -> &'static str {
        match self {
            Method::Pdnr => "pdnr",
            Method::Pqnr => "pqnr",
            Method::Mu => "mu",
        }
    }

    /// Solver parameters with the per-method defaults.
    pub fn default_solver_params(self) -> SolverParams {
        match self {
            Method::Pqnr => SolverParams::pqnr(),
            Method::Pdnr | Method::Mu => SolverParams::pdnr(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdnr" | "pdn-r" => Ok(Method::Pdnr),
            "pqnr" | "pqn-r" => Ok(Method::Pqnr),
            "mu" => Ok(Method::Mu),
            other => Err(Error::InvalidConfig(format!(
                "unknown method {other:?} (expected pdnr, pqnr or mu)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    #[serde(default = "default_method")]
    pub method: Method,
    pub rank: usize,
    #[serde(default = "default_outer_max")]
    pub outer_max: usize,
    #[serde(default = "default_tau")]
    pub tau: f64,
    /// Wall-clock limit in seconds, checked between row solves.
    #[serde(default)]
    pub time_limit: Option<f64>,
    /// Row solver settings; the method's defaults when absent. The row
    /// tolerance is always taken from `tau`.
    #[serde(default)]
    pub solver: Option<SolverParams>,
    #[serde(default)]
    pub mu: MuParams,
    #[serde(default)]
    pub seed: u64,
    /// Row-solve threads; 0 uses all available cores.
    #[serde(default)]
    pub workers: usize,
    /// Only update mode 1, holding the other factors fixed.
    #[serde(default)]
    pub mode1_only: bool,
}

fn default_method() -> Method {
    Method::Pdnr
}

fn default_outer_max() -> usize {
    200
}

fn default_tau() -> f64 {
    1e-4
}

impl FitConfig {
    pub fn new(method: Method, rank: usize) -> Self {
        Self {
            method,
            rank,
            outer_max: default_outer_max(),
            tau: default_tau(),
            time_limit: None,
            solver: None,
            mu: MuParams::default(),
            seed: 0,
            workers: 0,
            mode1_only: false,
        }
    }

    /// Parameters handed to the row solver.
    pub fn row_params(&self) -> SolverParams {
        let mut p = self
            .solver
            .clone()
            .unwrap_or_else(|| self.method.default_solver_params());
        p.tau = self.tau;
        p
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank < 1 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if self.outer_max < 1 {
            return Err(Error::InvalidConfig("outer_max must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        if let Some(t) = self.time_limit {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig("time_limit must be positive".into()));
            }
        }
        self.row_params().validate()?;
        self.mu.validate()
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub outer: usize,
    /// Largest row KKT violation over the swept modes, end of sweep.
    pub mode_kkt_max: f64,
    /// The same, per swept mode.
    pub mode_kkt: Vec<f64>,
    pub objective: f64,
    pub exact_zeros: usize,
    /// Cumulative wall time since the fit started.
    pub seconds: f64,
    pub ls_failures: usize,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_CSV_HEADER: &str =
    "outer,mode_kkt_max,objective,exact_zeros,seconds,ls_failures,fallbacks";

impl FitTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRACE_CSV_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{:e},{:.17e},{},{:.6},{},{}",
                r.outer,
                r.mode_kkt_max,
                r.objective,
                r.exact_zeros,
                r.seconds,
                r.ls_failures,
                r.fallbacks
            )?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    OuterLimit,
    TimeLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub model: KruskalModel,
    pub trace: FitTrace,
    pub converged: bool,
    pub final_kkt: f64,
    pub stop_reason: StopReason,
    /// Components whose weight was zero after the last mode update.
    pub dead_components: Vec<ZeroColumn>,
}

/// Random start: factor entries uniform on (0, 1), `lambda` all ones, then
/// normalized so the column sums move into `lambda`.
pub fn init_model(shape: &Shape, rank: usize, seed: u64) -> KruskalModel {
    assert!(rank >= 1, "rank must be at least 1");
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let factors = shape
        .dims()
        .iter()
        .map(|&d| {
            let data = (0..d * rank).map(|_| positive_uniform(&mut rng)).collect();
            FactorMatrix::from_row_major(d, rank, data).expect("sizes match")
        })
        .collect();
    let (model, _) = KruskalModel::new(vec![1.0; rank], factors)
        .expect("uniform entries are valid")
        .normalized();
    model
}

/// Uniform draw on `[0, 1)` with exact zeros redrawn.
pub(crate) fn positive_uniform<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let v: f64 = rng.gen();
        if v > 0.0 {
            return v;
        }
    }
}

/// Totals over the rows of one mode update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub mode: usize,
    pub rows_solved: usize,
    pub empty_rows: usize,
    pub row_iterations: usize,
    /// Largest KKT violation reported by the row solvers (not meaningful
    /// for MU).
    pub max_row_kkt: f64,
    pub ls_failures: usize,
    pub fallbacks: usize,
    pub dead: Vec<ZeroColumn>,
    /// Rows left unchanged because the time limit passed.
    pub skipped_rows: usize,
}

/// The nonzeros of one mode, indexed by row.
#[derive(Debug, Clone)]
pub struct ModeRows {
    mode: usize,
    groups: Vec<ModeRowGroup>,
    by_row: Vec<Option<usize>>,
}

impl ModeRows {
    pub fn new(tensor: &SparseCountTensor, mode: usize) -> Self {
        let groups = tensor.group_by_mode(mode);
        let mut by_row = vec![None; tensor.shape().dim(mode)];
        for (k, g) in groups.iter().enumerate() {
            by_row[g.row] = Some(k);
        }
        Self {
            mode,
            groups,
            by_row,
        }
    }

    pub fn mode(&self) -> usize {
        self.mode
    }

    pub fn rows(&self) -> usize {
        self.by_row.len()
    }

    pub fn group(&self, row: usize) -> Option<&ModeRowGroup> {
        self.by_row[row].map(|k| &self.groups[k])
    }

    /// Row subproblem for `row` with `b` taken from the scaled factor.
    pub fn problem(&self, model: &KruskalModel, row: usize, b: Vec<f64>) -> RowProblem {
        match self.group(row) {
            Some(g) => {
                let x = g.counts().iter().map(|&c| c as f64).collect();
                RowProblem::from_block(b, x, model.pi_block_for(g))
            }
            None => RowProblem::new(b, Vec::new(), Vec::new()),
        }
    }
}

/// Row-solve settings shared by every row of a mode.
#[derive(Debug, Clone)]
pub struct ModeSolver {
    pub method: Method,
    pub params: SolverParams,
    pub mu: MuParams,
}

impl ModeSolver {
    pub fn from_config(config: &FitConfig) -> Self {
        Self {
            method: config.method,
            params: config.row_params(),
            mu: config.mu.clone(),
        }
    }
}

enum RowOutcome {
    Solved(Vec<f64>, RowSolveReport),
    Empty,
    Skipped(Vec<f64>),
}

/// Updates mode `rows.mode()` of `model` in place.
///
/// `stores` holds one L-BFGS store per row and is only read by PQN-R; it is
/// cleared before each row unless `params.persist_lbfgs` is set. Rows are
/// solved in parallel on the current rayon pool and merged in row order.
pub fn solve_mode_with(
    rows: &ModeRows,
    model: &mut KruskalModel,
    solver: &ModeSolver,
    stores: &mut [LbfgsStore],
    deadline: Option<Instant>,
) -> Result<ModeReport> {
    let mode = rows.mode();
    assert_eq!(stores.len(), rows.rows(), "one L-BFGS store per row");
    let scaled = model.scaled_factor(mode);
    let shared: &KruskalModel = model;

    let outcomes: Vec<RowOutcome> = stores
        .par_iter_mut()
        .enumerate()
        .map(|(i, store)| {
            let b = scaled.row(i).to_vec();
            if rows.group(i).is_none() {
                return RowOutcome::Empty;
            }
            if deadline.is_some_and(|d| Instant::now() >= d) {
                return RowOutcome::Skipped(b);
            }
            let problem = rows.problem(shared, i, b);
            match solver.method {
                Method::Pdnr => {
                    let (b, rep) = solve_row_pdnr(&problem, &solver.params);
                    RowOutcome::Solved(b, rep)
                }
                Method::Pqnr => {
                    if !solver.params.persist_lbfgs {
                        store.clear();
                    }
                    let (b, rep) = solve_row_pqnr(&problem, &solver.params, store);
                    RowOutcome::Solved(b, rep)
                }
                Method::Mu => {
                    let out = mu_solve_row(&problem, &solver.mu);
                    let rep = RowSolveReport {
                        iterations: out.objectives.len() - 1,
                        final_kkt: f64::NAN,
                        exact_zeros: out.b.iter().filter(|&&v| v == 0.0).count(),
                        ..Default::default()
                    };
                    RowOutcome::Solved(out.b, rep)
                }
            }
        })
        .collect();

    let rank = model.rank();
    let mut next = FactorMatrix::zeros(scaled.rows(), rank);
    let mut report = ModeReport {
        mode,
        ..Default::default()
    };
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            RowOutcome::Solved(b, rep) => {
                next.row_mut(i).copy_from_slice(&b);
                report.rows_solved += 1;
                report.row_iterations += rep.iterations;
                if rep.final_kkt > report.max_row_kkt {
                    report.max_row_kkt = rep.final_kkt;
                }
                report.ls_failures += rep.backtrack_failures;
                report.fallbacks += rep.fallback_steps;
            }
            RowOutcome::Empty => report.empty_rows += 1,
            RowOutcome::Skipped(b) => {
                next.row_mut(i).copy_from_slice(&b);
                report.skipped_rows += 1;
            }
        }
    }
    report.dead = model.absorb_scaled_factor(mode, next)?;
    Ok(report)
}

/// Single mode update with fresh solver state.
pub fn solve_mode(
    tensor: &SparseCountTensor,
    model: &mut KruskalModel,
    mode: usize,
    solver: &ModeSolver,
) -> Result<ModeReport> {
    check_model(tensor, model)?;
    if mode >= tensor.ndims() {
        return Err(Error::InvalidConfig(format!("mode {mode} out of range")));
    }
    if !model.is_normalized() {
        model.normalize();
    }
    let rows = ModeRows::new(tensor, mode);
    let mut stores = vec![LbfgsStore::new(solver.params.lbfgs_memory); rows.rows()];
    solve_mode_with(&rows, model, solver, &mut stores, None)
}

/// Largest row KKT violation of one mode at the current model. Rows with no
/// nonzeros have gradient all ones.
pub fn mode_kkt_violation(rows: &ModeRows, model: &KruskalModel) -> f64 {
    let scaled = model.scaled_factor(rows.mode());
    (0..rows.rows())
        .into_par_iter()
        .map(|i| {
            let b = scaled.row(i).to_vec();
            let problem = rows.problem(model, i, b);
            match problem.gradient() {
                Ok(g) => kkt_violation(&problem.b, &g),
                Err(_) => f64::INFINITY,
            }
        })
        .reduce(|| 0.0, f64::max)
}

pub(crate) fn check_model(tensor: &SparseCountTensor, model: &KruskalModel) -> Result<()> {
    if model.dims() != tensor.shape().dims() {
        return Err(Error::ShapeMismatch(format!(
            "model dims {:?} do not match tensor dims {:?}",
            model.dims(),
            tensor.shape().dims()
        )));
    }
    Ok(())
}

pub(crate) fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("cannot start worker pool: {e}")))
}

/// Fits from [`init_model`] with `config.seed`.
pub fn fit(tensor: &SparseCountTensor, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let model = init_model(tensor.shape(), config.rank, config.seed);
    fit_from(tensor, model, config)
}

/// Fits starting from `model`; `config.rank` and `config.seed` are ignored.
pub fn fit_from(
    tensor: &SparseCountTensor,
    mut model: KruskalModel,
    config: &FitConfig,
) -> Result<FitResult> {
    config.validate()?;
    check_model(tensor, &model)?;
    if tensor.is_empty() {
        return Err(Error::InvalidConfig("tensor has no nonzeros".into()));
    }
    if !model.is_normalized() {
        model.normalize();
    }

    let start = Instant::now();
    let deadline = config
        .time_limit
        .map(|s| start + Duration::from_secs_f64(s));
    let modes: Vec<usize> = if config.mode1_only {
        vec![0]
    } else {
        (0..tensor.ndims()).collect()
    };
    let solver = ModeSolver::from_config(config);
    let pool = build_pool(config.workers)?;
    let all_rows: Vec<ModeRows> = modes.iter().map(|&n| ModeRows::new(tensor, n)).collect();
    let mut stores: Vec<Vec<LbfgsStore>> = all_rows
        .iter()
        .map(|r| vec![LbfgsStore::new(solver.params.lbfgs_memory); r.rows()])
        .collect();

    let mut trace = FitTrace::default();
    let mut dead_components = Vec::new();
    let mut stop_reason = StopReason::OuterLimit;
    let mut final_kkt = f64::INFINITY;

    for outer in 1..=config.outer_max {
        let mut ls_failures = 0;
        let mut fallbacks = 0;
        let mut timed_out = false;
        for (rows, row_stores) in all_rows.iter().zip(stores.iter_mut()) {
            let report =
                pool.install(|| solve_mode_with(rows, &mut model, &solver, row_stores, deadline))?;
            ls_failures += report.ls_failures;
            fallbacks += report.fallbacks;
            dead_components.retain(|z: &ZeroColumn| z.mode != rows.mode());
            dead_components.extend(report.dead);
            if report.skipped_rows > 0 {
                timed_out = true;
                break;
            }
        }

        let mode_kkt: Vec<f64> = pool.install(|| {
            all_rows
                .iter()
                .map(|rows| mode_kkt_violation(rows, &model))
                .collect()
        });
        final_kkt = mode_kkt.iter().copied().fold(0.0, f64::max);
        trace.records.push(TraceRecord {
            outer,
            mode_kkt_max: final_kkt,
            mode_kkt,
            objective: model.kl_objective(tensor),
            exact_zeros: model.exact_zeros(),
            seconds: start.elapsed().as_secs_f64(),
            ls_failures,
            fallbacks,
        });

        if final_kkt <= config.tau {
            stop_reason = StopReason::Converged;
            break;
        }
        if timed_out || deadline.is_some_and(|d| Instant::now() >= d) {
            stop_reason = StopReason::TimeLimit;
            break;
        }
    }

    Ok(FitResult {
        model,
        trace,
        converged: stop_reason == StopReason::Converged,
        final_kkt,
        stop_reason,
        dead_components,
    })
}
