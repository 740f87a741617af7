//! End-to-end acceptance checks. Each check prints one PASS/FAIL line; the
//! process exits nonzero if any check fails.

use std::time::{Duration, Instant};

use cpkl::baselines::{mu_solve_row, MuParams};
use cpkl::driver::{fit, fit_from, init_model, FitConfig, FitResult, Method, ModeRows};
use cpkl::eval::{full_kkt_violation, score_greedy};
use cpkl::kruskal::{FactorMatrix, KruskalModel};
use cpkl::row_solver::{
    kkt_violation, solve_row_pdnr, solve_row_pqnr, update_damping, LbfgsStore, RowProblem,
    SolverParams,
};
use cpkl::synth::{generate, generate_model, GenConfig};
use cpkl::SparseCountTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const DESK_DIMS: [usize; 3] = [20, 30, 40];
const DESK_RANK: usize = 5;
const DESK_SAMPLES: u64 = 50_000;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn desk(seed: u64) -> (SparseCountTensor, KruskalModel) {
    generate(&GenConfig::new(
        DESK_DIMS.to_vec(),
        DESK_RANK,
        DESK_SAMPLES,
        seed,
    ))
    .unwrap()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn random_row_problem(rng: &mut ChaCha8Rng, rank: usize, len: usize, b_low: f64) -> RowProblem {
    let b = (0..rank).map(|_| rng.gen_range(b_low..3.0)).collect();
    let x = (0..len).map(|_| rng.gen_range(1..15) as f64).collect();
    let pi = (0..rank * len).map(|_| rng.gen_range(0.01..1.0)).collect();
    RowProblem::new(b, x, pi)
}

fn derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_grad = 0.0f64;
    let mut worst_hess = 0.0f64;
    for _ in 0..200 {
        let rank = rng.gen_range(1..=10);
        let len = rng.gen_range(1..=20);
        let p = random_row_problem(&mut rng, rank, len, 0.2);
        let g = p.gradient().unwrap();
        let h = p.hessian().unwrap();
        let mut fd_g = vec![0.0; rank];
        let mut fd_h = vec![0.0; rank * rank];
        for r in 0..rank {
            let step = 1e-5 * p.b[r].max(1.0);
            let mut plus = p.b.clone();
            let mut minus = p.b.clone();
            plus[r] += step;
            minus[r] -= step;
            fd_g[r] = (p.objective_at(&plus) - p.objective_at(&minus)) / (2.0 * step);
            let gp = p.gradient_at(&plus).unwrap();
            let gm = p.gradient_at(&minus).unwrap();
            for s in 0..rank {
                fd_h[s * rank + r] = (gp[s] - gm[s]) / (2.0 * step);
            }
        }
        let diff_g: Vec<f64> = g.iter().zip(&fd_g).map(|(a, b)| a - b).collect();
        let diff_h: Vec<f64> = h.iter().zip(&fd_h).map(|(a, b)| a - b).collect();
        worst_grad = worst_grad.max(norm(&diff_g) / norm(&g));
        worst_hess = worst_hess.max(norm(&diff_h) / norm(&h));
    }
    outcome(
        worst_grad < 1e-5 && worst_hess < 1e-4,
        format!("worst relative error: gradient {worst_grad:.2e}, Hessian {worst_hess:.2e}"),
    )
}

/// Projected gradient with Barzilai-Borwein steps and Armijo backtracking
/// along the projection arc.
fn projected_gradient(p: &RowProblem) -> Vec<f64> {
    let mut b = p.b.clone();
    let mut g = p.gradient_at(&b).unwrap();
    let mut step: f64 = 1.0;
    for _ in 0..20_000 {
        if kkt_violation(&b, &g) < 1e-12 {
            break;
        }
        let f0 = p.objective_at(&b);
        let mut t = step;
        let next = loop {
            let trial: Vec<f64> = b
                .iter()
                .zip(&g)
                .map(|(b, g)| (b - t * g).max(0.0))
                .collect();
            let dec: f64 = trial
                .iter()
                .zip(&b)
                .zip(&g)
                .map(|((x, b), g)| (x - b) * g)
                .sum();
            if p.objective_at(&trial) <= f0 + 1e-4 * dec || t < 1e-20 {
                break trial;
            }
            t *= 0.5;
        };
        let g_next = p.gradient_at(&next).unwrap();
        let s: Vec<f64> = next.iter().zip(&b).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|a| a * a).sum();
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-10, 1e10)
        } else {
            1.0
        };
        b = next;
        g = g_next;
    }
    b
}

fn row_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let tight = |base: SolverParams| SolverParams {
        tau: 1e-10,
        k_max: 500,
        ..base
    };
    let (pd, pq) = (tight(SolverParams::pdnr()), tight(SolverParams::pqnr()));
    let problems: Vec<RowProblem> = (0..50)
        .map(|_| {
            let rank = rng.gen_range(1..=3);
            let len = rng.gen_range(rank..=5);
            random_row_problem(&mut rng, rank, len, 0.0)
        })
        .collect();
    let (worst_gap, worst_diff) = problems
        .par_iter()
        .map(|p| {
            let f_star = p.objective_at(&projected_gradient(p));
            let (bn, _) = solve_row_pdnr(p, &pd);
            let (bq, _) = solve_row_pqnr(p, &pq, &mut LbfgsStore::new(pq.lbfgs_memory));
            let gap = (p.objective_at(&bn) - f_star)
                .abs()
                .max((p.objective_at(&bq) - f_star).abs());
            (gap, max_abs_diff(&bn, &bq))
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    outcome(
        worst_gap <= 1e-6 && worst_diff <= 1e-6,
        format!("worst objective gap {worst_gap:.2e}, worst |b_pdnr - b_pqnr| {worst_diff:.2e}"),
    )
}

/// Model whose mode-1 factor is a fresh random start while the other
/// factors stay those of `base`.
fn mode1_start(base: &KruskalModel, seed: u64) -> KruskalModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = base.dims()[0];
    let b: Vec<f64> = (0..rows * base.rank())
        .map(|_| rng.gen_range(0.01..1.0))
        .collect();
    let mut m = base.clone();
    m.absorb_scaled_factor(
        0,
        FactorMatrix::from_row_major(rows, base.rank(), b).unwrap(),
    )
    .unwrap();
    m
}

fn mode1_config(method: Method, tau: f64) -> FitConfig {
    FitConfig {
        tau,
        mode1_only: true,
        outer_max: 200,
        ..FitConfig::new(method, DESK_RANK)
    }
}

fn zero_pattern(m: &KruskalModel) -> Vec<bool> {
    m.factor(0).as_slice().iter().map(|&v| v == 0.0).collect()
}

fn mode_subproblem_uniqueness(tensor: &SparseCountTensor, base: &KruskalModel) -> Outcome {
    let config = mode1_config(Method::Pdnr, 1e-11);
    let mut solutions: Vec<FitResult> = Vec::new();
    for start in 0..10 {
        let res = fit_from(tensor, mode1_start(base, 300 + start), &config).unwrap();
        solutions.push(res);
    }
    let worst_kkt = solutions.iter().map(|r| r.final_kkt).fold(0.0, f64::max);
    let b0 = solutions[0].model.scaled_factor(0);
    let z0 = zero_pattern(&solutions[0].model);
    let mut worst_diff = 0.0f64;
    let mut same_zeros = true;
    for s in &solutions[1..] {
        worst_diff = worst_diff.max(max_abs_diff(
            b0.as_slice(),
            s.model.scaled_factor(0).as_slice(),
        ));
        same_zeros &= zero_pattern(&s.model) == z0;
    }
    let zeros = z0.iter().filter(|&&z| z).count();
    outcome(
        solutions.iter().all(|r| r.converged) && worst_kkt <= 1e-8 && worst_diff <= 1e-6 && same_zeros,
        format!(
            "10 starts: max kkt {worst_kkt:.2e}, max |dB| {worst_diff:.2e}, identical zero patterns {same_zeros} ({zeros} zeros)"
        ),
    )
}

fn full_fit(tensor: &SparseCountTensor, method: Method) -> (FitResult, Duration) {
    let config = FitConfig {
        tau: 1e-4,
        outer_max: 200,
        seed: 7,
        ..FitConfig::new(method, DESK_RANK)
    };
    let start = Instant::now();
    let res = fit(tensor, &config).unwrap();
    (res, start.elapsed())
}

fn convergence(tensor: &SparseCountTensor, fits: &[(Method, FitResult, Duration)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (method, res, elapsed) in fits {
        let mut prev = init_model(tensor.shape(), DESK_RANK, 7).kl_objective(tensor);
        let mut monotone = true;
        for f in res.trace.objectives() {
            monotone &= f <= prev + 1e-9;
            prev = f;
        }
        let post = full_kkt_violation(tensor, &res.model).unwrap().max;
        let ok = res.converged
            && res.trace.len() <= 200
            && monotone
            && post <= 1e-4
            && elapsed.as_secs_f64() < 300.0;
        pass &= ok;
        parts.push(format!(
            "{method}: {} outer, converged {}, monotone {monotone}, post kkt {post:.2e}, {:.1}s",
            res.trace.len(),
            res.converged,
            elapsed.as_secs_f64()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn recovery() -> Outcome {
    let mut passes = 0;
    let mut parts = Vec::new();
    for seed in 1..=5 {
        let (tensor, truth) = desk(seed);
        let other = generate_model(&GenConfig::new(
            DESK_DIMS.to_vec(),
            DESK_RANK,
            1,
            seed + 1000,
        ))
        .unwrap();
        let mut ok = true;
        let mut scores = Vec::new();
        for method in [Method::Pdnr, Method::Pqnr] {
            let config = FitConfig {
                tau: 1e-4,
                seed,
                ..FitConfig::new(method, DESK_RANK)
            };
            let res = fit(&tensor, &config).unwrap();
            let s = score_greedy(&res.model, &truth).unwrap().score;
            let s_other = score_greedy(&res.model, &other).unwrap().score;
            ok &= s >= 0.80 && s_other < 0.1;
            scores.push(format!("{method} {s:.3}/{s_other:.3}"));
        }
        passes += usize::from(ok);
        parts.push(format!("seed {seed}: {}", scores.join(" ")));
    }
    outcome(
        passes >= 4,
        format!(
            "{passes}/5 seeds pass (truth/independent): {}",
            parts.join("; ")
        ),
    )
}

fn sparsity(tensor: &SparseCountTensor, base: &KruskalModel) -> Outcome {
    let start = mode1_start(base, 300);
    let pd = fit_from(tensor, start.clone(), &mode1_config(Method::Pdnr, 1e-4)).unwrap();
    let pq = fit_from(tensor, start.clone(), &mode1_config(Method::Pqnr, 1e-4)).unwrap();
    let iterations = pd.trace.len();
    let mu_config = FitConfig {
        outer_max: iterations,
        ..mode1_config(Method::Mu, 1e-4)
    };
    let mu = fit_from(tensor, start, &mu_config).unwrap();
    let zeros = |r: &FitResult| {
        r.model
            .factor(0)
            .as_slice()
            .iter()
            .filter(|&&v| v == 0.0)
            .count()
    };
    let (zd, zq, zm) = (zeros(&pd), zeros(&pq), zeros(&mu));
    outcome(
        pd.converged && pq.converged && zd == zq && (zm as f64) < 0.1 * zd as f64,
        format!("exact zeros in mode 1: pdnr {zd}, pqnr {zq}, mu {zm} after {iterations} outer iterations"),
    )
}

fn generator() -> Outcome {
    let start = Instant::now();
    let mut exact = true;
    for seed in 0..5 {
        let (t, m) = desk(seed);
        exact &= t.total_count() == DESK_SAMPLES
            && m.lambda().iter().sum::<f64>() == DESK_SAMPLES as f64;
    }
    let full_size = GenConfig::new(vec![200, 300, 400], 20, 500_000, 1);
    let (t, m) = generate(&full_size).unwrap();
    exact &= t.total_count() == 500_000 && m.lambda().iter().sum::<f64>() == 500_000.0;
    let rel = (t.nnz() as f64 - 413_458.0).abs() / 413_458.0;
    let elapsed = start.elapsed().as_secs_f64();
    outcome(
        exact && rel <= 0.15 && elapsed < 60.0,
        format!(
            "totals exact {exact}; full-size config nnz {} ({:.2}% from 413,458, density {:.2}%); {elapsed:.1}s",
            t.nnz(),
            100.0 * rel,
            100.0 * t.density()
        ),
    )
}

fn objective_agreement(
    tensor: &SparseCountTensor,
    fits: &[(Method, FitResult, Duration)],
) -> Outcome {
    let mu_config = FitConfig {
        tau: 1e-4,
        outer_max: 1000,
        seed: 7,
        ..FitConfig::new(Method::Mu, DESK_RANK)
    };
    let mu = fit(tensor, &mu_config).unwrap();
    let mut objectives: Vec<(String, f64)> = fits
        .iter()
        .map(|(m, r, _)| (m.to_string(), r.model.kl_objective(tensor)))
        .collect();
    objectives.push(("mu".into(), mu.model.kl_objective(tensor)));
    let reference = objectives[0].1;
    let worst = objectives
        .iter()
        .map(|(_, f)| (f - reference).abs() / reference.abs())
        .fold(0.0, f64::max);
    let listed: Vec<String> = objectives
        .iter()
        .map(|(m, f)| format!("{m} {f:.6}"))
        .collect();
    outcome(
        worst <= 1e-3,
        format!(
            "max relative difference {worst:.2e} ({}; mu ran {} outer)",
            listed.join(", "),
            mu.trace.len()
        ),
    )
}

fn mu_monotonicity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut worst_rise = f64::NEG_INFINITY;
    let mut checked = 0;
    for instance in 0..50 {
        let dims = [
            rng.gen_range(2..7),
            rng.gen_range(2..7),
            rng.gen_range(2..7),
        ];
        let cells = dims.iter().product::<usize>();
        let mut entries = Vec::new();
        for flat in 0..cells {
            if rng.gen_bool(0.4) {
                let idx = vec![
                    flat % dims[0],
                    (flat / dims[0]) % dims[1],
                    flat / (dims[0] * dims[1]),
                ];
                entries.push((idx, rng.gen_range(1..10u64)));
            }
        }
        if entries.is_empty() {
            entries.push((vec![0, 0, 0], 1));
        }
        let tensor =
            SparseCountTensor::from_entries(cpkl::Shape::new(dims.to_vec()).unwrap(), entries)
                .unwrap();
        let rank = rng.gen_range(1..=4);
        let model = init_model(tensor.shape(), rank, instance);
        let mode = instance as usize % 3;
        let rows = ModeRows::new(&tensor, mode);
        let scaled = model.scaled_factor(mode);
        let params = MuParams {
            inner_iterations: 10,
        };
        let mut totals = vec![0.0; params.inner_iterations + 1];
        for i in 0..rows.rows() {
            let out = mu_solve_row(&rows.problem(&model, i, scaled.row(i).to_vec()), &params);
            for (t, f) in totals.iter_mut().zip(&out.objectives) {
                *t += f;
            }
        }
        for w in totals.windows(2) {
            worst_rise = worst_rise.max(w[1] - w[0]);
        }
        checked += 1;
    }
    outcome(
        worst_rise <= 1e-9,
        format!("{checked} instances, largest step change in mode objective {worst_rise:.2e}"),
    )
}

fn damping_rule() -> Outcome {
    let mu = 1e-5;
    let delta = 1e-9;
    let predicted = -2.0;
    let cases = [
        (0.1, 7.0 / 2.0 * mu),
        (0.25 + delta, mu),
        (0.5, mu),
        (0.75 + delta, 2.0 / 7.0 * mu),
        (0.9, 2.0 / 7.0 * mu),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (rho, expected) in cases {
        let got = update_damping(mu, rho * predicted, predicted);
        pass &= got == expected;
        parts.push(format!("rho {rho} -> {got:e}"));
    }
    outcome(pass, parts.join(", "))
}

fn run(name: &str, limit: Option<f64>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let mut out = f();
    let secs = start.elapsed().as_secs_f64();
    if let Some(limit) = limit {
        if secs >= limit {
            out.pass = false;
            out.detail
                .push_str(&format!(" [runtime {secs:.1}s exceeds {limit}s]"));
        }
    }
    println!(
        "{} {name}: {} ({secs:.1}s)",
        if out.pass { "PASS" } else { "FAIL" },
        out.detail
    );
    out.pass
}

fn main() {
    let (tensor, _truth) = desk(1);
    let base = init_model(tensor.shape(), DESK_RANK, 7);
    let mut results = Vec::new();

    results.push(run("1 derivative correctness", Some(10.0), derivatives));
    results.push(run(
        "2 row-solver oracle equivalence",
        Some(30.0),
        row_oracle,
    ));
    results.push(run("3 mode-subproblem uniqueness", Some(120.0), || {
        mode_subproblem_uniqueness(&tensor, &base)
    }));
    let fits: Vec<(Method, FitResult, Duration)> = [Method::Pdnr, Method::Pqnr]
        .into_iter()
        .map(|m| {
            let (r, d) = full_fit(&tensor, m);
            (m, r, d)
        })
        .collect();
    results.push(run("4 full factorization convergence", None, || {
        convergence(&tensor, &fits)
    }));
    results.push(run("5 factor recovery", None, recovery));
    results.push(run("6 sparsity identification", None, || {
        sparsity(&tensor, &base)
    }));
    results.push(run("7 generator fidelity", Some(60.0), generator));
    results.push(run("8 objective agreement across methods", None, || {
        objective_agreement(&tensor, &fits)
    }));
    results.push(run("9 MU monotonicity", None, mu_monotonicity));
    results.push(run("10 damping rule", None, damping_rule));

    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
