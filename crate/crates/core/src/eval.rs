//! Factor recovery score, sparsity counts, and full-model KKT check.

use serde::{Deserialize, Serialize};

use crate::driver::{check_model, mode_kkt_violation, ModeRows};
use crate::error::{Error, Result};
use crate::kruskal::KruskalModel;
use crate::numeric::{dot, norm2};
use crate::sparse_tensor::SparseCountTensor;

/// Thresholds used for the thresholded zero counts.
pub const ZERO_THRESHOLDS: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub score: f64,
    /// `permutation[r]` is the component of the second model matched to
    /// component `r` of the first.
    pub permutation: Vec<usize>,
    /// Congruence product of each matched pair, indexed like `permutation`.
    pub per_component: Vec<f64>,
}

fn unit_columns(model: &KruskalModel) -> Vec<Vec<Vec<f64>>> {
    model
        .factors()
        .iter()
        .map(|f| {
            (0..model.rank())
                .map(|r| {
                    let mut c = f.column(r);
                    let n = norm2(&c);
                    if n > 0.0 {
                        c.iter_mut().for_each(|v| *v /= n);
                    }
                    c
                })
                .collect()
        })
        .collect()
}

/// `R x R` matrix of products over modes of column cosines. Components with
/// zero weight in either model score 0 against everything.
pub fn congruence_matrix(a: &KruskalModel, b: &KruskalModel) -> Result<Vec<Vec<f64>>> {
    if a.dims() != b.dims() || a.rank() != b.rank() {
        return Err(Error::ShapeMismatch(format!(
            "models differ: dims {:?} rank {} vs dims {:?} rank {}",
            a.dims(),
            a.rank(),
            b.dims(),
            b.rank()
        )));
    }
    let rank = a.rank();
    let ua = unit_columns(a);
    let ub = unit_columns(b);
    let mut c = vec![vec![0.0; rank]; rank];
    for (r, row) in c.iter_mut().enumerate() {
        if a.lambda()[r] == 0.0 {
            continue;
        }
        for (s, v) in row.iter_mut().enumerate() {
            if b.lambda()[s] == 0.0 {
                continue;
            }
            *v = ua
                .iter()
                .zip(&ub)
                .map(|(fa, fb)| dot(&fa[r], &fb[s]))
                .product();
        }
    }
    Ok(c)
}

/// Greedy matching on the congruence matrix: repeatedly take the largest
/// remaining entry (lowest row, then column, on ties) and strike its row
/// and column. The score is the mean of the picked entries.
pub fn score_greedy(a: &KruskalModel, b: &KruskalModel) -> Result<ScoreReport> {
    let c = congruence_matrix(a, b)?;
    let rank = c.len();
    let mut row_free = vec![true; rank];
    let mut col_free = vec![true; rank];
    let mut permutation = vec![0; rank];
    let mut per_component = vec![0.0; rank];
    for _ in 0..rank {
        let mut best: Option<(usize, usize)> = None;
        for r in (0..rank).filter(|&r| row_free[r]) {
            for s in (0..rank).filter(|&s| col_free[s]) {
                if best.is_none_or(|(br, bs)| c[r][s] > c[br][bs]) {
                    best = Some((r, s));
                }
            }
        }
        let (r, s) = best.expect("a free pair remains");
        row_free[r] = false;
        col_free[s] = false;
        permutation[r] = s;
        per_component[r] = c[r][s];
    }
    let score = per_component.iter().sum::<f64>() / rank as f64;
    Ok(ScoreReport {
        score,
        permutation,
        per_component,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCount {
    pub threshold: f64,
    pub per_factor: Vec<usize>,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroCounts {
    /// Entries exactly equal to 0.
    pub per_factor: Vec<usize>,
    pub total: usize,
    /// Entries below each of [`ZERO_THRESHOLDS`].
    pub thresholded: Vec<ThresholdCount>,
}

pub fn exact_zero_count(model: &KruskalModel) -> ZeroCounts {
    let count = |pred: &dyn Fn(f64) -> bool| -> Vec<usize> {
        model
            .factors()
            .iter()
            .map(|f| f.as_slice().iter().filter(|&&v| pred(v)).count())
            .collect()
    };
    let per_factor = count(&|v| v == 0.0);
    let thresholded = ZERO_THRESHOLDS
        .iter()
        .map(|&t| {
            let per_factor = count(&|v| v < t);
            ThresholdCount {
                threshold: t,
                total: per_factor.iter().sum(),
                per_factor,
            }
        })
        .collect();
    ZeroCounts {
        total: per_factor.iter().sum(),
        per_factor,
        thresholded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub per_mode: Vec<f64>,
    pub max: f64,
}

/// Largest row-subproblem KKT violation in every mode. An unnormalized
/// model is checked on a normalized copy.
pub fn full_kkt_violation(tensor: &SparseCountTensor, model: &KruskalModel) -> Result<KktReport> {
    check_model(tensor, model)?;
    let normalized;
    let model = if model.is_normalized() {
        model
    } else {
        normalized = model.clone().normalized().0;
        &normalized
    };
    let per_mode: Vec<f64> = (0..tensor.ndims())
        .map(|n| mode_kkt_violation(&ModeRows::new(tensor, n), model))
        .collect();
    let max = per_mode.iter().copied().fold(0.0, f64::max);
    Ok(KktReport { per_mode, max })
}

/// Everything the `evaluate` command reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreReport>,
    pub zeros: ZeroCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kkt: Option<KktReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub objective: Option<f64>,
}

pub fn evaluate(
    model: &KruskalModel,
    truth: Option<&KruskalModel>,
    tensor: Option<&SparseCountTensor>,
) -> Result<EvalReport> {
    let score = truth.map(|t| score_greedy(model, t)).transpose()?;
    let kkt = tensor.map(|t| full_kkt_violation(t, model)).transpose()?;
    Ok(EvalReport {
        score,
        zeros: exact_zero_count(model),
        kkt,
        objective: tensor.map(|t| model.kl_objective(t)),
    })
}
