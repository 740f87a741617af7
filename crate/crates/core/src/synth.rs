//! Synthetic sparse Poisson count tensors with a known CP model.
//!
//! Every factor column gets `ceil(boost_fraction * I_n)` boosted entries,
//! chosen uniformly without replacement, set to `1 + boost_scale * R * x`
//! with `x` uniform on (0, 1); all other entries are `small_value`. Weights
//! are uniform on [0, 1). After normalizing columns and weights, `S` samples
//! are drawn by picking a component from `lambda` and then one index per mode
//! from that component's columns.
//!
//! All randomness comes from ChaCha20 (`rand_chacha`) seeded with
//! `seed_from_u64(seed)`. The model is drawn from stream 0 and the samples
//! from stream 1, so the same seed always yields the same model and tensor.

use std::collections::HashMap;

use rand::distributions::{Distribution, Open01, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kruskal::{FactorMatrix, KruskalModel};
use crate::numeric::{dot, norm2};
use crate::sparse_tensor::{Shape, SparseCountTensor};

const MODEL_STREAM: u64 = 0;
const SAMPLE_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub dims: Vec<usize>,
    pub rank: usize,
    pub samples: u64,
    #[serde(default = "default_boost_fraction")]
    pub boost_fraction: f64,
    #[serde(default = "default_boost_scale")]
    pub boost_scale: f64,
    #[serde(default = "default_small_value")]
    pub small_value: f64,
    /// When set, `a_r <- a_1 + alpha * a_r` for `r >= 2` before normalizing.
    #[serde(default)]
    pub collinearity_alpha: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_boost_fraction() -> f64 {
    0.2
}

fn default_boost_scale() -> f64 {
    10.0
}

fn default_small_value() -> f64 {
    0.1
}

impl GenConfig {
    pub fn new(dims: Vec<usize>, rank: usize, samples: u64, seed: u64) -> Self {
        Self {
            dims,
            rank,
            samples,
            boost_fraction: default_boost_fraction(),
            boost_scale: default_boost_scale(),
            small_value: default_small_value(),
            collinearity_alpha: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<Shape> {
        let shape = Shape::new(self.dims.clone())?;
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.rank < 1 {
            return bad("rank must be at least 1");
        }
        if self.samples < 1 {
            return bad("samples must be at least 1");
        }
        if !(self.boost_fraction > 0.0 && self.boost_fraction <= 1.0) {
            return bad("boost_fraction must lie in (0, 1]");
        }
        if !(self.boost_scale >= 0.0) || !self.boost_scale.is_finite() {
            return bad("boost_scale must be nonnegative");
        }
        if !(self.small_value >= 0.0) || !self.small_value.is_finite() {
            return bad("small_value must be nonnegative");
        }
        if let Some(a) = self.collinearity_alpha {
            if !(a >= 0.0) || !a.is_finite() {
                return bad("collinearity_alpha must be nonnegative");
            }
        }
        Ok(shape)
    }

    /// Boosted entries per column for a mode of size `rows`.
    pub fn boosted_per_column(&self, rows: usize) -> usize {
        ((self.boost_fraction * rows as f64).ceil() as usize).clamp(1, rows)
    }
}

fn rng_for(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ground-truth model with unit-sum columns and `||lambda||_1 = 1`.
pub fn generate_model(config: &GenConfig) -> Result<KruskalModel> {
    config.validate()?;
    let mut rng = rng_for(config.seed, MODEL_STREAM);
    let rank = config.rank;
    let boost = config.boost_scale * rank as f64;

    let mut factors = Vec::with_capacity(config.dims.len());
    for &rows in &config.dims {
        let mut f =
            FactorMatrix::from_row_major(rows, rank, vec![config.small_value; rows * rank])?;
        let k = config.boosted_per_column(rows);
        for r in 0..rank {
            for i in sample(&mut rng, rows, k) {
                let x: f64 = Open01.sample(&mut rng);
                f.set(i, r, 1.0 + boost * x);
            }
        }
        if let Some(alpha) = config.collinearity_alpha {
            for i in 0..rows {
                let first = f.get(i, 0);
                for r in 1..rank {
                    let v = first + alpha * f.get(i, r);
                    f.set(i, r, v);
                }
            }
        }
        factors.push(f);
    }
    let lambda: Vec<f64> = (0..rank).map(|_| rng.gen::<f64>()).collect();

    let (mut model, dead) = KruskalModel::new(lambda, factors)?.normalized();
    if !dead.is_empty() {
        return Err(Error::InvalidConfig(
            "generated model has an all-zero column".into(),
        ));
    }
    if !(model.lambda().iter().sum::<f64>() > 0.0) {
        return Err(Error::InvalidConfig("generated weights sum to zero".into()));
    }
    model.rescale_lambda_to(1.0);
    Ok(model)
}

/// Draws `samples` counts from a model with `||lambda||_1 = 1` and returns
/// the tensor together with the model rescaled to `||lambda||_1 = samples`.
pub fn sample_tensor(
    model: &KruskalModel,
    samples: u64,
    seed: u64,
) -> Result<(SparseCountTensor, KruskalModel)> {
    if samples < 1 {
        return Err(Error::InvalidConfig("samples must be at least 1".into()));
    }
    if !model.is_normalized() {
        return Err(Error::InvalidModel("model columns must sum to 1".into()));
    }
    let weights = WeightedIndex::new(model.lambda())
        .map_err(|e| Error::InvalidModel(format!("lambda is not a distribution: {e}")))?;
    let rank = model.rank();
    let columns: Vec<Vec<WeightedIndex<f64>>> = model
        .factors()
        .iter()
        .map(|f| {
            (0..rank)
                .map(|r| WeightedIndex::new(f.column(r)))
                .collect::<std::result::Result<Vec<_>, _>>()
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::InvalidModel(format!("factor column is not a distribution: {e}")))?;

    let mut rng = rng_for(seed, SAMPLE_STREAM);
    let mut cells: HashMap<Vec<usize>, u64> = HashMap::new();
    for _ in 0..samples {
        let r = weights.sample(&mut rng);
        let index: Vec<usize> = columns.iter().map(|c| c[r].sample(&mut rng)).collect();
        *cells.entry(index).or_insert(0) += 1;
    }
    let tensor = SparseCountTensor::from_entries(model.shape(), cells.into_iter().collect())?;

    let mut scaled = model.clone();
    scaled.rescale_lambda_to(samples as f64);
    Ok((tensor, scaled))
}

/// Model (with `||lambda||_1 = S`) and sampled tensor for a config.
pub fn generate(config: &GenConfig) -> Result<(SparseCountTensor, KruskalModel)> {
    let model = generate_model(config)?;
    sample_tensor(&model, config.samples, config.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollinearityStats {
    /// Mean cosine over all column pairs, per mode.
    pub all_pairs: Vec<f64>,
    /// Mean cosine between column 1 and each other column, per mode.
    pub first_pairs: Vec<f64>,
}

impl CollinearityStats {
    pub fn mean_all_pairs(&self) -> f64 {
        mean(&self.all_pairs)
    }

    pub fn mean_first_pairs(&self) -> f64 {
        mean(&self.first_pairs)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn cosine(x: &[f64], y: &[f64]) -> f64 {
    let d = norm2(x) * norm2(y);
    if d == 0.0 {
        0.0
    } else {
        dot(x, y) / d
    }
}

/// Column cosines of each factor. A rank-one model has no pairs and
/// reports NaN.
pub fn collinearity_stats(model: &KruskalModel) -> CollinearityStats {
    let rank = model.rank();
    let mut all_pairs = Vec::new();
    let mut first_pairs = Vec::new();
    for f in model.factors() {
        let cols: Vec<Vec<f64>> = (0..rank).map(|r| f.column(r)).collect();
        let mut all = Vec::new();
        for a in 0..rank {
            for b in a + 1..rank {
                all.push(cosine(&cols[a], &cols[b]));
            }
        }
        let first: Vec<f64> = (1..rank).map(|r| cosine(&cols[0], &cols[r])).collect();
        all_pairs.push(mean(&all));
        first_pairs.push(mean(&first));
    }
    CollinearityStats {
        all_pairs,
        first_pairs,
    }
}
