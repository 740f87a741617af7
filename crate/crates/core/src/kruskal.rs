//! The CP (Kruskal) model `M = sum_r lambda_r a_r^(1) o ... o a_r^(N)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::NeumaierSum;
use crate::sparse_tensor::{ModeRowGroup, Shape, SparseCountTensor};

/// Absolute tolerance on a unit column sum.
pub const NORMALIZED_TOL: f64 = 1e-12;

/// Dense row-major `rows x cols` matrix of nonnegative factor entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FactorMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidModel(format!(
                "factor data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidModel("ragged factor matrix".into()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, r: usize) -> f64 {
        self.data[i * self.cols + r]
    }

    pub fn set(&mut self, i: usize, r: usize, v: f64) {
        self.data[i * self.cols + r] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, r: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, r)).collect()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        let mut sums = vec![NeumaierSum::default(); self.cols];
        for row in self.data.chunks_exact(self.cols) {
            for (s, &v) in sums.iter_mut().zip(row) {
                s.add(v);
            }
        }
        sums.into_iter().map(NeumaierSum::value).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data
            .chunks_exact(self.cols)
            .map(<[f64]>::to_vec)
            .collect()
    }
}

/// Weights plus one `I_n x R` factor matrix per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct KruskalModel {
    lambda: Vec<f64>,
    factors: Vec<FactorMatrix>,
}

/// A CP factor column that was identically zero during normalization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroColumn {
    pub mode: usize,
    pub component: usize,
}

impl KruskalModel {
    pub fn new(lambda: Vec<f64>, factors: Vec<FactorMatrix>) -> Result<Self> {
        let rank = lambda.len();
        if rank == 0 {
            return Err(Error::InvalidModel("rank must be at least 1".into()));
        }
        if factors.len() < 2 {
            return Err(Error::InvalidModel(
                "need at least 2 factor matrices".into(),
            ));
        }
        for (n, f) in factors.iter().enumerate() {
            if f.cols() != rank {
                return Err(Error::InvalidModel(format!(
                    "factor {n} has {} columns, expected {rank}",
                    f.cols()
                )));
            }
            if f.rows() == 0 {
                return Err(Error::InvalidModel(format!("factor {n} has no rows")));
            }
            if f.as_slice().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "factor {n} has negative or non-finite entries"
                )));
            }
        }
        if lambda.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel(
                "lambda has negative or non-finite entries".into(),
            ));
        }
        Ok(Self { lambda, factors })
    }

    pub fn rank(&self) -> usize {
        self.lambda.len()
    }

    pub fn ndims(&self) -> usize {
        self.factors.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.factors.iter().map(FactorMatrix::rows).collect()
    }

    pub fn shape(&self) -> Shape {
        Shape::new(self.dims()).expect("model dims are validated")
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn factors(&self) -> &[FactorMatrix] {
        &self.factors
    }

    pub fn factor(&self, mode: usize) -> &FactorMatrix {
        &self.factors[mode]
    }

    pub fn set_factor(&mut self, mode: usize, factor: FactorMatrix) -> Result<()> {
        let old = &self.factors[mode];
        if factor.rows() != old.rows() || factor.cols() != old.cols() {
            return Err(Error::ShapeMismatch(format!(
                "factor {mode} must be {}x{}",
                old.rows(),
                old.cols()
            )));
        }
        self.factors[mode] = factor;
        Ok(())
    }

    /// Scales `lambda` so its entries sum to `total`. The last entry absorbs
    /// the rounding residual, so the left-to-right floating-point sum equals
    /// `total` exactly.
    pub fn rescale_lambda_to(&mut self, total: f64) {
        let current: f64 = self.lambda.iter().sum();
        if !(current > 0.0) {
            return;
        }
        let factor = total / current;
        for l in &mut self.lambda {
            *l *= factor;
        }
        let (last, rest) = self.lambda.split_last_mut().expect("rank is at least 1");
        let partial: f64 = rest.iter().sum();
        *last = (total - partial).max(0.0);
        // The sum is monotone in `last` and steps by at most one ulp of
        // `total`, so walking `last` one ulp at a time cannot skip `total`.
        for _ in 0..64 {
            let s = partial + *last;
            if s == total {
                break;
            }
            *last = if s < total {
                last.next_up()
            } else {
                last.next_down().max(0.0)
            };
        }
    }

    pub fn is_normalized(&self) -> bool {
        self.factors.iter().all(|f| {
            f.column_sums()
                .iter()
                .all(|s| (s - 1.0).abs() <= NORMALIZED_TOL)
        })
    }

    /// Rescales every factor column to unit l1 norm, moving the scale into
    /// `lambda`. The represented tensor is unchanged.
    ///
    /// A column that sums to zero cannot be rescaled: its weight is set to 0,
    /// the column is replaced by the uniform vector `1/I_n`, and it is
    /// reported back.
    pub fn normalize(&mut self) -> Vec<ZeroColumn> {
        let mut dead = Vec::new();
        for (mode, factor) in self.factors.iter_mut().enumerate() {
            normalize_columns(mode, factor, &mut self.lambda, &mut dead);
        }
        dead
    }

    /// `B^(n) = A^(n) diag(lambda)`.
    pub fn scaled_factor(&self, mode: usize) -> FactorMatrix {
        let mut b = self.factors[mode].clone();
        for i in 0..b.rows() {
            for (v, l) in b.row_mut(i).iter_mut().zip(&self.lambda) {
                *v *= l;
            }
        }
        b
    }

    /// Replaces mode `mode` by an unnormalized `B`: `lambda <- e^T B`,
    /// `A^(n) <- B diag(lambda)^-1`. The other factors are assumed to be
    /// normalized already. Zero columns are handled as in [`Self::normalize`].
    pub fn absorb_scaled_factor(
        &mut self,
        mode: usize,
        mut b: FactorMatrix,
    ) -> Result<Vec<ZeroColumn>> {
        let old = &self.factors[mode];
        if b.rows() != old.rows() || b.cols() != old.cols() {
            return Err(Error::ShapeMismatch(format!(
                "factor {mode} must be {}x{}",
                old.rows(),
                old.cols()
            )));
        }
        if b.as_slice().iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidModel(format!(
                "factor {mode} has negative or non-finite entries"
            )));
        }
        self.lambda.fill(1.0);
        let mut dead = Vec::new();
        normalize_columns(mode, &mut b, &mut self.lambda, &mut dead);
        self.factors[mode] = b;
        Ok(dead)
    }

    pub fn normalized(mut self) -> (Self, Vec<ZeroColumn>) {
        let dead = self.normalize();
        (self, dead)
    }

    /// Writes `pi_r = prod_{k != mode} a^(k)_{i_k r}` into `out` for the
    /// reduced index (other modes in order, `mode` omitted).
    pub fn pi_column_into(&self, mode: usize, reduced: &[usize], out: &mut [f64]) {
        out.fill(1.0);
        let others = (0..self.ndims()).filter(|&k| k != mode);
        for (k, &i) in others.zip(reduced) {
            for (o, &a) in out.iter_mut().zip(self.factors[k].row(i)) {
                *o *= a;
            }
        }
    }

    pub fn pi_column(&self, mode: usize, reduced: &[usize]) -> Result<Vec<f64>> {
        self.check_reduced(mode, reduced)?;
        let mut out = vec![0.0; self.rank()];
        self.pi_column_into(mode, reduced, &mut out);
        Ok(out)
    }

    /// Columns of `Pi^(n)` for the given reduced indices only; the full
    /// `R x J_n` matrix is never formed.
    pub fn pi_columns(&self, mode: usize, reduced: &[&[usize]]) -> Result<PiBlock> {
        for r in reduced {
            self.check_reduced(mode, r)?;
        }
        let rank = self.rank();
        let mut data = vec![0.0; reduced.len() * rank];
        for (col, r) in data.chunks_exact_mut(rank).zip(reduced) {
            self.pi_column_into(mode, r, col);
        }
        Ok(PiBlock { mode, rank, data })
    }

    /// `Pi` columns for every nonzero of a row group.
    pub fn pi_block_for(&self, group: &ModeRowGroup) -> PiBlock {
        let rank = self.rank();
        let mut data = vec![0.0; group.len() * rank];
        for (k, col) in data.chunks_exact_mut(rank).enumerate() {
            self.pi_column_into(group.mode, group.reduced_index(k), col);
        }
        PiBlock {
            mode: group.mode,
            rank,
            data,
        }
    }

    fn check_reduced(&self, mode: usize, reduced: &[usize]) -> Result<()> {
        let dims: Vec<usize> = self
            .dims()
            .into_iter()
            .enumerate()
            .filter(|&(k, _)| k != mode)
            .map(|(_, d)| d)
            .collect();
        if mode >= self.ndims()
            || reduced.len() != dims.len()
            || reduced.iter().zip(&dims).any(|(&i, &d)| i >= d)
        {
            return Err(Error::IndexOutOfRange {
                index: reduced.to_vec(),
                dims,
            });
        }
        Ok(())
    }

    /// `m_i = sum_r lambda_r prod_n a^(n)_{i_n r}`.
    pub fn entry(&self, index: &[usize]) -> Result<f64> {
        if !self.shape().contains(index) {
            return Err(Error::IndexOutOfRange {
                index: index.to_vec(),
                dims: self.dims(),
            });
        }
        Ok(self.entry_unchecked(index))
    }

    pub(crate) fn entry_unchecked(&self, index: &[usize]) -> f64 {
        let mut sum = 0.0;
        for r in 0..self.rank() {
            let mut term = self.lambda[r];
            for (f, &i) in self.factors.iter().zip(index) {
                term *= f.get(i, r);
            }
            sum += term;
        }
        sum
    }

    /// KL objective `sum_i m_i - x_i log m_i` over all cells.
    ///
    /// The first sum is `sum_r lambda_r` for a normalized model; an
    /// unnormalized model is evaluated on a normalized copy. Returns
    /// `+inf` when a positive count meets a zero model entry.
    pub fn kl_objective(&self, tensor: &SparseCountTensor) -> f64 {
        if !self.is_normalized() {
            let (copy, _) = self.clone().normalized();
            return copy.kl_objective(tensor);
        }
        let mut acc = NeumaierSum::default();
        for &l in &self.lambda {
            acc.add(l);
        }
        for (idx, x) in tensor.entries() {
            let m = self.entry_unchecked(idx);
            if m <= 0.0 {
                return f64::INFINITY;
            }
            acc.add(-(x as f64) * m.ln());
        }
        acc.value()
    }

    pub fn exact_zeros(&self) -> usize {
        self.factors
            .iter()
            .map(|f| f.as_slice().iter().filter(|&&v| v == 0.0).count())
            .sum()
    }
}

fn normalize_columns(
    mode: usize,
    factor: &mut FactorMatrix,
    lambda: &mut [f64],
    dead: &mut Vec<ZeroColumn>,
) {
    let sums = factor.column_sums();
    let rows = factor.rows();
    for (r, &s) in sums.iter().enumerate() {
        if s > 0.0 {
            if s != 1.0 {
                for i in 0..rows {
                    let v = factor.get(i, r) / s;
                    factor.set(i, r, v);
                }
                lambda[r] *= s;
            }
        } else {
            for i in 0..rows {
                factor.set(i, r, 1.0 / rows as f64);
            }
            lambda[r] = 0.0;
            dead.push(ZeroColumn { mode, component: r });
        }
    }
}

/// Columns of `Pi^(n)` for the nonzeros of one row, stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct PiBlock {
    pub mode: usize,
    rank: usize,
    data: Vec<f64>,
}

impl PiBlock {
    pub fn from_columns(mode: usize, rank: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % rank.max(1), 0);
        Self { mode, rank, data }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.rank
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rank..(j + 1) * self.rank]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}
