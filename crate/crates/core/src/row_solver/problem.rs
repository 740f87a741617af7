//! The row subproblem
//! `f_row(b) = sum_r b_r - sum_j x_j log(sum_r b_r pi_rj)` and its derivatives.

use crate::kruskal::PiBlock;

use super::RowError;

/// One row subproblem: variables `b` (length `R`), positive counts `x`
/// (length `J`), and the matching `Pi` columns stored column by column.
#[derive(Debug, Clone, PartialEq)]
pub struct RowProblem {
    pub b: Vec<f64>,
    x: Vec<f64>,
    pi: Vec<f64>,
}

impl RowProblem {
    /// # Panics
    ///
    /// If the sizes disagree or an invariant (`b >= 0`, `x > 0`, `pi >= 0`)
    /// is violated.
    pub fn new(b: Vec<f64>, x: Vec<f64>, pi: Vec<f64>) -> Self {
        let rank = b.len();
        assert!(rank > 0, "row problem needs at least one variable");
        assert_eq!(
            pi.len(),
            x.len() * rank,
            "pi must hold one R-vector per count"
        );
        assert!(b.iter().all(|&v| v >= 0.0), "b must be nonnegative");
        assert!(x.iter().all(|&v| v > 0.0), "counts must be positive");
        assert!(pi.iter().all(|&v| v >= 0.0), "pi must be nonnegative");
        Self { b, x, pi }
    }

    pub fn from_block(b: Vec<f64>, x: Vec<f64>, pi: PiBlock) -> Self {
        Self::new(b, x, pi.into_vec())
    }

    pub fn rank(&self) -> usize {
        self.b.len()
    }

    pub fn num_counts(&self) -> usize {
        self.x.len()
    }

    pub fn counts(&self) -> &[f64] {
        &self.x
    }

    pub fn pi_column(&self, j: usize) -> &[f64] {
        let r = self.rank();
        &self.pi[j * r..(j + 1) * r]
    }

    fn columns(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.pi
            .chunks_exact(self.rank())
            .zip(self.x.iter().copied())
    }

    /// Model values `m_j = sum_r v_r pi_rj` for every count.
    pub fn model_values(&self, v: &[f64]) -> Vec<f64> {
        self.pi
            .chunks_exact(self.rank())
            .map(|col| col.iter().zip(v).map(|(p, b)| p * b).sum())
            .collect()
    }

    /// `f_row` at `v`; `+inf` if any `m_j` is zero.
    pub fn objective_at(&self, v: &[f64]) -> f64 {
        let m = self.model_values(v);
        objective_from(v, &self.x, &m)
    }

    pub fn objective(&self) -> f64 {
        self.objective_at(&self.b)
    }

    pub fn gradient_at(&self, v: &[f64]) -> Result<Vec<f64>, RowError> {
        let m = self.model_values(v);
        self.gradient_from(&m)
    }

    pub fn gradient(&self) -> Result<Vec<f64>, RowError> {
        self.gradient_at(&self.b)
    }

    /// `grad_r = 1 - sum_j x_j pi_rj / m_j` given precomputed `m`.
    pub fn gradient_from(&self, m: &[f64]) -> Result<Vec<f64>, RowError> {
        let mut g = vec![1.0; self.rank()];
        for ((col, x), &mj) in self.columns().zip(m) {
            if mj <= 0.0 {
                return Err(RowError::UndefinedAtZeroModel);
            }
            let w = x / mj;
            for (gr, p) in g.iter_mut().zip(col) {
                *gr -= w * p;
            }
        }
        Ok(g)
    }

    /// Full `R x R` Hessian `sum_j x_j pi_rj pi_sj / m_j^2`, row-major.
    pub fn hessian_at(&self, v: &[f64]) -> Result<Vec<f64>, RowError> {
        let m = self.model_values(v);
        let all: Vec<usize> = (0..self.rank()).collect();
        self.hessian_block(&m, &all)
    }

    pub fn hessian(&self) -> Result<Vec<f64>, RowError> {
        self.hessian_at(&self.b)
    }

    /// Hessian restricted to the variables in `vars`, row-major
    /// `|vars| x |vars|`.
    pub fn hessian_block(&self, m: &[f64], vars: &[usize]) -> Result<Vec<f64>, RowError> {
        let k = vars.len();
        let mut h = vec![0.0; k * k];
        let mut sub = vec![0.0; k];
        for ((col, x), &mj) in self.columns().zip(m) {
            if mj <= 0.0 {
                return Err(RowError::UndefinedAtZeroModel);
            }
            let w = x / (mj * mj);
            for (s, &r) in sub.iter_mut().zip(vars) {
                *s = col[r];
            }
            for a in 0..k {
                let wa = w * sub[a];
                if wa == 0.0 {
                    continue;
                }
                for c in a..k {
                    h[a * k + c] += wa * sub[c];
                }
            }
        }
        for a in 0..k {
            for c in 0..a {
                h[a * k + c] = h[c * k + a];
            }
        }
        Ok(h)
    }

    /// `f_row(b + delta) - f_row(b)` evaluated as a difference, so it keeps
    /// full relative accuracy when the change is tiny compared to `f_row`.
    ///
    /// `m` holds the model values at `b`. Returns `+inf` if the new point
    /// makes some `m_j` vanish.
    pub fn objective_change(&self, m: &[f64], delta: &[f64]) -> f64 {
        let mut linear = 0.0;
        for &d in delta {
            linear += d;
        }
        let mut log_part = 0.0;
        for ((col, x), &mj) in self.columns().zip(m) {
            let dm: f64 = col.iter().zip(delta).map(|(p, d)| p * d).sum();
            let ratio = dm / mj;
            if !(ratio > -1.0) {
                return f64::INFINITY;
            }
            log_part += x * ratio.ln_1p();
        }
        linear - log_part
    }
}

pub(crate) fn objective_from(v: &[f64], x: &[f64], m: &[f64]) -> f64 {
    let mut f: f64 = v.iter().sum();
    for (&xj, &mj) in x.iter().zip(m) {
        if mj <= 0.0 {
            return f64::INFINITY;
        }
        f -= xj * mj.ln();
    }
    f
}

/// `max_r |min(b_r, g_r)|`.
pub fn kkt_violation(b: &[f64], g: &[f64]) -> f64 {
    b.iter()
        .zip(g)
        .map(|(&br, &gr)| br.min(gr).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_interior(rng: &mut ChaCha8Rng, rank: usize, len: usize) -> RowProblem {
        let b = (0..rank).map(|_| rng.gen_range(0.5..2.0)).collect();
        let x = (0..len).map(|_| rng.gen_range(1..10) as f64).collect();
        let pi = (0..rank * len).map(|_| rng.gen_range(0.01..1.0)).collect();
        RowProblem::new(b, x, pi)
    }

    #[test]
    fn objective_examples() {
        let p = RowProblem::new(vec![1.0, 1.0], vec![], vec![]);
        assert_eq!(p.objective(), 2.0);
        assert_eq!(p.gradient().unwrap(), vec![1.0, 1.0]);
        assert_eq!(p.hessian().unwrap(), vec![0.0; 4]);

        let s = RowProblem::new(vec![2.0], vec![2.0], vec![1.0]);
        assert!((s.objective() - (2.0 - 2.0 * 2f64.ln())).abs() < 1e-15);
        assert_eq!(s.gradient().unwrap(), vec![0.0]);
        assert_eq!(s.hessian().unwrap(), vec![0.5]);

        let z = RowProblem::new(vec![0.0, 0.0], vec![3.0], vec![0.5, 0.5]);
        assert_eq!(z.objective(), f64::INFINITY);
        assert_eq!(z.gradient(), Err(RowError::UndefinedAtZeroModel));
        assert_eq!(z.hessian(), Err(RowError::UndefinedAtZeroModel));
    }

    #[test]
    fn kkt_examples() {
        assert_eq!(kkt_violation(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        assert_eq!(kkt_violation(&[1.0, 0.0], &[0.5, -0.2]), 0.5);
        assert_eq!(kkt_violation(&[0.3, 2.0], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let rank = rng.gen_range(1..=6);
            let len = rng.gen_range(0..=12);
            let p = random_interior(&mut rng, rank, len);
            let g = p.gradient().unwrap();
            let h = 1e-6;
            let mut err: f64 = 0.0;
            for r in 0..rank {
                let mut up = p.b.clone();
                let mut dn = p.b.clone();
                up[r] += h;
                dn[r] -= h;
                let fd = (p.objective_at(&up) - p.objective_at(&dn)) / (2.0 * h);
                err = err.max((fd - g[r]).abs());
            }
            let scale = g.iter().fold(1.0f64, |a, v| a.max(v.abs()));
            assert!(err / scale < 1e-5, "relative error {}", err / scale);
        }
    }

    #[test]
    fn hessian_block_matches_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let p = random_interior(&mut rng, 5, 9);
        let full = p.hessian().unwrap();
        let m = p.model_values(&p.b);
        let vars = [1, 3, 4];
        let block = p.hessian_block(&m, &vars).unwrap();
        for (a, &ra) in vars.iter().enumerate() {
            for (c, &rc) in vars.iter().enumerate() {
                assert_eq!(block[a * 3 + c], full[ra * 5 + rc]);
            }
        }
    }

    #[test]
    fn objective_change_agrees_with_direct_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..50 {
            let p = random_interior(&mut rng, 4, 7);
            let delta: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.4..0.4)).collect();
            let moved: Vec<f64> = p.b.iter().zip(&delta).map(|(b, d)| b + d).collect();
            let direct = p.objective_at(&moved) - p.objective();
            let change = p.objective_change(&p.model_values(&p.b), &delta);
            assert!((direct - change).abs() < 1e-10 * (1.0 + direct.abs()));
        }
        let p = RowProblem::new(vec![1.0], vec![2.0], vec![1.0]);
        assert_eq!(p.objective_change(&[1.0], &[-1.0]), f64::INFINITY);
    }
}
