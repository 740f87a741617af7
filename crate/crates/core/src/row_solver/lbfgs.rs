//! Limited-memory BFGS pair storage and the two-loop recursion.

use std::collections::VecDeque;

use crate::numeric::{dot, norm2};

/// Pairs with `s^T y <= SKIP_RATIO * ||s|| ||y||` are not stored.
pub const SKIP_RATIO: f64 = 1e-12;

#[derive(Debug, Clone)]
struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Ring buffer of the most recent `memory` curvature pairs.
#[derive(Debug, Clone)]
pub struct LbfgsStore {
    memory: usize,
    pairs: VecDeque<Pair>,
    gamma: f64,
    skipped: usize,
}

impl LbfgsStore {
    pub fn new(memory: usize) -> Self {
        assert!(memory >= 1, "L-BFGS memory must be at least 1");
        Self {
            memory,
            pairs: VecDeque::with_capacity(memory),
            gamma: 1.0,
            skipped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Initial inverse-Hessian scale `s^T y / y^T y` of the newest pair.
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn skipped(&self) -> usize {
        self.skipped
    }

    pub fn newest(&self) -> Option<(&[f64], &[f64])> {
        self.pairs.back().map(|p| (p.s.as_slice(), p.y.as_slice()))
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
        self.gamma = 1.0;
    }

    /// Stores `(s, y)`, evicting the oldest pair when full. Returns `false`
    /// if the pair fails the curvature check and was skipped.
    pub fn update(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if !(sy > SKIP_RATIO * norm2(&s) * norm2(&y)) {
            self.skipped += 1;
            return false;
        }
        self.gamma = sy / dot(&y, &y);
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back(Pair {
            s,
            y,
            rho: 1.0 / sy,
        });
        true
    }

    /// `p = B g`, with `B` the inverse-Hessian approximation. With no pairs
    /// stored this is `g` itself.
    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = vec![0.0; self.pairs.len()];
        for (k, p) in self.pairs.iter().enumerate().rev() {
            let a = p.rho * dot(&p.s, &q);
            alphas[k] = a;
            for (qi, yi) in q.iter_mut().zip(&p.y) {
                *qi -= a * yi;
            }
        }
        for v in &mut q {
            *v *= self.gamma;
        }
        for (k, p) in self.pairs.iter().enumerate() {
            let b = p.rho * dot(&p.y, &q);
            for (qi, si) in q.iter_mut().zip(&p.s) {
                *qi += (alphas[k] - b) * si;
            }
        }
        q
    }
}
