//! CP factorization of sparse count tensors under the KL objective.
//!
//! The model `M = sum_r lambda_r a_r^(1) o ... o a_r^(N)` is fitted by
//! alternating over modes; within a mode every row of the factor matrix is an
//! independent, strictly convex, bound-constrained problem in `R` variables,
//! solved by a projected damped Newton method ([`Method::Pdnr`]), a projected
//! L-BFGS method ([`Method::Pqnr`]), or the multiplicative-update baseline
//! ([`Method::Mu`]).
//!
//! ```no_run
//! use cpkl::{fit, generate, FitConfig, GenConfig, Method};
//!
//! let (tensor, _truth) = generate(&GenConfig::new(vec![20, 30, 40], 5, 50_000, 1)).unwrap();
//! let result = fit(&tensor, &FitConfig::new(Method::Pdnr, 5)).unwrap();
//! println!("converged: {} kkt: {:e}", result.converged, result.final_kkt);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cli;
pub mod driver;
pub mod error;
pub mod eval;
pub mod io;
pub mod kruskal;
pub mod numeric;
pub mod row_solver;
pub mod sparse_tensor;
pub mod synth;

pub use baselines::MuParams;
pub use driver::{fit, fit_from, init_model, FitConfig, FitResult, FitTrace, Method, StopReason};
pub use error::{Error, Result};
pub use eval::{exact_zero_count, full_kkt_violation, score_greedy};
pub use kruskal::{FactorMatrix, KruskalModel};
pub use row_solver::SolverParams;
pub use sparse_tensor::{Shape, SparseCountTensor};
pub use synth::{generate, GenConfig};
