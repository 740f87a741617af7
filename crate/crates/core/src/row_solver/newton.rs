//! Damped Newton direction on the free variables and the
//! Levenberg-Marquardt damping schedule.

use super::RowError;

/// In-place Cholesky factorization `A = L L^T` of a row-major `n x n`
/// matrix. The lower triangle of `a` is overwritten with `L`.
fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), RowError> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(RowError::FactorizationFailure);
        }
        let ljj = diag.sqrt();
        a[j * n + j] = ljj;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / ljj;
        }
    }
    Ok(())
}

/// Solves `L L^T x = rhs` given the factor from [`cholesky_in_place`].
fn cholesky_solve(l: &[f64], n: usize, rhs: &mut [f64]) {
    for i in 0..n {
        let mut v = rhs[i];
        for k in 0..i {
            v -= l[i * n + k] * rhs[k];
        }
        rhs[i] = v / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = rhs[i];
        for k in i + 1..n {
            v -= l[k * n + i] * rhs[k];
        }
        rhs[i] = v / l[i * n + i];
    }
}

/// `d_F = -(H_F + mu I)^{-1} g_F` via Cholesky of the damped Hessian.
///
/// `h_free` is row-major `|F| x |F|`.
pub fn damped_newton_direction(
    h_free: &[f64],
    g_free: &[f64],
    mu: f64,
) -> Result<Vec<f64>, RowError> {
    let n = g_free.len();
    assert_eq!(h_free.len(), n * n);
    let mut a = h_free.to_vec();
    for i in 0..n {
        a[i * n + i] += mu;
    }
    cholesky_in_place(&mut a, n)?;
    let mut d: Vec<f64> = g_free.iter().map(|v| -v).collect();
    cholesky_solve(&a, n, &mut d);
    Ok(d)
}

/// Change predicted by the undamped quadratic model,
/// `m(d_F; 0) - m(0; 0) = d_F^T g_F + d_F^T H_F d_F / 2`.
pub fn model_decrease(h_free: &[f64], g_free: &[f64], d_free: &[f64]) -> f64 {
    let n = g_free.len();
    let mut quad = 0.0;
    for i in 0..n {
        let hd: f64 = (0..n).map(|k| h_free[i * n + k] * d_free[k]).sum();
        quad += d_free[i] * hd;
    }
    let lin: f64 = g_free.iter().zip(d_free).map(|(g, d)| g * d).sum();
    lin + 0.5 * quad
}

/// Next damping from the ratio of actual to predicted change,
/// `rho = actual_change / model_change` (both negative on a good step).
pub fn update_damping(mu: f64, actual_change: f64, model_change: f64) -> f64 {
    let rho = actual_change / model_change;
    if rho < 0.25 || rho.is_nan() {
        3.5 * mu
    } else if rho > 0.75 {
        mu * (2.0 / 7.0)
    } else {
        mu
    }
}
