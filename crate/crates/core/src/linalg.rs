//! Small dense helpers: power iteration and tridiagonal solves.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{abs, max_abs};

#[derive(Debug, Clone)]
pub(crate) struct Eigen {
    pub value: f64,
    /// Normalized to unit maximum norm.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Power iteration for the dominant eigenpair of a nonnegative operator.
///
/// `apply(v, out)` must write `A v` into `out`. Iteration stops once the
/// eigen-residual is below `tol · λ`. A zero operator returns `value = 0`
/// with a zero vector.
pub(crate) fn power_iteration(
    n: usize,
    start: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    mut apply: impl FnMut(&[f64], &mut [f64]),
) -> Result<Eigen> {
    let mut v = match start {
        Some(s) if s.len() == n && s.iter().all(|x| *x > 0.0 && x.is_finite()) => {
            let m = max_abs(s);
            s.iter().map(|x| x / m).collect()
        }
        _ => vec![1.0; n],
    };
    let mut w = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        apply(&v, &mut w);
        let value = max_abs(&w);
        if value == 0.0 {
            return Ok(Eigen {
                value: 0.0,
                vector: vec![0.0; n],
                iterations: it,
            });
        }
        if !value.is_finite() {
            return Err(Error::NonFinite("power iteration"));
        }
        residual = w
            .iter()
            .zip(&v)
            .fold(0.0_f64, |m, (a, b)| m.max(abs(a - value * b)));
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / value;
        }
        if residual <= tol * value {
            return Ok(Eigen {
                value,
                vector: v,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        what: "power iteration",
        iterations: max_iter,
        gap: residual,
    })
}

/// Solves a tridiagonal system by the Thomas algorithm.
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (`lower[0]` unused), `upper[i]`
/// multiplies `x[i+1]` (`upper[n-1]` unused). Requires diagonal dominance.
pub(crate) fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = if n > 1 { upper[0] / diag[0] } else { 0.0 };
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / m } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    d
}

/// Dense Gaussian elimination with partial pivoting; `a` is row-major `n × n`.
pub(crate) fn solve_dense(n: usize, mut a: Vec<f64>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| abs(a[i * n + col]).total_cmp(&abs(a[j * n + col])))
            .unwrap_or(col);
        if a[piv * n + col] == 0.0 {
            return Err(Error::InvalidArgument("singular matrix".into()));
        }
        if piv != col {
            for k in 0..n {
                a.swap(piv * n + k, col * n + k);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[r * n + col] / a[col * n + col];
            for k in col..n {
                a[r * n + k] -= f * a[col * n + k];
            }
            b[r] -= f * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut v = b[col];
        for k in col + 1..n {
            v -= a[col * n + k] * b[k];
        }
        b[col] = v / a[col * n + col];
    }
    Ok(b)
}
