//! Dense reference implementations shared by the integration tests. They are
//! written from the scheme's definition, not from the library's matrix-free
//! code, so agreement between the two is meaningful.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Convection stencil `U` frozen at the previous level, zero ghosts.
pub fn stencil(prev: &[f64], h: f64, upwind: bool) -> DMatrix<f64> {
    let n = prev.len();
    let mut u = DMatrix::zeros(n, n);
    for i in 0..n {
        if upwind && prev[i] >= 0.0 {
            u[(i, i)] = 1.0 / h;
            if i > 0 {
                u[(i, i - 1)] = -1.0 / h;
            }
        } else {
            u[(i, i)] = -1.0 / h;
            if i + 1 < n {
                u[(i, i + 1)] = 1.0 / h;
            }
        }
    }
    u
}

/// Discrete state equation `e(y, u)` with zero forcing:
/// `e^0 = (y^0 - u)/dt`, `e^j = (y^j - y^{j-1})/dt + y^{j-1} .* (U y^j)`.
pub fn residual(y: &[f64], u: &[f64], n: usize, h: f64, dt: f64, upwind: bool) -> Vec<f64> {
    let nt = y.len() / n;
    let mut e = Vec::with_capacity(y.len());
    e.extend((0..n).map(|i| (y[i] - u[i]) / dt));
    for j in 1..nt {
        let prev = &y[(j - 1) * n..j * n];
        let cur = DVector::from_column_slice(&y[j * n..(j + 1) * n]);
        let conv = stencil(prev, h, upwind) * cur.clone();
        e.extend((0..n).map(|i| (cur[i] - prev[i]) / dt + prev[i] * conv[i]));
    }
    e
}

/// `e_y` assembled block by block.
pub fn dense_jacobian(y: &[f64], n: usize, h: f64, dt: f64, upwind: bool) -> DMatrix<f64> {
    let nt = y.len() / n;
    let mut xi = DMatrix::zeros(n * nt, n * nt);
    for i in 0..n {
        xi[(i, i)] = 1.0 / dt;
    }
    for j in 1..nt {
        let prev = &y[(j - 1) * n..j * n];
        let u = stencil(prev, h, upwind);
        let uy = &u * DVector::from_column_slice(&y[j * n..(j + 1) * n]);
        let diag = DMatrix::identity(n, n) / dt + DMatrix::from_diagonal(&DVector::from_column_slice(prev)) * &u;
        xi.view_mut((j * n, j * n), (n, n)).copy_from(&diag);
        for i in 0..n {
            xi[(j * n + i, (j - 1) * n + i)] = -1.0 / dt + uy[i];
        }
    }
    xi
}

/// Central-difference Jacobian of [`residual`] with respect to `y`.
pub fn fd_jacobian(y: &[f64], u: &[f64], n: usize, h: f64, dt: f64, upwind: bool, eps: f64) -> DMatrix<f64> {
    let len = y.len();
    let mut jac = DMatrix::zeros(len, len);
    let mut yp = y.to_vec();
    for k in 0..len {
        yp[k] = y[k] + eps;
        let ep = residual(&yp, u, n, h, dt, upwind);
        yp[k] = y[k] - eps;
        let em = residual(&yp, u, n, h, dt, upwind);
        yp[k] = y[k];
        for r in 0..len {
            jac[(r, k)] = (ep[r] - em[r]) / (2.0 * eps);
        }
    }
    jac
}

pub fn lu_solve(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    a.clone().lu().solve(&DVector::from_column_slice(b)).expect("nonsingular").as_slice().to_vec()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| f64::max(m, (x - y).abs()))
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
