//! Space-time mesh and the first-order difference operators used by the
//! regularizer.
//!
//! `D` is the forward difference `R^n -> R^{n-1}` acting on the control.
//! `E` is the backward difference `R^{n-1} -> R^{n-1}` acting on the auxiliary
//! field `w`; its first row reads a zero ghost value to the left, so `E` is
//! square. Both are applied matrix-free.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `(0, L) x (0, T)` with `n` interior nodes and `N_t` time levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    n: usize,
    nt: usize,
    length: f64,
    horizon: f64,
}

impl Grid {
    pub fn new(n: usize, nt: usize, length: f64, horizon: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGrid(format!("need at least 3 spatial nodes, got {n}")));
        }
        if nt < 2 {
            return Err(Error::InvalidGrid(format!("need at least 2 time levels, got {nt}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(Error::InvalidGrid(format!("domain length must be positive, got {length}")));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidGrid(format!("time horizon must be positive, got {horizon}")));
        }
        Ok(Self { n, nt, length, horizon })
    }

    /// Number of interior spatial nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of time levels.
    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn h(&self) -> f64 {
        self.length / (self.n + 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / (self.nt + 1) as f64
    }

    /// Size of the stacked space-time state.
    pub fn state_len(&self) -> usize {
        self.n * self.nt
    }

    /// Node coordinates `x_i = i h`, `i = 1..=n`.
    pub fn nodes(&self) -> Vec<f64> {
        let h = self.h();
        (1..=self.n).map(|i| i as f64 * h).collect()
    }
}

/// Forward (`D`) and backward (`E`) difference operators on a grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferenceOperators {
    n: usize,
    scale: f64,
}

impl DifferenceOperators {
    /// With `scale_by_h` the stencils carry the `1/h` factor.
    pub fn new(grid: &Grid, scale_by_h: bool) -> Self {
        let scale = if scale_by_h { 1.0 / grid.h() } else { 1.0 };
        Self { n: grid.n(), scale }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Factor multiplying every stencil entry (`1/h` or `1`).
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn apply_d(&self, u: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("D input", self.n, u.len())?;
        Ok(u.windows(2).map(|p| (p[1] - p[0]) * self.scale).collect())
    }

    pub fn apply_dt(&self, v: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("D^T input", self.n - 1, v.len())?;
        let mut out = vec![0.0; self.n];
        for (i, &vi) in v.iter().enumerate() {
            out[i] -= vi * self.scale;
            out[i + 1] += vi * self.scale;
        }
        Ok(out)
    }

    pub fn apply_e(&self, w: &[f64]) -> Result<Vec<f64>> {
        Error::check_len("E input", self.n - 1, w.len())?;
        let mut prev = 0.0;
        Ok(w
            .iter()
            .map(|&wi| {
                let d = (wi - prev) * self.scale;
                prev = wi;
                d
            })
            .collect())
    }

    pub fn apply_et(&self, v: &[f64]) -> Result<Vec<f64>> {
        let m = self.n - 1;
        Error::check_len("E^T input", m, v.len())?;
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] += v[i] * self.scale;
            if i + 1 < m {
                out[i] -= v[i + 1] * self.scale;
            }
        }
        Ok(out)
    }

    /// Dense `(n-1) x n` copy of `D`.
    pub fn dense_d(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.n - 1, self.n);
        for i in 0..self.n - 1 {
            d[(i, i)] = -self.scale;
            d[(i, i + 1)] = self.scale;
        }
        d
    }

    /// Dense `(n-1) x (n-1)` copy of `E`.
    pub fn dense_e(&self) -> DMatrix<f64> {
        let m = self.n - 1;
        let mut e = DMatrix::zeros(m, m);
        for i in 0..m {
            e[(i, i)] = self.scale;
            if i > 0 {
                e[(i, i - 1)] = -self.scale;
            }
        }
        e
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}
