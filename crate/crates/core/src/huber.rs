//! C² Huber smoothing of `|t|` and the pieces of the TGV regularizer built on it.
//!
//! Three regions, with `l1 < l2` depending only on `gamma`:
//! `B` (|t| < l1) quadratic, `I` (l1 <= |t| <= l2) cubic blend, `A` (|t| > l2)
//! shifted absolute value. Boundary points belong to `I`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DifferenceOperators;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HuberParams {
    gamma: f64,
}

impl HuberParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma >= 1.0) {
            return Err(Error::InvalidParameter(format!("huber gamma must be >= 1, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn constants(&self) -> HuberConstants {
        HuberConstants::new(self.gamma)
    }
}

/// Region of a scalar argument.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    /// `|t| > l2`
    Active,
    /// `|t| < l1`
    Quadratic,
    /// `l1 <= |t| <= l2`
    Blend,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberConstants {
    pub gamma: f64,
    pub l1: f64,
    pub l2: f64,
    pub f: f64,
    pub g: f64,
    pub c: f64,
    pub d: f64,
    pub c1: f64,
    pub k: f64,
}

impl HuberConstants {
    pub fn new(gamma: f64) -> Self {
        let l1 = (1.0 - 1.0 / (2.0 * gamma)) / gamma;
        let l2 = (1.0 + 1.0 / (2.0 * gamma)) / gamma;
        let f = 1.0 - (2.0 * gamma + 1.0).powi(2) / (8.0 * gamma);
        let g = 0.5 * gamma * (2.0 * gamma + 1.0);
        let c = -0.5 * gamma.powi(3);
        let d = (0.5 * gamma - 0.5 * g) * l1 * l1 - f * l1 - c / 3.0 * l1.powi(3);
        let c1 = 0.5 * gamma * l1 * l1 - l2;
        let k = f * (l2 - l1) + 0.5 * g * (l2 * l2 - l1 * l1) + c / 3.0 * (l2.powi(3) - l1.powi(3));
        Self { gamma, l1, l2, f, g, c, d, c1, k }
    }

    pub fn region(&self, t: f64) -> Region {
        let a = t.abs();
        if a > self.l2 {
            Region::Active
        } else if a < self.l1 {
            Region::Quadratic
        } else {
            Region::Blend
        }
    }

    /// `1 - gamma |t| + 1/(2 gamma)`; runs from `1/gamma` at `l1` to `0` at `l2`.
    fn theta(&self, a: f64) -> f64 {
        1.0 - self.gamma * a + 0.5 / self.gamma
    }

    /// `H_gamma(t)`.
    pub fn value(&self, t: f64) -> f64 {
        let a = t.abs();
        match self.region(t) {
            Region::Active => a + self.c1 + self.k,
            Region::Quadratic => 0.5 * self.gamma * t * t,
            Region::Blend => self.f * a + 0.5 * self.g * a * a + self.c / 3.0 * a.powi(3) + self.d,
        }
    }

    /// `h_gamma(t) = H_gamma'(t)`.
    pub fn grad(&self, t: f64) -> f64 {
        match self.region(t) {
            Region::Active => t.signum(),
            Region::Quadratic => self.gamma * t,
            Region::Blend => {
                let th = self.theta(t.abs());
                t.signum() * (1.0 - 0.5 * self.gamma * th * th)
            }
        }
    }

    /// `h_gamma'(t)`. In `A` the general form `1/|x| - x x^T/|x|^3` is
    /// identically zero for scalars.
    pub fn hess(&self, t: f64) -> f64 {
        match self.region(t) {
            Region::Active => 0.0,
            Region::Quadratic => self.gamma,
            Region::Blend => self.gamma * self.gamma * self.theta(t.abs()),
        }
    }

    /// Hessian entry with one `t/|t|` factor replaced by the clipped dual
    /// `q / max(1, |q|)`. The trailing `gamma^2 theta` term of the blend region
    /// is left unprojected so it stays nonnegative.
    pub fn projected_hess(&self, t: f64, q: f64) -> f64 {
        let clipped = q / q.abs().max(1.0);
        let a = t.abs();
        // (1/|t| - clipped t/|t|^2), written so aligned duals cancel exactly
        let projected_curv = || (1.0 - clipped * t.signum()) / a;
        match self.region(t) {
            Region::Active => projected_curv(),
            Region::Quadratic => self.gamma,
            Region::Blend => {
                let th = self.theta(a);
                (1.0 - 0.5 * self.gamma * th * th) * projected_curv() + self.gamma * self.gamma * th
            }
        }
    }
}

pub fn huber_value(t: f64, params: &HuberParams) -> f64 {
    params.constants().value(t)
}

pub fn huber_grad(x: &[f64], params: &HuberParams) -> Vec<f64> {
    let c = params.constants();
    x.iter().map(|&t| c.grad(t)).collect()
}

pub fn huber_hess_diag(x: &[f64], params: &HuberParams) -> Vec<f64> {
    let c = params.constants();
    x.iter().map(|&t| c.hess(t)).collect()
}

/// Diagonal `Q1` at `zeta = Du - w`.
pub fn projected_q1(zeta: &[f64], q1: &[f64], params: &HuberParams) -> Result<Vec<f64>> {
    projected(zeta, q1, params, "q1")
}

/// Diagonal `Q2` at `Ew`.
pub fn projected_q2(ew: &[f64], q2: &[f64], params: &HuberParams) -> Result<Vec<f64>> {
    projected(ew, q2, params, "q2")
}

fn projected(arg: &[f64], q: &[f64], params: &HuberParams, what: &'static str) -> Result<Vec<f64>> {
    Error::check_len(what, arg.len(), q.len())?;
    let c = params.constants();
    Ok(arg.iter().zip(q).map(|(&t, &qi)| c.projected_hess(t, qi)).collect())
}

/// Positive weights of the regularizer and the Tikhonov term on `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegWeights {
    pub alpha: f64,
    pub beta: f64,
    pub mu: f64,
}

impl RegWeights {
    pub fn new(alpha: f64, beta: f64, mu: f64) -> Result<Self> {
        let w = Self { alpha, beta, mu };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::InvalidParameter(format!("mu must be nonnegative, got {}", self.mu)));
        }
        Ok(())
    }
}

/// `alpha sum H(Du - w) + beta sum H(Ew)`.
pub fn tgv_smoothed(
    u: &[f64],
    w: &[f64],
    weights: &RegWeights,
    params: &HuberParams,
    ops: &DifferenceOperators,
) -> Result<f64> {
    let c = params.constants();
    let (zeta, ew) = tgv_arguments(u, w, ops)?;
    Ok(weights.alpha * zeta.iter().map(|&t| c.value(t)).sum::<f64>()
        + weights.beta * ew.iter().map(|&t| c.value(t)).sum::<f64>())
}

/// `alpha sum |Du - w| + beta sum |Ew|` with `w` taken as given.
pub fn tgv_exact(u: &[f64], w: &[f64], weights: &RegWeights, ops: &DifferenceOperators) -> Result<f64> {
    let (zeta, ew) = tgv_arguments(u, w, ops)?;
    Ok(weights.alpha * zeta.iter().map(|t| t.abs()).sum::<f64>()
        + weights.beta * ew.iter().map(|t| t.abs()).sum::<f64>())
}

/// `(Du - w, Ew)`.
pub fn tgv_arguments(u: &[f64], w: &[f64], ops: &DifferenceOperators) -> Result<(Vec<f64>, Vec<f64>)> {
    let du = ops.apply_d(u)?;
    Error::check_len("w", du.len(), w.len())?;
    let zeta = du.iter().zip(w).map(|(a, b)| a - b).collect();
    Ok((zeta, ops.apply_e(w)?))
}
