//! Global (single-window) structural similarity of two 1-D signals.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Stabilizing constants `C1`, `C2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConstants {
    pub c1: f64,
    pub c2: f64,
}

impl SsimConstants {
    /// `C_i = k_i L^2` with `k1 = 0.01`, `k2 = 0.03`, dynamic range `L = 2`.
    pub fn linear() -> Self {
        Self { c1: 0.01 * 4.0, c2: 0.03 * 4.0 }
    }

    /// The image-processing convention `C_i = (k_i L)^2`.
    pub fn squared() -> Self {
        Self { c1: (0.01f64 * 2.0).powi(2), c2: (0.03f64 * 2.0).powi(2) }
    }
}

impl Default for SsimConstants {
    fn default() -> Self {
        Self::linear()
    }
}

/// SSIM with population (1/n) moments and the default constants.
pub fn ssim(x: &[f64], y: &[f64]) -> Result<f64> {
    ssim_with(x, y, SsimConstants::default())
}

pub fn ssim_with(x: &[f64], y: &[f64], c: SsimConstants) -> Result<f64> {
    Error::check_len("ssim input", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InvalidParameter("ssim needs at least two samples".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
        cxy += (a - mx) * (b - my);
    }
    let (vx, vy, cxy) = (vx / n, vy / n, cxy / n);
    Ok((2.0 * mx * my + c.c1) * (2.0 * cxy + c.c2) / ((mx * mx + my * my + c.c1) * (vx + vy + c.c2)))
}
