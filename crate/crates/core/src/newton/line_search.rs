//! Backtracking line search with quadratic then cubic interpolation.
//!
//! First trial `s = 1`. After the first rejection the minimizer of the
//! quadratic through `f(0), f'(0), f(1)` is tried, clamped to
//! `[0.1, 1/(2(1 - c1))]`; afterwards the cubic through the last two trials
//! is used, clamped to `[0.1 s_prev, (2/3) s_prev]`. A non-finite trial cost
//! (e.g. the state solve broke down) halves the step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub step: f64,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineSearchResult {
    pub step: f64,
    pub cost: f64,
    /// Every evaluated trial, the accepted one last.
    pub trials: Vec<Trial>,
}

/// Largest step allowed after the first rejection.
pub fn quadratic_cap(c1: f64) -> f64 {
    1.0 / (2.0 * (1.0 - c1))
}

/// Standard Armijo test `f(s) <= f(0) + c1 s f'(0)`.
pub fn armijo_holds(f0: f64, slope: f64, c1: f64, step: f64, cost: f64) -> bool {
    cost.is_finite() && cost <= f0 + c1 * step * slope
}

/// `phi(s)` evaluates the cost along the search line; `slope = phi'(0) < 0`.
pub fn polynomial_line_search<F>(mut phi: F, f0: f64, slope: f64, c1: f64, max_trials: usize) -> Result<LineSearchResult>
where
    F: FnMut(f64) -> f64,
{
    if !(slope < 0.0) {
        return Err(Error::NonDescent {
            reason: format!("line search needs a negative directional derivative, got {slope:e}"),
            min_eigenvalue: f64::NAN,
        });
    }
    let mut trials: Vec<Trial> = Vec::new();
    let mut step = 1.0;
    for _ in 0..max_trials {
        let cost = phi(step);
        trials.push(Trial { step, cost });
        if armijo_holds(f0, slope, c1, step, cost) {
            return Ok(LineSearchResult { step, cost, trials });
        }
        step = next_step(&trials, f0, slope, c1);
    }
    Err(Error::LineSearchFailure { trials: trials.len(), last_step: trials.last().map_or(step, |t| t.step) })
}

fn next_step(trials: &[Trial], f0: f64, slope: f64, c1: f64) -> f64 {
    let last = trials[trials.len() - 1];
    if !last.cost.is_finite() {
        return 0.5 * last.step;
    }
    if trials.len() == 1 || !trials[trials.len() - 2].cost.is_finite() {
        let s = last.step;
        let model = -slope * s * s / (2.0 * (last.cost - f0 - slope * s));
        let cap = if trials.len() == 1 { quadratic_cap(c1) } else { 2.0 / 3.0 * s };
        return clamp(model, 0.1 * s, cap);
    }
    let prev = trials[trials.len() - 2];
    let (s1, s2) = (last.step, prev.step);
    let r1 = last.cost - f0 - slope * s1;
    let r2 = prev.cost - f0 - slope * s2;
    let denom = s1 - s2;
    let a = (r1 / (s1 * s1) - r2 / (s2 * s2)) / denom;
    let b = (-s2 * r1 / (s1 * s1) + s1 * r2 / (s2 * s2)) / denom;
    let model = if a == 0.0 {
        -slope / (2.0 * b)
    } else {
        let disc = b * b - 3.0 * a * slope;
        (-b + disc.sqrt()) / (3.0 * a)
    };
    clamp(model, 0.1 * s1, 2.0 / 3.0 * s1)
}

/// Clamp that maps NaN to the upper bound's midpoint with the lower bound.
fn clamp(x: f64, lo: f64, hi: f64) -> f64 {
    if x.is_nan() {
        0.5 * (lo + hi)
    } else {
        x.clamp(lo, hi)
    }
}
