//! Single runs, TV baselines and parameter sweeps over a scenario.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::ssim::ssim;
use crate::error::{Error, Result};
use crate::huber::RegWeights;
use crate::newton::{solve, IterationLog, SolveReport, SolverConfig, Termination};
use crate::objective::Regularizer;

/// Initial control for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Start {
    Constant(f64),
    Background,
    /// Independent draws from `U[low, high)`.
    Uniform { low: f64, high: f64, seed: u64 },
    Explicit(Vec<f64>),
}

impl Default for Start {
    fn default() -> Self {
        Self::Constant(1.0)
    }
}

impl Start {
    pub fn resolve(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        let n = scenario.problem.grid.n();
        Ok(match self {
            Self::Constant(c) => vec![*c; n],
            Self::Background => scenario.problem.background.u_b.clone(),
            Self::Uniform { low, high, seed } => {
                if !(low.is_finite() && high.is_finite() && low < high) {
                    return Err(Error::InvalidParameter(format!("empty uniform range [{low}, {high})")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..n).map(|_| rng.random_range(*low..*high)).collect()
            }
            Self::Explicit(u) => {
                Error::check_len("initial control", n, u.len())?;
                u.clone()
            }
        })
    }
}

/// One row of a results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu: f64,
    pub iterations: usize,
    pub ssim: f64,
    pub final_cost: f64,
    pub converged: bool,
}

/// Everything needed to replay a run's diagnostics and plot it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub label: String,
    pub regularizer: Regularizer,
    pub gamma: f64,
    pub termination: Termination,
    pub iterations: Vec<IterationLog>,
    pub residual_ratios: Vec<f64>,
    pub u_history: Vec<Vec<f64>>,
    pub x: Vec<f64>,
    pub u_exact: Vec<f64>,
    pub u_background: Vec<f64>,
    pub u_final: Vec<f64>,
    pub ssim: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub row: MetricsRow,
    pub log: RunLog,
    pub report: SolveReport,
}

/// Solve the scenario's problem with the given regularizer.
pub fn run(scenario: &Scenario, regularizer: Regularizer, gamma: f64, config: &SolverConfig, start: &Start, label: &str) -> Result<RunOutcome> {
    let problem = scenario.problem.with_regularizer(regularizer, gamma);
    let u0 = start.resolve(scenario)?;
    let report = solve(&problem, config, &u0, &vec![0.0; problem.grid.n() - 1])?;
    let u = &report.final_state.u;
    let score = ssim(u, &scenario.u_exact)?;
    let (alpha, beta, mu) = match regularizer {
        Regularizer::Tgv(w) => (w.alpha, w.beta, w.mu),
        Regularizer::Tv { beta } => (0.0, beta, 0.0),
    };
    let row = MetricsRow {
        alpha,
        beta,
        gamma,
        mu,
        iterations: report.iteration_count(),
        ssim: score,
        final_cost: report.final_state.cost,
        converged: report.converged,
    };
    let log = RunLog {
        label: label.to_string(),
        regularizer,
        gamma,
        termination: report.termination.clone(),
        iterations: report.iterations.clone(),
        residual_ratios: report.residual_ratios.clone(),
        u_history: report.u_history.clone(),
        x: problem.grid.nodes(),
        u_exact: scenario.u_exact.clone(),
        u_background: problem.background.u_b.clone(),
        u_final: u.clone(),
        ssim: score,
    };
    Ok(RunOutcome { row, log, report })
}

pub fn run_tgv(scenario: &Scenario, weights: RegWeights, gamma: f64, config: &SolverConfig, start: &Start) -> Result<RunOutcome> {
    let label = format!("tgv_a{}_b{}_g{:e}_mu{:e}", weights.alpha, weights.beta, gamma, weights.mu);
    run(scenario, Regularizer::Tgv(weights), gamma, config, start, &label)
}

/// TV baseline: `w` frozen at zero, only `beta_tv sum H(Du)` regularizes.
pub fn run_tv(scenario: &Scenario, beta_tv: f64, gamma: f64, config: &SolverConfig, start: &Start) -> Result<RunOutcome> {
    let label = format!("tv_b{}_g{:e}", beta_tv, gamma);
    run(scenario, Regularizer::Tv { beta: beta_tv }, gamma, config, start, &label)
}

/// `beta / alpha` inside `(0.75/n, 1.5/n)`.
pub fn in_heuristic_band(alpha: f64, beta: f64, n: usize) -> bool {
    let r = beta / alpha * n as f64;
    r > 0.75 && r < 1.5
}

/// Betas for a given alpha spanning the heuristic band.
pub fn heuristic_betas(alpha: f64, n: usize, count: usize) -> Vec<f64> {
    let (lo, hi) = (0.75 * alpha / n as f64, 1.5 * alpha / n as f64);
    (1..=count).map(|k| lo + (hi - lo) * k as f64 / (count + 1) as f64).collect()
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<MetricsRow>,
    pub logs: Vec<RunLog>,
    /// Index of the row with the highest SSIM among converged runs.
    pub best: Option<usize>,
    pub in_band: Vec<bool>,
}

/// Grid sweep over `alpha x beta` at fixed `gamma`, `mu`; runs in parallel.
pub fn sweep(
    scenario: &Scenario,
    alphas: &[f64],
    betas: &[f64],
    gamma: f64,
    mu: f64,
    config: &SolverConfig,
    start: &Start,
) -> Result<SweepResult> {
    let points: Vec<(f64, f64)> = alphas.iter().flat_map(|&a| betas.iter().map(move |&b| (a, b))).collect();
    let outcomes = points
        .par_iter()
        .map(|&(a, b)| run_tgv(scenario, RegWeights::new(a, b, mu)?, gamma, config, start))
        .collect::<Result<Vec<_>>>()?;
    let n = scenario.problem.grid.n();
    let in_band = points.iter().map(|&(a, b)| in_heuristic_band(a, b, n)).collect();
    let (rows, logs): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|o| (o.row, o.log)).unzip();
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.converged)
        .max_by(|a, b| a.1.ssim.total_cmp(&b.1.ssim))
        .map(|(i, _)| i);
    Ok(SweepResult { rows, logs, best, in_band })
}

/// TV sweep over `beta_tv`.
pub fn sweep_tv(scenario: &Scenario, betas: &[f64], gamma: f64, config: &SolverConfig, start: &Start) -> Result<SweepResult> {
    let outcomes = betas
        .par_iter()
        .map(|&b| run_tv(scenario, b, gamma, config, start))
        .collect::<Result<Vec<_>>>()?;
    let (rows, logs): (Vec<_>, Vec<_>) = outcomes.into_iter().map(|o| (o.row, o.log)).unzip();
    let best = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.converged)
        .max_by(|a, b| a.1.ssim.total_cmp(&b.1.ssim))
        .map(|(i, _)| i);
    let in_band = vec![false; rows.len()];
    Ok(SweepResult { rows, logs, best, in_band })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band() {
        assert!(in_heuristic_band(23.5, 0.611, 50));
        assert!(!in_heuristic_band(10.0, 0.1, 50));
        assert!(!in_heuristic_band(10.0, 0.5, 50));
        for b in heuristic_betas(2.5, 50, 5) {
            assert!(in_heuristic_band(2.5, b, 50));
        }
    }
}
