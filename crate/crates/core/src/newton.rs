//! Globalized reduced primal-dual Newton method for the smoothed problem.
//!
//! Each iteration eliminates the state, adjoint and dual increments and solves
//! the symmetric system `Pi (du, dw) = -g` in the control space:
//!
//! ```text
//! Pi = [ B^-1 + a D^T Q1 D + M    -a D^T Q1                ]
//!      [ -a Q1 D                  mu I + a Q1 + b E^T Q2 E ]
//! ```
//!
//! where `M` is the reduced Hessian of the misfit, assembled column by column
//! from `n` linearized state solves, the second-derivative operator `Psi`,
//! and `n` transposed solves. For TV problems only the `u` block remains.

pub mod line_search;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{linearized_with, AdjointTrajectory, StateJacobian, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{dot, norm2, norm_inf};
use crate::huber::{projected_q1, projected_q2};
use crate::objective::{cost, gradient_at, kkt_residual_at, Problem, Regularizer};

pub use line_search::{polynomial_line_search, LineSearchResult, Trial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualStepRule {
    /// `q += dq`
    Full,
    /// `q += s dq` with the accepted line-search step `s`.
    #[default]
    SameAsPrimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepNorm {
    #[default]
    Inf,
    L2,
}

impl StepNorm {
    pub fn of(&self, v: &[f64]) -> f64 {
        match self {
            Self::Inf => norm_inf(v),
            Self::L2 => norm2(v),
        }
    }
}

/// What the step tolerance is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepTest {
    /// The full Newton increment `du`; equals `|u^k - u^{k-1}|` whenever the
    /// unit step is accepted, and cannot fire on a collapsed line search.
    #[default]
    Increment,
    /// The accepted displacement `s du`.
    Displacement,
}

/// Second-order model of the misfit inside `Pi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HessianModel {
    /// `Psi = H^T S^T R^-1 S H - K`, the full Lagrangian curvature.
    #[default]
    Exact,
    /// Drop `K`, keeping the misfit block positive semidefinite.
    GaussNewton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub c1: f64,
    /// Stop once the step measure chosen by `step_test` drops below this.
    pub tol_step: f64,
    pub step_norm: StepNorm,
    pub step_test: StepTest,
    pub tol_kkt: f64,
    pub max_iter: usize,
    pub max_linesearch: usize,
    pub dual_step_rule: DualStepRule,
    pub hessian: HessianModel,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            tol_step: 1e-3,
            step_norm: StepNorm::Inf,
            step_test: StepTest::Increment,
            tol_kkt: 1e-8,
            max_iter: 100,
            max_linesearch: 40,
            dual_step_rule: DualStepRule::SameAsPrimal,
            hessian: HessianModel::Exact,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > 0.0 && self.c1 < 1.0) {
            return Err(Error::InvalidParameter(format!("c1 must lie in (0, 1), got {}", self.c1)));
        }
        if !(self.tol_step > 0.0 && self.tol_kkt > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        if self.max_linesearch == 0 {
            return Err(Error::InvalidParameter("need at least one line-search trial".into()));
        }
        Ok(())
    }
}

/// Primal-dual iterate with its state, adjoint and reduced gradient.
#[derive(Debug, Clone)]
pub struct IterateState {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub q1: Vec<f64>,
    /// Empty for TV problems.
    pub q2: Vec<f64>,
    pub trajectory: Trajectory,
    pub adjoint: AdjointTrajectory,
    pub cost: f64,
    pub grad_norm: f64,
    /// Stacked reduced gradient; `g_u` only for TV problems.
    pub gradient: Vec<f64>,
}

impl IterateState {
    /// Evaluate at `(u, w)` with consistent duals `q = h(.)`.
    pub fn new(problem: &Problem, u: &[f64], w: &[f64]) -> Result<Self> {
        let w = controls_w(problem, w);
        let c = problem.huber()?.constants();
        let (zeta, ew) = problem.reg_arguments(u, &w)?;
        let q1 = zeta.iter().map(|&t| c.grad(t)).collect();
        let q2 = ew.iter().map(|&t| c.grad(t)).collect();
        Self::with_duals(problem, u, &w, q1, q2)
    }

    pub fn with_duals(problem: &Problem, u: &[f64], w: &[f64], q1: Vec<f64>, q2: Vec<f64>) -> Result<Self> {
        let w = controls_w(problem, w);
        let g = gradient_at(problem, u, &w, cost(problem, u, &w)?)?;
        let gradient = if problem.regularizer.is_tv() { g.g_u.clone() } else { g.stacked() };
        Ok(Self {
            u: u.to_vec(),
            w,
            q1,
            q2,
            cost: g.cost.total,
            grad_norm: norm2(&gradient),
            gradient,
            trajectory: g.cost.trajectory,
            adjoint: g.adjoint,
        })
    }

    /// Number of unknowns in the reduced system.
    pub fn dim(&self) -> usize {
        self.gradient.len()
    }
}

fn controls_w(problem: &Problem, w: &[f64]) -> Vec<f64> {
    if problem.regularizer.is_tv() {
        vec![0.0; problem.grid.n() - 1]
    } else {
        w.to_vec()
    }
}

/// Projected Huber diagonals at an iterate.
fn dual_diagonals(problem: &Problem, it: &IterateState) -> Result<(Vec<f64>, Vec<f64>)> {
    let hp = problem.huber()?;
    let (zeta, ew) = problem.reg_arguments(&it.u, &it.w)?;
    let q1 = projected_q1(&zeta, &it.q1, &hp)?;
    let q2 = if problem.regularizer.is_tv() { Vec::new() } else { projected_q2(&ew, &it.q2, &hp)? };
    Ok((q1, q2))
}

/// Reduced misfit Hessian `M = Upsilon^T Xi^-T Psi Xi^-1 Upsilon`, one column
/// per unit control perturbation.
pub fn reduced_misfit_hessian(problem: &Problem, it: &IterateState, model: HessianModel) -> Result<DMatrix<f64>> {
    let n = problem.grid.n();
    let dt = problem.grid.dt();
    let jac = StateJacobian::new(&it.trajectory);
    let p = it.adjoint.stacked();
    let columns: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let dy = linearized_with(&jac, &e)?;
            let mut psi = problem.observations.apply_misfit_hessian(&dy, &problem.grid);
            if model == HessianModel::Exact {
                let kv = jac.apply_adjoint_curvature(&p, &dy)?;
                psi.iter_mut().zip(kv).for_each(|(a, b)| *a -= b);
            }
            let back = jac.solve_transpose(&psi)?;
            Ok(back[..n].iter().map(|v| v / dt).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(n, n, |i, k| columns[k][i]))
}

/// Dense reduced Newton matrix at the iterate.
pub fn assemble_pi(problem: &Problem, it: &IterateState, model: HessianModel) -> Result<DMatrix<f64>> {
    let n = problem.grid.n();
    let ops = problem.ops();
    let (q1, q2) = dual_diagonals(problem, it)?;
    let d = ops.dense_d();
    let a = problem.regularizer.first_order_weight();
    let q1m = DMatrix::from_diagonal(&DVector::from_vec(q1));
    let uu = problem.background.b_inv.to_dense() + d.transpose() * &q1m * &d * a + reduced_misfit_hessian(problem, it, model)?;
    match problem.regularizer {
        Regularizer::Tv { .. } => Ok(uu),
        Regularizer::Tgv(wt) => {
            let m = n - 1;
            let e = ops.dense_e();
            let q2m = DMatrix::from_diagonal(&DVector::from_vec(q2));
            let uw = d.transpose() * &q1m * -wt.alpha;
            let ww = DMatrix::identity(m, m) * wt.mu + &q1m * wt.alpha + e.transpose() * q2m * &e * wt.beta;
            let mut pi = DMatrix::zeros(n + m, n + m);
            pi.view_mut((0, 0), (n, n)).copy_from(&uu);
            pi.view_mut((0, n), (n, m)).copy_from(&uw);
            pi.view_mut((n, 0), (m, n)).copy_from(&uw.transpose());
            pi.view_mut((n, n), (m, m)).copy_from(&ww);
            Ok(pi)
        }
    }
}

/// Extreme eigenvalues of the symmetric part.
pub fn spectral_bounds(pi: &DMatrix<f64>) -> (f64, f64) {
    let sym = (pi + pi.transpose()) * 0.5;
    let ev = sym.symmetric_eigenvalues();
    (ev.min(), ev.max())
}

pub fn symmetry_error(pi: &DMatrix<f64>) -> f64 {
    (pi - pi.transpose()).amax()
}

/// Solve `Pi d = -g` by Cholesky. A failed factorization or a non-descent
/// result is reported with the smallest eigenvalue of `Pi`.
pub fn compute_direction(pi: &DMatrix<f64>, g: &[f64]) -> Result<Vec<f64>> {
    Error::check_len("gradient", pi.nrows(), g.len())?;
    if g.iter().all(|&x| x == 0.0) {
        return Ok(vec![0.0; g.len()]);
    }
    let non_descent = |reason: &str| Error::NonDescent { reason: reason.into(), min_eigenvalue: spectral_bounds(pi).0 };
    let chol = pi.clone().cholesky().ok_or_else(|| non_descent("reduced Newton matrix is not positive definite"))?;
    let d: Vec<f64> = chol.solve(&-DVector::from_column_slice(g)).iter().copied().collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(non_descent("direction is not finite"));
    }
    if !(dot(g, &d) < 0.0) {
        return Err(non_descent("direction is not a descent direction"));
    }
    Ok(d)
}

/// Dual increments
/// `dq1 = Q1 (D du - dw) - q1 + h(Du - w)` and `dq2 = Q2 E dw - q2 + h(Ew)`.
pub fn dual_step(problem: &Problem, it: &IterateState, du: &[f64], dw: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let ops = problem.ops();
    let c = problem.huber()?.constants();
    let (zeta, ew) = problem.reg_arguments(&it.u, &it.w)?;
    let (q1d, q2d) = dual_diagonals(problem, it)?;
    let ddu = ops.apply_d(du)?;
    let tv = problem.regularizer.is_tv();
    let dq1 = (0..zeta.len())
        .map(|i| {
            let lin = if tv { ddu[i] } else { ddu[i] - dw[i] };
            q1d[i] * lin - it.q1[i] + c.grad(zeta[i])
        })
        .collect();
    let dq2 = if tv {
        Vec::new()
    } else {
        let edw = ops.apply_e(dw)?;
        (0..ew.len()).map(|i| q2d[i] * edw[i] - it.q2[i] + c.grad(ew[i])).collect()
    };
    Ok((dq1, dq2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    /// Cost after the update.
    pub cost: f64,
    /// Gradient norm after the update.
    pub grad_norm: f64,
    pub step_length: f64,
    /// KKT residual before the update.
    pub kkt_residual: f64,
    pub min_eig: f64,
    pub max_eig: f64,
    pub symmetry_error: f64,
    /// `cos` of the angle between `-g` and the direction.
    pub angle_cos: f64,
    pub directional_derivative: f64,
    /// `|u^k - u^{k-1}|` in the configured norm.
    pub step_norm: f64,
    /// `|du|` of the Newton increment in the configured norm.
    pub increment_norm: f64,
    pub trials: Vec<Trial>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Termination {
    StepTolerance,
    KktTolerance,
    MaxIterations,
    NonDescent { reason: String, min_eigenvalue: f64 },
    LineSearchFailure { trials: usize, last_step: f64 },
    Failure { message: String },
}

impl Termination {
    pub fn converged(&self) -> bool {
        matches!(self, Self::StepTolerance | Self::KktTolerance)
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: Vec<IterationLog>,
    pub final_state: IterateState,
    pub converged: bool,
    pub termination: Termination,
    /// `u^0, u^1, ..., u^K`.
    pub u_history: Vec<Vec<f64>>,
    /// Ratios against the final iterate, see [`residual_ratio_diagnostics`].
    pub residual_ratios: Vec<f64>,
}

impl SolveReport {
    pub fn iteration_count(&self) -> usize {
        self.iterations.len()
    }

    pub fn costs(&self) -> Vec<f64> {
        self.iterations.iter().map(|l| l.cost).collect()
    }
}

/// `|u^k - u*| / |u^{k-1} - u*|` for `k = 1..K-1`; the trivially zero entry at
/// `k = K` (when `u* = u^K`) is left out.
pub fn residual_ratios(u_history: &[Vec<f64>], u_star: &[f64]) -> Vec<f64> {
    let dist: Vec<f64> = u_history
        .iter()
        .map(|u| norm2(&u.iter().zip(u_star).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    // iterates that already sit on u* carry no rate information
    let k_max = u_history.len().saturating_sub(1);
    (1..k_max).take_while(|&k| dist[k - 1] > 0.0).map(|k| dist[k] / dist[k - 1]).collect()
}

pub fn residual_ratio_diagnostics(report: &SolveReport, u_star: &[f64]) -> Vec<f64> {
    residual_ratios(&report.u_history, u_star)
}

/// Run the Newton iteration from `(u0, w0)`. Breakdowns end the run with
/// `converged = false` instead of an error; only invalid input is an error.
pub fn solve(problem: &Problem, config: &SolverConfig, u0: &[f64], w0: &[f64]) -> Result<SolveReport> {
    problem.validate()?;
    config.validate()?;
    Error::check_len("u0", problem.grid.n(), u0.len())?;
    Error::check_len("w0", problem.grid.n() - 1, w0.len())?;
    let mut it = IterateState::new(problem, u0, w0)?;
    let mut logs = Vec::new();
    let mut history = vec![it.u.clone()];
    let termination = loop {
        if logs.len() >= config.max_iter {
            break Termination::MaxIterations;
        }
        match newton_iteration(problem, config, &it, logs.len() + 1) {
            Ok(Step::Converged) => break Termination::KktTolerance,
            Ok(Step::Taken(next, log)) => {
                let measured = match config.step_test {
                    StepTest::Increment => log.increment_norm,
                    StepTest::Displacement => log.step_norm,
                };
                let done = measured < config.tol_step;
                it = *next;
                history.push(it.u.clone());
                logs.push(log);
                if done {
                    break Termination::StepTolerance;
                }
            }
            Err(Error::NonDescent { reason, min_eigenvalue }) => break Termination::NonDescent { reason, min_eigenvalue },
            Err(Error::LineSearchFailure { trials, last_step }) => {
                break Termination::LineSearchFailure { trials, last_step }
            }
            Err(e) => break Termination::Failure { message: e.to_string() },
        }
    };
    let u_star = it.u.clone();
    Ok(SolveReport {
        residual_ratios: residual_ratios(&history, &u_star),
        converged: termination.converged(),
        iterations: logs,
        final_state: it,
        termination,
        u_history: history,
    })
}

enum Step {
    Converged,
    Taken(Box<IterateState>, IterationLog),
}

fn newton_iteration(problem: &Problem, config: &SolverConfig, it: &IterateState, iter: usize) -> Result<Step> {
    let n = problem.grid.n();
    let tv = problem.regularizer.is_tv();
    let kkt = kkt_residual_at(problem, &it.u, &it.w, &it.q1, &it.q2, it.adjoint.level(0))?;
    if kkt < config.tol_kkt {
        return Ok(Step::Converged);
    }
    let pi = assemble_pi(problem, it, config.hessian)?;
    let (min_eig, max_eig) = spectral_bounds(&pi);
    let d = compute_direction(&pi, &it.gradient)?;
    let (du, dw) = if tv { (d.clone(), vec![0.0; n - 1]) } else { (d[..n].to_vec(), d[n..].to_vec()) };
    let (dq1, dq2) = dual_step(problem, it, &du, &dw)?;
    let slope = dot(&it.gradient, &d);
    let angle_cos = -slope / (it.grad_norm * norm2(&d));

    let along = |s: f64| {
        let u: Vec<f64> = it.u.iter().zip(&du).map(|(a, b)| a + s * b).collect();
        let w: Vec<f64> = it.w.iter().zip(&dw).map(|(a, b)| a + s * b).collect();
        (u, w)
    };
    let ls = polynomial_line_search(
        |s| {
            let (u, w) = along(s);
            cost(problem, &u, &w).map_or(f64::NAN, |c| c.total)
        },
        it.cost,
        slope,
        config.c1,
        config.max_linesearch,
    )?;
    let s = ls.step;
    let (u, w) = along(s);
    let ds = match config.dual_step_rule {
        DualStepRule::Full => 1.0,
        DualStepRule::SameAsPrimal => s,
    };
    let q1 = it.q1.iter().zip(&dq1).map(|(a, b)| a + ds * b).collect();
    let q2 = it.q2.iter().zip(&dq2).map(|(a, b)| a + ds * b).collect();
    let next = IterateState::with_duals(problem, &u, &w, q1, q2)?;
    let step_norm = config.step_norm.of(&du.iter().map(|x| s * x).collect::<Vec<_>>());
    let increment_norm = config.step_norm.of(&du);
    let log = IterationLog {
        iter,
        cost: next.cost,
        grad_norm: next.grad_norm,
        step_length: s,
        kkt_residual: kkt,
        min_eig,
        max_eig,
        symmetry_error: symmetry_error(&pi),
        angle_cos,
        directional_derivative: slope,
        step_norm,
        increment_norm,
        trials: ls.trials,
    };
    Ok(Step::Taken(Box::new(next), log))
}
