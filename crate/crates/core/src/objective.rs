//! The assimilation problem: observations, background, regularizer, and the
//! reduced cost / gradient / KKT residual of the smoothed problem.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{solve_adjoint, solve_state, AdjointTrajectory, SchemeConfig, SourceTerm, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{dot, norm_inf, DifferenceOperators, Grid};
use crate::huber::{tgv_arguments, HuberParams, RegWeights};

/// Inverse of a covariance matrix, diagonal or dense.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InverseCovariance {
    Diagonal(Vec<f64>),
    /// Row-major `dim x dim`.
    Dense { dim: usize, values: Vec<f64> },
}

impl InverseCovariance {
    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        Self::Diagonal(vec![value; dim])
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Diagonal(d) => d.len(),
            Self::Dense { dim, .. } => *dim,
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        match self {
            Self::Diagonal(d) => d.iter().zip(v).map(|(a, b)| a * b).collect(),
            Self::Dense { dim, values } => values.chunks(*dim).map(|row| dot(row, v)).collect(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            Self::Diagonal(d) => DMatrix::from_diagonal(&DVector::from_column_slice(d)),
            Self::Dense { dim, values } => DMatrix::from_row_slice(*dim, *dim, values),
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            Self::Diagonal(d) => d.iter().copied().fold(f64::INFINITY, f64::min),
            Self::Dense { .. } => self.to_dense().symmetric_eigenvalues().min(),
        }
    }

    fn validate(&self, what: &str, expected_dim: usize) -> Result<()> {
        if self.dim() != expected_dim {
            return Err(Error::InvalidParameter(format!(
                "{what}: expected dimension {expected_dim}, got {}",
                self.dim()
            )));
        }
        match self {
            Self::Diagonal(d) => {
                if let Some(x) = d.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                    return Err(Error::InvalidParameter(format!("{what}: diagonal entry {x} is not positive")));
                }
            }
            Self::Dense { dim, values } => {
                if values.len() != dim * dim {
                    return Err(Error::InvalidParameter(format!("{what}: dense storage has wrong size")));
                }
                let m = self.to_dense();
                if (&m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
                    return Err(Error::InvalidParameter(format!("{what}: matrix is not symmetric")));
                }
                if m.cholesky().is_none() {
                    return Err(Error::InvalidParameter(format!("{what}: matrix is not positive definite")));
                }
            }
        }
        Ok(())
    }
}

/// Point observations of the trajectory: `S H y` picks the listed
/// `(time level, node)` entries, both 0-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub selection: Vec<(usize, usize)>,
    pub z: Vec<f64>,
    pub r_inv: InverseCovariance,
}

impl ObservationSet {
    pub fn len(&self) -> usize {
        self.selection.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selection.is_empty()
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        Error::check_len("observations", self.selection.len(), self.z.len())?;
        if let Some(&(t, i)) = self.selection.iter().find(|&&(t, i)| t >= grid.nt() || i >= grid.n()) {
            return Err(Error::InvalidParameter(format!("observation ({t}, {i}) outside the space-time grid")));
        }
        if self.z.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter("observation values must be finite".into()));
        }
        self.r_inv.validate("observation inverse covariance", self.len())
    }

    /// `S H y`.
    pub fn observe(&self, traj: &Trajectory) -> Vec<f64> {
        self.selection.iter().map(|&(t, i)| traj.at(t, i)).collect()
    }

    pub fn residual(&self, traj: &Trajectory) -> Vec<f64> {
        self.observe(traj).iter().zip(&self.z).map(|(a, b)| a - b).collect()
    }

    /// Scatter `S^T H^T r` into a stacked space-time vector.
    fn scatter(&self, r: &[f64], grid: &Grid) -> Vec<f64> {
        let mut out = vec![0.0; grid.state_len()];
        for (&(t, i), v) in self.selection.iter().zip(r) {
            out[t * grid.n() + i] += v;
        }
        out
    }

    /// `H^T S^T R^{-1} (S H y - z)`.
    pub fn misfit_gradient(&self, traj: &Trajectory) -> Vec<f64> {
        self.scatter(&self.r_inv.apply(&self.residual(traj)), traj.grid())
    }

    /// `H^T S^T R^{-1} S H v` for a stacked space-time `v`.
    pub fn apply_misfit_hessian(&self, v: &[f64], grid: &Grid) -> Vec<f64> {
        let picked: Vec<f64> = self.selection.iter().map(|&(t, i)| v[t * grid.n() + i]).collect();
        self.scatter(&self.r_inv.apply(&picked), grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Background {
    pub u_b: Vec<f64>,
    pub b_inv: InverseCovariance,
}

/// Regularization of the control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularizer {
    /// `alpha sum H(Du - w) + beta sum H(Ew) + mu/2 |w|^2`, optimized over `(u, w)`.
    Tgv(RegWeights),
    /// `beta sum H(Du)`; the auxiliary field is frozen at zero.
    Tv { beta: f64 },
}

impl Regularizer {
    pub fn is_tv(&self) -> bool {
        matches!(self, Self::Tv { .. })
    }

    /// Weight in front of the first-order term.
    pub fn first_order_weight(&self) -> f64 {
        match self {
            Self::Tgv(w) => w.alpha,
            Self::Tv { beta } => *beta,
        }
    }
}

/// Where a problem came from; informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemOrigin {
    pub experiment: String,
    pub seed: u64,
    pub noise_sigma: f64,
    pub obs_strategy: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub grid: Grid,
    pub scheme: SchemeConfig,
    pub observations: ObservationSet,
    pub background: Background,
    pub regularizer: Regularizer,
    pub gamma: f64,
    pub source: SourceTerm,
    /// Whether `D` and `E` carry the `1/h` factor.
    pub scale_by_h: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub origin: Option<ProblemOrigin>,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        let n = self.grid.n();
        self.observations.validate(&self.grid)?;
        Error::check_len("background", n, self.background.u_b.len())?;
        self.background.b_inv.validate("background inverse covariance", n)?;
        HuberParams::new(self.gamma)?;
        match self.regularizer {
            Regularizer::Tgv(w) => w.validate()?,
            Regularizer::Tv { beta } => {
                if !(beta.is_finite() && beta >= 0.0) {
                    return Err(Error::InvalidParameter(format!("tv weight must be nonnegative, got {beta}")));
                }
            }
        }
        Error::check_len("source levels", self.grid.nt() - 1, self.source.levels().len())?;
        for l in self.source.levels() {
            Error::check_len("source level", n, l.len())?;
        }
        Ok(())
    }

    pub fn ops(&self) -> DifferenceOperators {
        DifferenceOperators::new(&self.grid, self.scale_by_h)
    }

    pub fn huber(&self) -> Result<HuberParams> {
        HuberParams::new(self.gamma)
    }

    pub fn with_regularizer(&self, regularizer: Regularizer, gamma: f64) -> Self {
        Self { regularizer, gamma, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem serializes")
    }

    pub fn from_json(s: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|source| Error::Io { path: path.into(), source })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.into(), source })?;
        let p = Self::from_json(&text).map_err(|source| Error::Json { path: path.into(), source })?;
        p.validate()?;
        Ok(p)
    }

    pub fn solve_state(&self, u: &[f64]) -> Result<Trajectory> {
        solve_state(u, &self.source, &self.grid, &self.scheme)
    }

    /// Arguments of the two Huber sums: `(Du - w, Ew)` for TGV, `(Du, [])` for TV.
    pub fn reg_arguments(&self, u: &[f64], w: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let ops = self.ops();
        match self.regularizer {
            Regularizer::Tgv(_) => tgv_arguments(u, w, &ops),
            Regularizer::Tv { .. } => Ok((ops.apply_d(u)?, Vec::new())),
        }
    }

    fn check_controls(&self, u: &[f64], w: &[f64]) -> Result<()> {
        Error::check_len("u", self.grid.n(), u.len())?;
        Error::check_len("w", self.grid.n() - 1, w.len())
    }
}

/// Cost split into its terms.
#[derive(Debug, Clone)]
pub struct CostEval {
    pub total: f64,
    pub misfit: f64,
    pub background: f64,
    pub tikhonov: f64,
    pub regularizer: f64,
    pub trajectory: Trajectory,
}

fn gaussian_terms(problem: &Problem, u: &[f64], traj: &Trajectory) -> (f64, f64) {
    let r = problem.observations.residual(traj);
    let misfit = 0.5 * dot(&r, &problem.observations.r_inv.apply(&r));
    let du: Vec<f64> = u.iter().zip(&problem.background.u_b).map(|(a, b)| a - b).collect();
    let background = 0.5 * dot(&du, &problem.background.b_inv.apply(&du));
    (misfit, background)
}

/// `1/2 |SHy - z|^2_{R^-1} + 1/2 |u - u_b|^2_{B^-1} + mu/2 |w|^2 + reg`, with
/// Huber-smoothed regularizer.
pub fn cost(problem: &Problem, u: &[f64], w: &[f64]) -> Result<CostEval> {
    problem.check_controls(u, w)?;
    let traj = problem.solve_state(u)?;
    cost_with(problem, u, w, traj, true)
}

/// Same as [`cost`] with the exact absolute value in place of the Huber function.
pub fn cost_unsmoothed(problem: &Problem, u: &[f64], w: &[f64]) -> Result<CostEval> {
    problem.check_controls(u, w)?;
    let traj = problem.solve_state(u)?;
    cost_with(problem, u, w, traj, false)
}

fn cost_with(problem: &Problem, u: &[f64], w: &[f64], traj: Trajectory, smoothed: bool) -> Result<CostEval> {
    let (misfit, background) = gaussian_terms(problem, u, &traj);
    let c = problem.huber()?.constants();
    let phi = |t: f64| if smoothed { c.value(t) } else { t.abs() };
    let (zeta, ew) = problem.reg_arguments(u, w)?;
    let (tikhonov, regularizer) = match problem.regularizer {
        Regularizer::Tgv(wt) => (
            0.5 * wt.mu * dot(w, w),
            wt.alpha * zeta.iter().map(|&t| phi(t)).sum::<f64>() + wt.beta * ew.iter().map(|&t| phi(t)).sum::<f64>(),
        ),
        Regularizer::Tv { beta } => (0.0, beta * zeta.iter().map(|&t| phi(t)).sum::<f64>()),
    };
    Ok(CostEval {
        total: misfit + background + tikhonov + regularizer,
        misfit,
        background,
        tikhonov,
        regularizer,
        trajectory: traj,
    })
}

/// Reduced gradient together with the state and adjoint it was computed from.
#[derive(Debug, Clone)]
pub struct GradientEval {
    pub g_u: Vec<f64>,
    /// Zero for TV problems.
    pub g_w: Vec<f64>,
    pub cost: CostEval,
    pub adjoint: AdjointTrajectory,
}

impl GradientEval {
    pub fn stacked(&self) -> Vec<f64> {
        [self.g_u.as_slice(), self.g_w.as_slice()].concat()
    }
}

pub fn reduced_gradient(problem: &Problem, u: &[f64], w: &[f64]) -> Result<GradientEval> {
    let eval = cost(problem, u, w)?;
    gradient_at(problem, u, w, eval)
}

/// Gradient given an already evaluated cost (reuses its trajectory).
pub fn gradient_at(problem: &Problem, u: &[f64], w: &[f64], eval: CostEval) -> Result<GradientEval> {
    let traj = &eval.trajectory;
    let adjoint = solve_adjoint(traj, &problem.observations.misfit_gradient(traj))?;
    let c = problem.huber()?.constants();
    let (zeta, ew) = problem.reg_arguments(u, w)?;
    let h_zeta: Vec<f64> = zeta.iter().map(|&t| c.grad(t)).collect();
    let h_ew: Vec<f64> = ew.iter().map(|&t| c.grad(t)).collect();
    let (g_u, g_w) = stationarity(problem, u, w, adjoint.level(0), &h_zeta, &h_ew)?;
    Ok(GradientEval { g_u, g_w, cost: eval, adjoint })
}

/// `(dL/du, dL/dw)` with the Huber derivatives replaced by `q1`, `q2`.
fn stationarity(problem: &Problem, u: &[f64], w: &[f64], p0: &[f64], q1: &[f64], q2: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let ops = problem.ops();
    let dt = problem.grid.dt();
    let du: Vec<f64> = u.iter().zip(&problem.background.u_b).map(|(a, b)| a - b).collect();
    let bdu = problem.background.b_inv.apply(&du);
    let a = problem.regularizer.first_order_weight();
    let dtq = ops.apply_dt(q1)?;
    let g_u = (0..u.len()).map(|i| p0[i] / dt + bdu[i] + a * dtq[i]).collect();
    let g_w = match problem.regularizer {
        Regularizer::Tgv(wt) => {
            let etq = ops.apply_et(q2)?;
            (0..w.len()).map(|i| wt.mu * w[i] - wt.alpha * q1[i] + wt.beta * etq[i]).collect()
        }
        Regularizer::Tv { .. } => vec![0.0; w.len()],
    };
    Ok((g_u, g_w))
}

/// Max-norm of the stationarity residuals in `u` and `w` (with the duals in
/// place of the Huber derivatives) and of the dual consistency residuals
/// `q1 - h(Du - w)`, `q2 - h(Ew)`. State and adjoint equations are solved
/// exactly and contribute nothing.
pub fn kkt_residual(problem: &Problem, u: &[f64], w: &[f64], q1: &[f64], q2: &[f64]) -> Result<f64> {
    let traj = problem.solve_state(u)?;
    let adjoint = solve_adjoint(&traj, &problem.observations.misfit_gradient(&traj))?;
    kkt_residual_at(problem, u, w, q1, q2, adjoint.level(0))
}

pub(crate) fn kkt_residual_at(problem: &Problem, u: &[f64], w: &[f64], q1: &[f64], q2: &[f64], p0: &[f64]) -> Result<f64> {
    problem.check_controls(u, w)?;
    Error::check_len("q1", problem.grid.n() - 1, q1.len())?;
    let c = problem.huber()?.constants();
    let (zeta, ew) = problem.reg_arguments(u, w)?;
    let tv = problem.regularizer.is_tv();
    if !tv {
        Error::check_len("q2", problem.grid.n() - 1, q2.len())?;
    }
    let (g_u, g_w) = stationarity(problem, u, w, p0, q1, if tv { &[] } else { q2 })?;
    let r1 = zeta.iter().zip(q1).map(|(&t, q)| q - c.grad(t));
    let r2 = ew.iter().zip(q2).map(|(&t, q)| q - c.grad(t));
    let all: Vec<f64> = g_u.into_iter().chain(g_w).chain(r1).chain(r2).collect();
    Ok(norm_inf(&all))
}

/// Negative log posterior of `x = (u, w)` up to nothing: Gaussian likelihood
/// and background with joint covariance `G = diag(R, B)`, a Laplace prior
/// `exp(-theta |Dx|_1)` on the weighted first/second-order differences, and a
/// Gaussian factor `N(0, mu^{-1} I)` on `w` when `mu > 0`. All normalizing
/// constants are included so that they demonstrably cancel in differences.
pub fn neg_log_posterior(problem: &Problem, u: &[f64], w: &[f64], theta: f64) -> Result<f64> {
    problem.check_controls(u, w)?;
    let traj = problem.solve_state(u)?;
    let (n, m) = (problem.grid.n(), problem.observations.len());

    // innovation vector and block inverse covariance, assembled densely
    let mut r = problem.observations.residual(&traj);
    r.extend(u.iter().zip(&problem.background.u_b).map(|(a, b)| a - b));
    let mut g_inv = DMatrix::zeros(m + n, m + n);
    g_inv.view_mut((0, 0), (m, m)).copy_from(&problem.observations.r_inv.to_dense());
    g_inv.view_mut((m, m), (n, n)).copy_from(&problem.background.b_inv.to_dense());
    let r = DVector::from_vec(r);
    let quad = (r.transpose() * &g_inv * &r)[(0, 0)];
    let log_det_g = -g_inv.clone().cholesky().expect("validated SPD").l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
    let gauss = 0.5 * quad + 0.5 * log_det_g + 0.5 * (m + n) as f64 * (2.0 * std::f64::consts::PI).ln();

    // weighted difference operator acting on x = (u, w)
    let ops = problem.ops();
    let d = ops.dense_d();
    let (dx, tikhonov) = match problem.regularizer {
        Regularizer::Tgv(wt) => {
            let e = ops.dense_e();
            let mut big = DMatrix::zeros(2 * (n - 1), 2 * n - 1);
            big.view_mut((0, 0), (n - 1, n)).copy_from(&(d * wt.alpha));
            big.view_mut((0, n), (n - 1, n - 1)).copy_from(&(DMatrix::identity(n - 1, n - 1) * -wt.alpha));
            big.view_mut((n - 1, n), (n - 1, n - 1)).copy_from(&(e * wt.beta));
            let x = DVector::from_iterator(2 * n - 1, u.iter().chain(w).copied());
            let tik = if wt.mu > 0.0 {
                0.5 * wt.mu * dot(w, w) - 0.5 * (n - 1) as f64 * (wt.mu / (2.0 * std::f64::consts::PI)).ln()
            } else {
                0.0
            };
            (big * x, tik)
        }
        Regularizer::Tv { beta } => (d * beta * DVector::from_column_slice(u), 0.0),
    };
    let laplace = theta * dx.iter().map(|v| v.abs()).sum::<f64>() - dx.len() as f64 * (theta / 2.0).ln();
    Ok(gauss + laplace + tikhonov)
}

/// Differences `(J(x1) - J(x2), -log p(x1) + log p(x2))` of the unsmoothed
/// cost and the negative log posterior.
pub fn map_equivalence_check(problem: &Problem, x1: (&[f64], &[f64]), x2: (&[f64], &[f64])) -> Result<(f64, f64)> {
    map_equivalence_check_scaled(problem, x1, x2, 1.0)
}

/// As [`map_equivalence_check`] with Laplace scale `theta`; only `theta = 1`
/// reproduces the cost.
pub fn map_equivalence_check_scaled(
    problem: &Problem,
    x1: (&[f64], &[f64]),
    x2: (&[f64], &[f64]),
    theta: f64,
) -> Result<(f64, f64)> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(Error::InvalidParameter(format!("laplace scale must be positive, got {theta}")));
    }
    let dc = cost_unsmoothed(problem, x1.0, x1.1)?.total - cost_unsmoothed(problem, x2.0, x2.1)?.total;
    let dp = neg_log_posterior(problem, x1.0, x1.1, theta)? - neg_log_posterior(problem, x2.0, x2.1, theta)?;
    Ok((dc, dp))
}
