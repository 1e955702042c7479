//! Semi-implicit Euler discretization of the inviscid Burgers equation
//!
//! ```text
//! (y^{j+1} - y^j) / dt + diag(y^j) U y^{j+1} = f^{j+1},   y^1 = u,
//! ```
//!
//! with homogeneous Dirichlet data folded into the stencils (zero ghosts at
//! both ends). Stacking the levels gives `e(y, u) = 0`; this module owns the
//! forward solve, its Jacobian `Xi = e_y` (applied, inverted and transposed
//! matrix-free), and the second derivative of `p^T e` needed by Newton.
//!
//! Level `j` (0-based, `j >= 1`) of `e` is
//! `(y^j - y^{j-1})/dt + diag(y^{j-1}) U_j y^j - f^j`, where `U_j` is the
//! advection stencil selected from `y^{j-1}`. Its derivative therefore has a
//! diagonal block `I/dt + diag(y^{j-1}) U_j` and a sub-diagonal block
//! `-I/dt + diag(U_j y^j)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{norm2, Grid};

/// Pivots of the per-level systems below this magnitude are treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvectionStencil {
    /// `(y_{i+1} - y_i)/h` everywhere.
    #[default]
    Forward,
    /// Backward difference where the transporting velocity is `>= 0`,
    /// forward difference where it is negative.
    Upwind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SchemeConfig {
    pub stencil: AdvectionStencil,
}

impl SchemeConfig {
    pub fn forward() -> Self {
        Self { stencil: AdvectionStencil::Forward }
    }

    pub fn upwind() -> Self {
        Self { stencil: AdvectionStencil::Upwind }
    }
}

/// Forcing for levels `2..=N_t`; the first level of the stacked right-hand
/// side is the control itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceTerm {
    levels: Vec<Vec<f64>>,
}

impl SourceTerm {
    pub fn zero(grid: &Grid) -> Self {
        Self { levels: vec![vec![0.0; grid.n()]; grid.nt() - 1] }
    }

    pub fn new(grid: &Grid, levels: Vec<Vec<f64>>) -> Result<Self> {
        Error::check_len("source levels", grid.nt() - 1, levels.len())?;
        for l in &levels {
            Error::check_len("source level", grid.n(), l.len())?;
        }
        Ok(Self { levels })
    }

    /// Forcing entering time level `j` (0-based, `j >= 1`).
    pub fn at_level(&self, j: usize) -> &[f64] {
        &self.levels[j - 1]
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn is_zero(&self) -> bool {
        self.levels.iter().flatten().all(|&x| x == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Forward,
    Backward,
}

fn sides(y_prev: &[f64], stencil: AdvectionStencil) -> Vec<Side> {
    match stencil {
        AdvectionStencil::Forward => vec![Side::Forward; y_prev.len()],
        AdvectionStencil::Upwind => y_prev
            .iter()
            .map(|&v| if v >= 0.0 { Side::Backward } else { Side::Forward })
            .collect(),
    }
}

fn apply_u(v: &[f64], sides: &[Side], inv_h: f64) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| match sides[i] {
            Side::Forward => (v.get(i + 1).copied().unwrap_or(0.0) - v[i]) * inv_h,
            Side::Backward => (v[i] - if i > 0 { v[i - 1] } else { 0.0 }) * inv_h,
        })
        .collect()
}

fn apply_ut(v: &[f64], sides: &[Side], inv_h: f64) -> Vec<f64> {
    let n = v.len();
    let mut out = vec![0.0; n];
    for i in 0..n {
        match sides[i] {
            Side::Forward => {
                out[i] -= v[i] * inv_h;
                if i + 1 < n {
                    out[i + 1] += v[i] * inv_h;
                }
            }
            Side::Backward => {
                out[i] += v[i] * inv_h;
                if i > 0 {
                    out[i - 1] -= v[i] * inv_h;
                }
            }
        }
    }
    out
}

/// Tridiagonal matrix; `sub[0]` and `sup[n-1]` are unused.
#[derive(Debug, Clone)]
struct Tridiagonal {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
}

impl Tridiagonal {
    /// `I + dt diag(y_prev) U`.
    fn step_matrix(y_prev: &[f64], sides: &[Side], dt: f64, inv_h: f64) -> Self {
        let n = y_prev.len();
        let mut t = Self { sub: vec![0.0; n], diag: vec![1.0; n], sup: vec![0.0; n] };
        for i in 0..n {
            let c = dt * y_prev[i] * inv_h;
            match sides[i] {
                Side::Forward => {
                    t.diag[i] -= c;
                    if i + 1 < n {
                        t.sup[i] = c;
                    }
                }
                Side::Backward => {
                    t.diag[i] += c;
                    if i > 0 {
                        t.sub[i] = -c;
                    }
                }
            }
        }
        t
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.sub[i] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.sup[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    fn transpose(&self) -> Self {
        let n = self.diag.len();
        let mut t = Self { sub: vec![0.0; n], diag: self.diag.clone(), sup: vec![0.0; n] };
        for i in 0..n {
            if i > 0 {
                t.sub[i] = self.sup[i - 1];
            }
            if i + 1 < n {
                t.sup[i] = self.sub[i + 1];
            }
        }
        t
    }

    /// Thomas algorithm; for a bidiagonal matrix this is plain substitution
    /// and the pivots are the diagonal entries. Returns the failing
    /// `(index, pivot)` on a vanishing pivot.
    fn solve(&self, rhs: &[f64]) -> std::result::Result<Vec<f64>, (usize, f64)> {
        let n = rhs.len();
        let mut cp = vec![0.0; n];
        let mut dp = vec![0.0; n];
        for i in 0..n {
            let (c_prev, d_prev) = if i > 0 { (cp[i - 1], dp[i - 1]) } else { (0.0, 0.0) };
            let pivot = self.diag[i] - self.sub[i] * c_prev;
            if !(pivot.abs() >= PIVOT_TOL) {
                return Err((i, pivot));
            }
            cp[i] = self.sup[i] / pivot;
            dp[i] = (rhs[i] - self.sub[i] * d_prev) / pivot;
        }
        let mut x = dp;
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= cp[i] * x[i + 1];
        }
        Ok(x)
    }
}

/// Advance one time level: solve `(I + dt diag(y_prev) U) y_next = dt f_next + y_prev`.
pub fn step_state(y_prev: &[f64], f_next: &[f64], grid: &Grid, scheme: &SchemeConfig) -> Result<Vec<f64>> {
    Error::check_len("previous level", grid.n(), y_prev.len())?;
    Error::check_len("source level", grid.n(), f_next.len())?;
    step_level(y_prev, f_next, grid, scheme, 1)
}

fn step_level(y_prev: &[f64], f_next: &[f64], grid: &Grid, scheme: &SchemeConfig, level: usize) -> Result<Vec<f64>> {
    let dt = grid.dt();
    let s = sides(y_prev, scheme.stencil);
    let m = Tridiagonal::step_matrix(y_prev, &s, dt, 1.0 / grid.h());
    let rhs: Vec<f64> = y_prev.iter().zip(f_next).map(|(y, f)| y + dt * f).collect();
    m.solve(&rhs).map_err(|(index, pivot)| Error::StepFailure { level, index, pivot })
}

/// Full space-time state, one vector per time level (`levels[0] == u`).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    grid: Grid,
    scheme: SchemeConfig,
    levels: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn scheme(&self) -> &SchemeConfig {
        &self.scheme
    }

    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> &[f64] {
        &self.levels[j]
    }

    /// Stacked `(y^1, ..., y^{N_t})`.
    pub fn stacked(&self) -> Vec<f64> {
        self.levels.concat()
    }

    /// Entry at `(level, node)`, both 0-based.
    pub fn at(&self, level: usize, node: usize) -> f64 {
        self.levels[level][node]
    }

    /// Largest relative excess of `||y^j||` over `||u|| + dt sum_{i=2..j} ||f^i||`.
    /// Non-positive means the energy bound holds on every level.
    pub fn energy_bound_excess(&self, source: &SourceTerm) -> f64 {
        let dt = self.grid.dt();
        let mut bound = norm2(&self.levels[0]);
        let mut worst = f64::NEG_INFINITY;
        for (j, y) in self.levels.iter().enumerate() {
            if j > 0 {
                bound += dt * norm2(source.at_level(j));
            }
            let excess = (norm2(y) - bound) / bound.max(f64::MIN_POSITIVE);
            worst = worst.max(excess);
        }
        worst
    }
}

/// Forward solve of `e(y, u) = 0`.
pub fn solve_state(u: &[f64], source: &SourceTerm, grid: &Grid, scheme: &SchemeConfig) -> Result<Trajectory> {
    Error::check_len("control", grid.n(), u.len())?;
    Error::check_len("source levels", grid.nt() - 1, source.levels().len())?;
    if let Some(i) = u.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter(format!("control entry {i} is not finite")));
    }
    let mut levels = Vec::with_capacity(grid.nt());
    levels.push(u.to_vec());
    for j in 1..grid.nt() {
        let next = step_level(&levels[j - 1], source.at_level(j), grid, scheme, j)?;
        levels.push(next);
    }
    Ok(Trajectory { grid: *grid, scheme: *scheme, levels })
}

/// Residual of the stacked state equation `E y + Z(y) U y - f`.
pub fn state_residual(traj: &Trajectory, u: &[f64], source: &SourceTerm) -> Vec<f64> {
    let grid = traj.grid;
    let (dt, inv_h) = (grid.dt(), 1.0 / grid.h());
    let mut out = Vec::with_capacity(grid.state_len());
    out.extend(traj.levels[0].iter().zip(u).map(|(y, u)| (y - u) / dt));
    for j in 1..grid.nt() {
        let (prev, cur) = (&traj.levels[j - 1], &traj.levels[j]);
        let uy = apply_u(cur, &sides(prev, traj.scheme.stencil), inv_h);
        let f = source.at_level(j);
        out.extend((0..grid.n()).map(|i| (cur[i] - prev[i]) / dt + prev[i] * uy[i] - f[i]));
    }
    out
}

#[derive(Debug, Clone)]
struct LevelBlock {
    sides: Vec<Side>,
    /// `I + dt diag(y^{j-1}) U_j`
    step: Tridiagonal,
    step_t: Tridiagonal,
    /// `U_j y^j`
    slope: Vec<f64>,
}

/// The state Jacobian `Xi = e_y(y, u)` frozen at a trajectory.
///
/// Block row 0 is `I/dt`; block row `j >= 1` has diagonal block
/// `(I + dt diag(y^{j-1}) U_j)/dt` and sub-diagonal block `-I/dt + diag(U_j y^j)`.
#[derive(Debug, Clone)]
pub struct StateJacobian {
    grid: Grid,
    blocks: Vec<LevelBlock>,
}

impl StateJacobian {
    pub fn new(traj: &Trajectory) -> Self {
        let grid = traj.grid;
        let (dt, inv_h) = (grid.dt(), 1.0 / grid.h());
        let blocks = (1..grid.nt())
            .map(|j| {
                let prev = &traj.levels[j - 1];
                let s = sides(prev, traj.scheme.stencil);
                let step = Tridiagonal::step_matrix(prev, &s, dt, inv_h);
                let step_t = step.transpose();
                let slope = apply_u(&traj.levels[j], &s, inv_h);
                LevelBlock { sides: s, step, step_t, slope }
            })
            .collect();
        Self { grid, blocks }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn block(&self, j: usize) -> &LevelBlock {
        &self.blocks[j - 1]
    }

    fn split<'a>(&self, v: &'a [f64]) -> Result<Vec<&'a [f64]>> {
        Error::check_len("space-time vector", self.grid.state_len(), v.len())?;
        Ok(v.chunks(self.grid.n()).collect())
    }

    /// `Xi v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let lv = self.split(v)?;
        let dt = self.grid.dt();
        let mut out = Vec::with_capacity(v.len());
        out.extend(lv[0].iter().map(|x| x / dt));
        for j in 1..self.grid.nt() {
            let b = self.block(j);
            let mv = b.step.mul(lv[j]);
            out.extend((0..self.grid.n()).map(|i| mv[i] / dt - lv[j - 1][i] / dt + b.slope[i] * lv[j - 1][i]));
        }
        Ok(out)
    }

    /// `Xi^T p`.
    pub fn apply_transpose(&self, p: &[f64]) -> Result<Vec<f64>> {
        let lp = self.split(p)?;
        let (n, nt, dt) = (self.grid.n(), self.grid.nt(), self.grid.dt());
        let mut out = vec![0.0; p.len()];
        for j in 0..nt {
            let dst = &mut out[j * n..(j + 1) * n];
            if j == 0 {
                dst.iter_mut().zip(lp[0]).for_each(|(o, x)| *o = x / dt);
            } else {
                let mt = self.block(j).step_t.mul(lp[j]);
                dst.iter_mut().zip(mt).for_each(|(o, x)| *o = x / dt);
            }
            if j + 1 < nt {
                let b = self.block(j + 1);
                for i in 0..n {
                    dst[i] += (b.slope[i] - 1.0 / dt) * lp[j + 1][i];
                }
            }
        }
        Ok(out)
    }

    /// `Xi^{-1} r` by forward substitution in time.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>> {
        let lr = self.split(r)?;
        let (n, dt) = (self.grid.n(), self.grid.dt());
        let mut x: Vec<f64> = Vec::with_capacity(r.len());
        x.extend(lr[0].iter().map(|v| dt * v));
        for j in 1..self.grid.nt() {
            let b = self.block(j);
            let prev = &x[(j - 1) * n..j * n];
            let rhs: Vec<f64> = (0..n).map(|i| dt * lr[j][i] + prev[i] - dt * b.slope[i] * prev[i]).collect();
            let next = b
                .step
                .solve(&rhs)
                .map_err(|(index, pivot)| Error::StepFailure { level: j, index, pivot })?;
            x.extend(next);
        }
        Ok(x)
    }

    /// `Xi^{-T} r` by backward substitution in time.
    pub fn solve_transpose(&self, r: &[f64]) -> Result<Vec<f64>> {
        let lr = self.split(r)?;
        let (n, nt, dt) = (self.grid.n(), self.grid.nt(), self.grid.dt());
        let mut p = vec![0.0; r.len()];
        for j in (0..nt).rev() {
            let mut rhs: Vec<f64> = lr[j].iter().map(|v| dt * v).collect();
            if j + 1 < nt {
                let b = self.block(j + 1);
                let next = &p[(j + 1) * n..(j + 2) * n];
                for i in 0..n {
                    rhs[i] += next[i] - dt * b.slope[i] * next[i];
                }
            }
            let level = if j == 0 {
                rhs
            } else {
                self.block(j)
                    .step_t
                    .solve(&rhs)
                    .map_err(|(index, pivot)| Error::StepFailure { level: j, index, pivot })?
            };
            p[j * n..(j + 1) * n].copy_from_slice(&level);
        }
        Ok(p)
    }

    /// `K v`, the second derivative of `p^T e(y, u)` with respect to `y`
    /// applied to `v`. It couples consecutive levels only:
    /// `(K v)^{j-1} += p^j .* (U_j v^j)` and `(K v)^j += U_j^T (p^j .* v^{j-1})`.
    pub fn apply_adjoint_curvature(&self, adjoint: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let lp = self.split(adjoint)?;
        let lv = self.split(v)?;
        let (n, inv_h) = (self.grid.n(), 1.0 / self.grid.h());
        let mut out = vec![0.0; v.len()];
        for j in 1..self.grid.nt() {
            let b = self.block(j);
            let uv = apply_u(lv[j], &b.sides, inv_h);
            for i in 0..n {
                out[(j - 1) * n + i] += lp[j][i] * uv[i];
            }
            let pv: Vec<f64> = (0..n).map(|i| lp[j][i] * lv[j - 1][i]).collect();
            let utpv = apply_ut(&pv, &b.sides, inv_h);
            for i in 0..n {
                out[j * n + i] += utpv[i];
            }
        }
        Ok(out)
    }
}

/// Adjoint state, one vector per time level.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointTrajectory {
    levels: Vec<Vec<f64>>,
}

impl AdjointTrajectory {
    pub fn levels(&self) -> &[Vec<f64>] {
        &self.levels
    }

    pub fn level(&self, j: usize) -> &[f64] {
        &self.levels[j]
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.levels.concat()
    }
}

/// Solve `e_y(y, u)^T p = rhs`.
pub fn solve_adjoint(traj: &Trajectory, rhs: &[f64]) -> Result<AdjointTrajectory> {
    let p = apply_inverse_state_transpose(traj, rhs)?;
    let n = traj.grid.n();
    Ok(AdjointTrajectory { levels: p.chunks(n).map(<[f64]>::to_vec).collect() })
}

/// `Xi^{-T} v`.
pub fn apply_inverse_state_transpose(traj: &Trajectory, v: &[f64]) -> Result<Vec<f64>> {
    StateJacobian::new(traj).solve_transpose(v)
}

/// Sensitivity `dy` of the trajectory to a control perturbation `du`:
/// `Xi dy = -e_u du = (du/dt, 0, ..., 0)`.
pub fn solve_linearized(traj: &Trajectory, du: &[f64]) -> Result<Vec<f64>> {
    linearized_with(&StateJacobian::new(traj), du)
}

pub(crate) fn linearized_with(jac: &StateJacobian, du: &[f64]) -> Result<Vec<f64>> {
    let grid = jac.grid;
    Error::check_len("control direction", grid.n(), du.len())?;
    let mut rhs = vec![0.0; grid.state_len()];
    let dt = grid.dt();
    rhs[..grid.n()].iter_mut().zip(du).for_each(|(r, d)| *r = d / dt);
    jac.solve(&rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::dot;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|_| scale * rng.random_range(-1.0..1.0)).collect()
    }

    /// Dense Jacobian of the stacked residual by central differences. The
    /// residual is quadratic in `y`, so this is exact up to rounding as long
    /// as no upwind switch is crossed.
    fn fd_jacobian(traj: &Trajectory, u: &[f64], src: &SourceTerm) -> DMatrix<f64> {
        let m = traj.grid.state_len();
        let n = traj.grid.n();
        let eps = 1e-6;
        let mut jac = DMatrix::zeros(m, m);
        for k in 0..m {
            let mut plus = traj.clone();
            plus.levels[k / n][k % n] += eps;
            let mut minus = traj.clone();
            minus.levels[k / n][k % n] -= eps;
            let rp = state_residual(&plus, u, src);
            let rm = state_residual(&minus, u, src);
            for i in 0..m {
                jac[(i, k)] = (rp[i] - rm[i]) / (2.0 * eps);
            }
        }
        jac
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let g = Grid::new(8, 6, 1.0, 1.0).unwrap();
        let y = step_state(&[0.0; 8], &[0.0; 8], &g, &SchemeConfig::forward()).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
        let traj = solve_state(&[0.0; 8], &SourceTerm::zero(&g), &g, &SchemeConfig::forward()).unwrap();
        assert!(traj.stacked().iter().all(|&v| v == 0.0));
        let p = solve_adjoint(&traj, &vec![0.0; g.state_len()]).unwrap();
        assert!(p.stacked().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_matches_dense_solve() {
        // n = 3, h = 1, dt = 1: (I + diag(y_prev) U_fwd) y = y_prev
        let g = Grid::new(3, 2, 4.0, 2.0).unwrap();
        assert_eq!(g.h(), 1.0);
        let dt = g.dt();
        let y_prev = [0.5, -0.25, 0.3];
        let f = [0.1, 0.0, -0.2];
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                1.0 - dt * 0.5, dt * 0.5, 0.0,
                0.0, 1.0 + dt * 0.25, -dt * 0.25,
                0.0, 0.0, 1.0 - dt * 0.3,
            ],
        );
        let b = DVector::from_iterator(3, (0..3).map(|i| y_prev[i] + dt * f[i]));
        let expected = a.lu().solve(&b).unwrap();
        let got = step_state(&y_prev, &f, &g, &SchemeConfig::forward()).unwrap();
        for i in 0..3 {
            assert!((got[i] - expected[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_pivot_names_the_node() {
        let g = Grid::new(4, 2, 5.0, 1.0).unwrap();
        // forward pivot at node 2 is 1 - dt y_2 / h
        let y_prev = [0.0, 0.0, g.h() / g.dt(), 0.0];
        match step_state(&y_prev, &[0.0; 4], &g, &SchemeConfig::forward()) {
            Err(Error::StepFailure { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected step failure, got {other:?}"),
        }
        let traj = solve_state(&y_prev, &SourceTerm::zero(&g), &g, &SchemeConfig::forward());
        assert!(matches!(traj, Err(Error::StepFailure { level: 1, index: 2, .. })));
    }

    #[test]
    fn upwind_never_hits_a_zero_pivot() {
        let g = Grid::new(4, 2, 5.0, 1.0).unwrap();
        let y_prev = [0.0, 0.0, g.h() / g.dt(), -g.h() / g.dt()];
        assert!(step_state(&y_prev, &[0.0; 4], &g, &SchemeConfig::upwind()).is_ok());
    }

    #[test]
    fn trajectory_satisfies_stacked_equation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::new(20, 30, 10.0, 1.0).unwrap();
        for scheme in [SchemeConfig::forward(), SchemeConfig::upwind()] {
            let u = rand_vec(&mut rng, 20, 0.5);
            let src = SourceTerm::new(&g, (0..29).map(|_| rand_vec(&mut rng, 20, 0.3)).collect()).unwrap();
            let traj = solve_state(&u, &src, &g, &scheme).unwrap();
            assert_eq!(traj.level(0), &u[..]);
            let res = state_residual(&traj, &u, &src);
            let scale = 1.0 + norm2(&traj.stacked());
            assert!(norm2(&res) <= 1e-10 * scale / g.dt());
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Grid::new(4, 4, 2.0, 1.0).unwrap();
        for scheme in [SchemeConfig::forward(), SchemeConfig::upwind()] {
            let u = rand_vec(&mut rng, 4, 1.0);
            let src = SourceTerm::zero(&g);
            let traj = solve_state(&u, &src, &g, &scheme).unwrap();
            let jac = StateJacobian::new(&traj);
            let dense = fd_jacobian(&traj, &u, &src);
            let m = g.state_len();
            for k in 0..m {
                let mut e = vec![0.0; m];
                e[k] = 1.0;
                let col = jac.apply(&e).unwrap();
                let row = jac.apply_transpose(&e).unwrap();
                for i in 0..m {
                    assert!((col[i] - dense[(i, k)]).abs() < 1e-6, "col {k} row {i}");
                    assert!((row[i] - dense[(k, i)]).abs() < 1e-6, "row {k} col {i}");
                }
            }
        }
    }

    #[test]
    fn adjoint_matches_dense_lu() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Grid::new(3, 3, 1.0, 1.0).unwrap();
        let u = rand_vec(&mut rng, 3, 0.5);
        let src = SourceTerm::zero(&g);
        let traj = solve_state(&u, &src, &g, &SchemeConfig::forward()).unwrap();
        let dense = fd_jacobian(&traj, &u, &src);
        let rhs = rand_vec(&mut rng, 9, 1.0);
        let expected = dense.transpose().lu().solve(&DVector::from_column_slice(&rhs)).unwrap();
        let p = solve_adjoint(&traj, &rhs).unwrap().stacked();
        for i in 0..9 {
            assert!((p[i] - expected[i]).abs() <= 1e-8 * (1.0 + expected[i].abs()));
        }
    }

    #[test]
    fn inverse_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = Grid::new(12, 10, 10.0, 1.0).unwrap();
        for scheme in [SchemeConfig::forward(), SchemeConfig::upwind()] {
            let traj = solve_state(&rand_vec(&mut rng, 12, 1.0), &SourceTerm::zero(&g), &g, &scheme).unwrap();
            let jac = StateJacobian::new(&traj);
            let v = rand_vec(&mut rng, g.state_len(), 1.0);
            let back = jac.apply(&jac.solve(&v).unwrap()).unwrap();
            let back_t = jac.apply_transpose(&jac.solve_transpose(&v).unwrap()).unwrap();
            for i in 0..v.len() {
                assert!((back[i] - v[i]).abs() < 1e-10 * (1.0 + v[i].abs()));
                assert!((back_t[i] - v[i]).abs() < 1e-10 * (1.0 + v[i].abs()));
            }
            assert!(jac.solve_transpose(&vec![0.0; v.len()]).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn linearized_state_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let g = Grid::new(15, 12, 10.0, 1.0).unwrap();
        let src = SourceTerm::zero(&g);
        for scheme in [SchemeConfig::forward(), SchemeConfig::upwind()] {
            let u = rand_vec(&mut rng, 15, 0.3);
            let du = rand_vec(&mut rng, 15, 1.0);
            let traj = solve_state(&u, &src, &g, &scheme).unwrap();
            let dy = solve_linearized(&traj, &du).unwrap();
            for i in 0..15 {
                assert!((dy[i] - du[i]).abs() < 1e-14);
            }
            let eps = 1e-5;
            let up: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + eps * b).collect();
            let shifted = solve_state(&up, &src, &g, &scheme).unwrap().stacked();
            let base = traj.stacked();
            let err: Vec<f64> = (0..base.len()).map(|i| (shifted[i] - base[i]) / eps - dy[i]).collect();
            assert!(norm2(&err) < 1e-3 * norm2(&dy), "{} vs {}", norm2(&err), norm2(&dy));
            assert!(solve_linearized(&traj, &[0.0; 15]).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn discrete_adjoint_test() {
        // <dy(du), r> = -<du, -(1/dt) p^1> with p = Xi^{-T} r
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let g = Grid::new(10, 20, 10.0, 1.0).unwrap();
        let traj = solve_state(&rand_vec(&mut rng, 10, 1.0), &SourceTerm::zero(&g), &g, &SchemeConfig::forward()).unwrap();
        let du = rand_vec(&mut rng, 10, 1.0);
        let r = rand_vec(&mut rng, g.state_len(), 1.0);
        let lhs = dot(&solve_linearized(&traj, &du).unwrap(), &r);
        let p = solve_adjoint(&traj, &r).unwrap();
        let rhs = dot(&du, p.level(0)) / g.dt();
        assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn curvature_matches_jacobian_differences() {
        // d/dy [Xi(y)^T p] applied to v equals K v
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let g = Grid::new(6, 5, 3.0, 1.0).unwrap();
        for scheme in [SchemeConfig::forward(), SchemeConfig::upwind()] {
            let u: Vec<f64> = rand_vec(&mut rng, 6, 0.5);
            let traj = solve_state(&u, &SourceTerm::zero(&g), &g, &scheme).unwrap();
            let p = rand_vec(&mut rng, g.state_len(), 1.0);
            let v = rand_vec(&mut rng, g.state_len(), 1.0);
            let kv = StateJacobian::new(&traj).apply_adjoint_curvature(&p, &v).unwrap();
            let eps = 1e-6;
            let shifted = |sign: f64| {
                let mut t = traj.clone();
                for (j, lvl) in t.levels.iter_mut().enumerate() {
                    for (i, y) in lvl.iter_mut().enumerate() {
                        *y += sign * eps * v[j * 6 + i];
                    }
                }
                StateJacobian::new(&t).apply_transpose(&p).unwrap()
            };
            let (a, b) = (shifted(1.0), shifted(-1.0));
            for i in 0..kv.len() {
                let fd = (a[i] - b[i]) / (2.0 * eps);
                assert!((fd - kv[i]).abs() < 1e-6 * (1.0 + fd.abs()), "{i}: {fd} vs {}", kv[i]);
            }
        }
    }

    #[test]
    fn upwind_respects_energy_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Grid::new(50, 150, 10.0, 1.0).unwrap();
        for _ in 0..5 {
            let u = rand_vec(&mut rng, 50, 1.0);
            let src = SourceTerm::new(&g, (0..149).map(|_| rand_vec(&mut rng, 50, 1.0)).collect()).unwrap();
            let traj = solve_state(&u, &src, &g, &SchemeConfig::upwind()).unwrap();
            assert!(traj.energy_bound_excess(&src) <= 1e-9);
        }
    }
}
