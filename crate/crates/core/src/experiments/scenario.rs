//! Synthetic twin experiments: exact initial conditions, perfect observations
//! of the resulting trajectory, and a noisy background.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::{SchemeConfig, SourceTerm};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::objective::{Background, InverseCovariance, ObservationSet, Problem, ProblemOrigin, Regularizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentId {
    Exp1,
    Exp2,
    Exp3,
    Exp4,
}

impl ExperimentId {
    pub const ALL: [Self; 4] = [Self::Exp1, Self::Exp2, Self::Exp3, Self::Exp4];

    pub fn from_number(k: u8) -> Option<Self> {
        Self::ALL.get(usize::from(k).checked_sub(1)?).copied()
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let k = Self::ALL.iter().position(|e| e == self).unwrap() + 1;
        write!(f, "exp{k}")
    }
}

impl FromStr for ExperimentId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let digits = s.trim_start_matches("exp");
        digits
            .parse::<u8>()
            .ok()
            .and_then(Self::from_number)
            .ok_or_else(|| format!("unknown experiment {s:?} (expected 1-4)"))
    }
}

/// Exact initial condition on `[0, 10]`. Values at jumps follow the filled
/// markers of the reference plots: right limit for experiments 1 and 2, left
/// limit for experiments 3 and 4.
pub fn exact_solution(id: ExperimentId, x: f64) -> Result<f64> {
    if !(0.0..=10.0).contains(&x) {
        return Err(Error::InvalidParameter(format!("x = {x} outside [0, 10]")));
    }
    Ok(match id {
        ExperimentId::Exp1 => {
            if x < 5.0 {
                x / 5.0
            } else {
                -0.4 * (x - 10.0)
            }
        }
        ExperimentId::Exp2 => {
            if !(2.5..=7.5).contains(&x) {
                0.0
            } else if x < 5.0 {
                0.4 * x - 1.0
            } else {
                -0.8 * x + 6.0
            }
        }
        ExperimentId::Exp3 => {
            if x <= 2.0 {
                1.5 * x
            } else if x <= 5.0 {
                x - 2.0
            } else if x <= 8.0 {
                x - 5.0
            } else {
                10.0 - x
            }
        }
        ExperimentId::Exp4 => {
            if x <= 2.0 {
                1.5 * x
            } else if x <= 4.0 {
                x - 2.0
            } else if x <= 5.0 {
                2.0
            } else if x <= 6.0 {
                3.0 * x - 15.0
            } else if x <= 8.0 {
                -0.75 * x + 6.0
            } else {
                0.0
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObsStrategy {
    /// Evenly spaced space-time lattice, half a stride in from each edge.
    #[default]
    Strided,
    /// Distinct uniformly drawn lattice points.
    Random,
}

impl fmt::Display for ObsStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Strided => "strided",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub experiment: ExperimentId,
    pub n: usize,
    pub nt: usize,
    pub n_obs: usize,
    /// Standard deviation of the background error.
    pub noise_sigma: f64,
    pub seed: u64,
    pub obs_strategy: ObsStrategy,
    pub scheme: SchemeConfig,
    /// Diagonal of `B`.
    pub background_variance: f64,
    pub scale_by_h: bool,
}

impl ScenarioSpec {
    /// 50 nodes, 150 levels, 25 observations, sigma = 0.1, B = 0.1 I.
    pub fn new(experiment: ExperimentId) -> Self {
        Self {
            experiment,
            n: 50,
            nt: 150,
            n_obs: 25,
            noise_sigma: 0.1,
            seed: 0,
            obs_strategy: ObsStrategy::Strided,
            scheme: SchemeConfig::upwind(),
            background_variance: 0.1,
            scale_by_h: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_obs > self.n * self.nt {
            return Err(Error::InvalidParameter(format!(
                "{} observations requested but the lattice has {} points",
                self.n_obs,
                self.n * self.nt
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise sigma must be nonnegative, got {}", self.noise_sigma)));
        }
        if !(self.background_variance.is_finite() && self.background_variance > 0.0) {
            return Err(Error::InvalidParameter("background variance must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.n, self.nt, 10.0, 1.0)
    }
}

/// `(time level, node)` pairs, time-major.
pub fn select_observations(spec: &ScenarioSpec) -> Vec<(usize, usize)> {
    let (n, nt, m) = (spec.n, spec.nt, spec.n_obs);
    if m == 0 {
        return Vec::new();
    }
    match spec.obs_strategy {
        ObsStrategy::Strided => {
            let per_level = (m as f64).sqrt().ceil() as usize;
            let levels = m.div_ceil(per_level);
            let lattice = |count: usize, len: usize| -> Vec<usize> {
                let count = count.min(len);
                let stride = len / count;
                (0..count).map(|k| stride / 2 + k * stride).collect()
            };
            let nodes = lattice(per_level, n);
            let times = lattice(levels, nt);
            let mut out: Vec<(usize, usize)> = times.iter().flat_map(|&t| nodes.iter().map(move |&i| (t, i))).collect();
            if out.len() < m {
                // coarse lattice exhausted (tiny grids): fill in row-major order
                let taken: std::collections::HashSet<_> = out.iter().copied().collect();
                out.extend((0..nt).flat_map(|t| (0..n).map(move |i| (t, i))).filter(|p| !taken.contains(p)));
            }
            out.truncate(m);
            out
        }
        ObsStrategy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
            let mut idx = sample(&mut rng, n * nt, m).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|k| (k / n, k % n)).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub spec: ScenarioSpec,
    pub problem: Problem,
    pub u_exact: Vec<f64>,
}

/// Build the twin experiment: sample the exact profile, observe its
/// trajectory without noise, perturb it for the background.
pub fn generate_scenario(spec: &ScenarioSpec, regularizer: Regularizer, gamma: f64) -> Result<Scenario> {
    spec.validate()?;
    let grid = spec.grid()?;
    let u_exact = grid
        .nodes()
        .iter()
        .map(|&x| exact_solution(spec.experiment, x))
        .collect::<Result<Vec<_>>>()?;
    let source = SourceTerm::zero(&grid);
    let traj = crate::dynamics::solve_state(&u_exact, &source, &grid, &spec.scheme)?;
    let selection = select_observations(spec);
    let z = selection.iter().map(|&(t, i)| traj.at(t, i)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise_sigma)
        .map_err(|e| Error::InvalidParameter(format!("noise distribution: {e}")))?;
    let u_b = u_exact.iter().map(|&u| u + normal.sample(&mut rng)).collect();

    let problem = Problem {
        grid,
        scheme: spec.scheme,
        observations: ObservationSet {
            r_inv: InverseCovariance::scaled_identity(selection.len(), 1.0),
            selection,
            z,
        },
        background: Background { u_b, b_inv: InverseCovariance::scaled_identity(spec.n, 1.0 / spec.background_variance) },
        regularizer,
        gamma,
        source,
        scale_by_h: spec.scale_by_h,
        origin: Some(ProblemOrigin {
            experiment: spec.experiment.to_string(),
            seed: spec.seed,
            noise_sigma: spec.noise_sigma,
            obs_strategy: spec.obs_strategy.to_string(),
        }),
    };
    problem.validate()?;
    Ok(Scenario { spec: spec.clone(), problem, u_exact })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::huber::RegWeights;

    fn reg() -> Regularizer {
        Regularizer::Tgv(RegWeights::new(23.5, 0.611, 1e-10).unwrap())
    }

    #[test]
    fn exact_profiles() {
        use ExperimentId::*;
        assert_eq!(exact_solution(Exp2, 7.5).unwrap(), 0.0);
        assert_eq!(exact_solution(Exp2, 5.0).unwrap(), 2.0);
        assert_eq!(exact_solution(Exp2, 2.5).unwrap(), 0.0);
        assert_eq!(exact_solution(Exp1, 0.0).unwrap(), 0.0);
        assert_eq!(exact_solution(Exp1, 5.0).unwrap(), 2.0);
        assert_eq!(exact_solution(Exp1, 10.0).unwrap(), 0.0);
        for x in [2.0, 5.0, 8.0] {
            assert_eq!(exact_solution(Exp3, x).unwrap(), 3.0);
        }
        assert!(exact_solution(Exp3, 5.0 + 1e-9).unwrap() < 1e-8);
        assert_eq!(exact_solution(Exp4, 2.0).unwrap(), 3.0);
        assert_eq!(exact_solution(Exp4, 5.0).unwrap(), 2.0);
        assert_eq!(exact_solution(Exp4, 6.0).unwrap(), 3.0);
        assert_eq!(exact_solution(Exp4, 4.5).unwrap(), 2.0);
        assert!(exact_solution(Exp1, 10.5).is_err());
        assert!(exact_solution(Exp1, -0.1).is_err());
    }

    #[test]
    fn experiment_names() {
        assert_eq!("exp3".parse::<ExperimentId>().unwrap(), ExperimentId::Exp3);
        assert_eq!("2".parse::<ExperimentId>().unwrap(), ExperimentId::Exp2);
        assert!("5".parse::<ExperimentId>().is_err());
        assert_eq!(ExperimentId::Exp4.to_string(), "exp4");
    }

    #[test]
    fn default_lattice() {
        let spec = ScenarioSpec::new(ExperimentId::Exp2);
        let sel = select_observations(&spec);
        assert_eq!(sel.len(), 25);
        let times: Vec<usize> = sel.iter().step_by(5).map(|p| p.0).collect();
        let nodes: Vec<usize> = sel[..5].iter().map(|p| p.1).collect();
        assert_eq!(times, vec![15, 45, 75, 105, 135]);
        assert_eq!(nodes, vec![5, 15, 25, 35, 45]);
    }

    #[test]
    fn random_and_odd_counts_are_distinct_and_in_range() {
        for (strategy, m) in [(ObsStrategy::Random, 40), (ObsStrategy::Strided, 7), (ObsStrategy::Strided, 12)] {
            let mut spec = ScenarioSpec::new(ExperimentId::Exp1);
            spec.obs_strategy = strategy;
            spec.n_obs = m;
            let sel = select_observations(&spec);
            assert_eq!(sel.len(), m);
            let set: std::collections::HashSet<_> = sel.iter().collect();
            assert_eq!(set.len(), m);
            assert!(sel.iter().all(|&(t, i)| t < 150 && i < 50));
        }
        let mut spec = ScenarioSpec::new(ExperimentId::Exp1);
        spec.n = 3;
        spec.nt = 2;
        spec.n_obs = 6;
        assert_eq!(select_observations(&spec).len(), 6);
    }

    #[test]
    fn scenario_is_deterministic_and_noise_free_when_asked() {
        let mut spec = ScenarioSpec::new(ExperimentId::Exp2);
        spec.seed = 17;
        let a = generate_scenario(&spec, reg(), 1e4).unwrap();
        let b = generate_scenario(&spec, reg(), 1e4).unwrap();
        assert_eq!(a.problem.to_json(), b.problem.to_json());
        assert_ne!(a.problem.background.u_b, a.u_exact);
        spec.noise_sigma = 0.0;
        let c = generate_scenario(&spec, reg(), 1e4).unwrap();
        assert_eq!(c.problem.background.u_b, c.u_exact);
        assert_eq!(c.problem.observations.len(), 25);
        spec.n_obs = 50 * 150 + 1;
        assert!(generate_scenario(&spec, reg(), 1e4).is_err());
    }
}
