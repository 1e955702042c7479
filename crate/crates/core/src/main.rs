use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use burgers_tgv::dynamics::SchemeConfig;
use burgers_tgv::error::Result;
use burgers_tgv::experiments::{
    emit_report, generate_scenario, heuristic_betas, run_tgv, run_tv, sweep, ExperimentId, MetricsRow, ObsStrategy,
    RunLog, RunOutcome, Scenario, ScenarioSpec, Start,
};
use burgers_tgv::huber::RegWeights;
use burgers_tgv::newton::{SolverConfig, StepNorm};
use burgers_tgv::objective::{cost, reduced_gradient, Regularizer};

/// TGV-regularized variational data assimilation for inviscid Burgers.
///
/// Scenarios are twin experiments: the exact profile is advected, observed
/// without noise at strided (or random) space-time points, and the background
/// is the exact profile plus Gaussian noise of standard deviation --sigma.
/// NOTE: the default sigma = 0.1 is an assumption; the reference experiments
/// only fix B = 0.1 I.
#[derive(Parser, Debug)]
#[command(version, about, long_about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one TGV (or TV) problem.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Use the TV regularizer with weight --beta instead of TGV.
        #[arg(long)]
        tv: bool,
    },
    /// Sweep alpha x beta; without --betas, beta spans the heuristic band per alpha.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated alphas (defaults to --alpha).
        #[arg(long, value_delimiter = ',')]
        alphas: Vec<f64>,
        /// Comma-separated betas.
        #[arg(long, value_delimiter = ',')]
        betas: Vec<f64>,
        /// Band points per alpha when --betas is absent.
        #[arg(long, default_value_t = 5)]
        band_points: usize,
    },
    /// TGV at (--alpha, --beta, --gamma, --mu) against TV at (--beta-tv, --gamma-tv).
    CompareTvTgv {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.85)]
        beta_tv: f64,
        #[arg(long, default_value_t = 1e5)]
        gamma_tv: f64,
    },
    /// Repeat one TGV solve over several mu.
    MuAblation {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,1e-6,1e-8,1e-10,1e-12")]
        mus: Vec<f64>,
    },
    /// Compare the adjoint gradient with central differences of the cost.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1e-6)]
        fd_step: f64,
        /// Relative error above which the check fails.
        #[arg(long, default_value_t = 1e-5)]
        threshold: f64,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=4))]
    experiment: u8,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 150)]
    nt: usize,
    /// Number of observations.
    #[arg(long, default_value_t = 25)]
    obs: usize,
    #[arg(long, value_enum, default_value_t = Layout::Strided)]
    obs_layout: Layout,
    /// Background noise standard deviation (assumed; see --help).
    #[arg(long, default_value_t = 0.1)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 23.5)]
    alpha: f64,
    #[arg(long, default_value_t = 0.611)]
    beta: f64,
    #[arg(long, default_value_t = 1e4)]
    gamma: f64,
    #[arg(long, default_value_t = 1e-10)]
    mu: f64,
    #[arg(long, default_value_t = 1e-4)]
    c1: f64,
    /// Tolerance on the Newton increment.
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Output prefix; files are written as <PREFIX>metrics.csv etc.
    #[arg(long, default_value = "out/")]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = Scheme::Upwind)]
    scheme: Scheme,
    #[arg(long, value_enum, default_value_t = Norm::Inf)]
    norm: Norm,
    /// Difference operators without the 1/h factor.
    #[arg(long)]
    unscaled: bool,
    /// Constant initial control.
    #[arg(long, default_value_t = 1.0, conflicts_with = "start_background")]
    start: f64,
    /// Start from the background instead.
    #[arg(long)]
    start_background: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Scheme {
    Forward,
    Upwind,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Norm {
    Inf,
    L2,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Layout {
    Strided,
    Random,
}

impl Common {
    fn spec(&self) -> ScenarioSpec {
        let mut spec = ScenarioSpec::new(ExperimentId::from_number(self.experiment).expect("range checked by clap"));
        spec.n = self.n;
        spec.nt = self.nt;
        spec.n_obs = self.obs;
        spec.noise_sigma = self.sigma;
        spec.seed = self.seed;
        spec.obs_strategy = match self.obs_layout {
            Layout::Strided => ObsStrategy::Strided,
            Layout::Random => ObsStrategy::Random,
        };
        spec.scheme = match self.scheme {
            Scheme::Forward => SchemeConfig::forward(),
            Scheme::Upwind => SchemeConfig::upwind(),
        };
        spec.scale_by_h = !self.unscaled;
        spec
    }

    fn scenario(&self) -> Result<Scenario> {
        generate_scenario(&self.spec(), Regularizer::Tgv(self.weights(self.mu)?), self.gamma)
    }

    fn weights(&self, mu: f64) -> Result<RegWeights> {
        RegWeights::new(self.alpha, self.beta, mu)
    }

    fn config(&self) -> SolverConfig {
        SolverConfig {
            c1: self.c1,
            tol_step: self.tol,
            max_iter: self.max_iter,
            step_norm: match self.norm {
                Norm::Inf => StepNorm::Inf,
                Norm::L2 => StepNorm::L2,
            },
            ..SolverConfig::default()
        }
    }

    fn start(&self) -> Start {
        if self.start_background {
            Start::Background
        } else {
            Start::Constant(self.start)
        }
    }
}

fn print_rows(rows: &[MetricsRow]) {
    println!("{:>8} {:>8} {:>9} {:>9} {:>5} {:>7} {:>11} status", "alpha", "beta", "gamma", "mu", "iters", "ssim", "cost");
    for r in rows {
        println!(
            "{:>8} {:>8} {:>9.1e} {:>9.1e} {:>5} {:>7.4} {:>11.4} {}",
            r.alpha,
            r.beta,
            r.gamma,
            r.mu,
            r.iterations,
            r.ssim,
            r.final_cost,
            if r.converged { "converged" } else { "FAILED" }
        );
    }
}

/// Write the report and map convergence to the exit status.
fn finish(rows: Vec<MetricsRow>, logs: Vec<RunLog>, common: &Common) -> Result<ExitCode> {
    print_rows(&rows);
    for log in logs.iter().filter(|l| !l.termination.converged()) {
        eprintln!("{}: {:?}", log.label, log.termination);
    }
    let files = emit_report(&rows, &logs, &common.out)?;
    eprintln!("wrote {} and {} run logs", files.metrics.display(), files.logs.len());
    Ok(if rows.iter().all(|r| r.converged) { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn split(outcomes: Vec<RunOutcome>) -> (Vec<MetricsRow>, Vec<RunLog>) {
    outcomes.into_iter().map(|o| (o.row, o.log)).unzip()
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::Solve { common, tv } => {
            let sc = common.scenario()?;
            let o = if tv {
                run_tv(&sc, common.beta, common.gamma, &common.config(), &common.start())?
            } else {
                run_tgv(&sc, common.weights(common.mu)?, common.gamma, &common.config(), &common.start())?
            };
            let (rows, logs) = split(vec![o]);
            finish(rows, logs, &common)
        }
        Command::Sweep { common, alphas, betas, band_points } => {
            let sc = common.scenario()?;
            let alphas = if alphas.is_empty() { vec![common.alpha] } else { alphas };
            let (mut rows, mut logs) = (Vec::new(), Vec::new());
            for &a in &alphas {
                let bs = if betas.is_empty() { heuristic_betas(a, common.n, band_points) } else { betas.clone() };
                let res = sweep(&sc, &[a], &bs, common.gamma, common.mu, &common.config(), &common.start())?;
                rows.extend(res.rows);
                logs.extend(res.logs);
            }
            if let Some(best) = rows.iter().filter(|r| r.converged).max_by(|a, b| a.ssim.total_cmp(&b.ssim)) {
                eprintln!("best: alpha = {}, beta = {}, ssim = {:.4}", best.alpha, best.beta, best.ssim);
            }
            finish(rows, logs, &common)
        }
        Command::CompareTvTgv { common, beta_tv, gamma_tv } => {
            let sc = common.scenario()?;
            let tgv = run_tgv(&sc, common.weights(common.mu)?, common.gamma, &common.config(), &common.start())?;
            let tv = run_tv(&sc, beta_tv, gamma_tv, &common.config(), &common.start())?;
            eprintln!("ssim: tgv {:.4}, tv {:.4}", tgv.row.ssim, tv.row.ssim);
            let (rows, logs) = split(vec![tgv, tv]);
            finish(rows, logs, &common)
        }
        Command::MuAblation { common, mus } => {
            let sc = common.scenario()?;
            let outcomes = mus
                .iter()
                .map(|&mu| run_tgv(&sc, common.weights(mu)?, common.gamma, &common.config(), &common.start()))
                .collect::<Result<Vec<_>>>()?;
            let (rows, logs) = split(outcomes);
            finish(rows, logs, &common)
        }
        Command::Gradcheck { common, fd_step, threshold } => {
            let sc = common.scenario()?;
            let p = &sc.problem;
            let u = common.start().resolve(&sc)?;
            let w: Vec<f64> = (0..common.n - 1).map(|i| 0.01 * ((i as f64) * 0.7).sin()).collect();
            let g = reduced_gradient(p, &u, &w)?.stacked();
            let mut x: Vec<f64> = u.iter().chain(&w).copied().collect();
            let n = common.n;
            let mut worst = 0.0_f64;
            for k in 0..x.len() {
                let x0 = x[k];
                let step = fd_step * x0.abs().max(1.0);
                x[k] = x0 + step;
                let fp = cost(p, &x[..n], &x[n..])?.total;
                x[k] = x0 - step;
                let fm = cost(p, &x[..n], &x[n..])?.total;
                x[k] = x0;
                let fd = (fp - fm) / (2.0 * step);
                let err = (fd - g[k]).abs() / fd.abs().max(g[k].abs()).max(1e-8);
                worst = worst.max(err);
            }
            println!("max relative gradient error over {} coordinates: {worst:.3e}", x.len());
            Ok(if worst <= threshold { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
