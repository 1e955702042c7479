//! Twin experiments on the four reference profiles, metrics and outputs.

pub mod report;
pub mod scenario;
pub mod ssim;
pub mod sweep;

pub use report::{emit_report, read_metrics_csv, read_run_log, write_metrics_csv, write_run_log, CSV_HEADER};
pub use scenario::{exact_solution, generate_scenario, select_observations, ExperimentId, ObsStrategy, Scenario, ScenarioSpec};
pub use ssim::{ssim, ssim_with, SsimConstants};
pub use sweep::{heuristic_betas, in_heuristic_band, run, run_tgv, run_tv, sweep, sweep_tv, MetricsRow, RunLog, RunOutcome, Start, SweepResult};
