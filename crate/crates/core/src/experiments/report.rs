//! File outputs: metrics CSV, JSON run logs, whitespace-delimited xy data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::sweep::{MetricsRow, RunLog};
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 8] = ["alpha", "beta", "gamma", "mu", "iterations", "ssim", "final_cost", "converged"];

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.to_path_buf(), source }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> Error + '_ {
    move |source| Error::Csv { path: path.to_path_buf(), source }
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    if rows.is_empty() {
        // serde only emits the header alongside the first record
        w.write_record(CSV_HEADER).map_err(csv_err(path))?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err(path))
}

pub fn write_run_log(log: &RunLog, path: &Path) -> Result<()> {
    let f = File::create(path).map_err(io_err(path))?;
    serde_json::to_writer_pretty(BufWriter::new(f), log).map_err(|source| Error::Json { path: path.into(), source })
}

pub fn read_run_log(path: &Path) -> Result<RunLog> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json { path: path.into(), source })
}

/// Columns of equal length, one header comment line naming them.
pub fn write_xy(path: &Path, columns: &[(&str, &[f64])]) -> Result<()> {
    let rows = columns.iter().map(|c| c.1.len()).max().unwrap_or(0);
    let mut out = BufWriter::new(File::create(path).map_err(io_err(path))?);
    let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
    writeln!(out, "# {}", names.join(" ")).map_err(io_err(path))?;
    for i in 0..rows {
        let line: Vec<String> = columns
            .iter()
            .map(|(_, v)| v.get(i).map_or_else(|| "nan".to_string(), |x| format!("{x:.17e}")))
            .collect();
        writeln!(out, "{}", line.join(" ")).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, Default)]
pub struct EmittedFiles {
    pub metrics: PathBuf,
    pub logs: Vec<PathBuf>,
    pub xy: Vec<PathBuf>,
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

/// Write `<prefix>metrics.csv`, and for every log `<prefix><label>.json`,
/// `<prefix><label>_profile.xy` (x, exact, background, reconstruction) and
/// `<prefix><label>_convergence.xy` (iteration, cost, gradient norm, step,
/// residual ratio).
pub fn emit_report(rows: &[MetricsRow], logs: &[RunLog], prefix: &Path) -> Result<EmittedFiles> {
    // a prefix ending in a separator names a directory, so look at a real file
    let metrics = with_suffix(prefix, "metrics.csv");
    if let Some(dir) = metrics.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut files = EmittedFiles { metrics, ..Default::default() };
    write_metrics_csv(rows, &files.metrics)?;
    for log in logs {
        let json = with_suffix(prefix, &format!("{}.json", log.label));
        write_run_log(log, &json)?;
        files.logs.push(json);

        let profile = with_suffix(prefix, &format!("{}_profile.xy", log.label));
        write_xy(
            &profile,
            &[("x", &log.x), ("u_exact", &log.u_exact), ("u_background", &log.u_background), ("u_final", &log.u_final)],
        )?;
        files.xy.push(profile);

        let iters: Vec<f64> = log.iterations.iter().map(|l| l.iter as f64).collect();
        let costs: Vec<f64> = log.iterations.iter().map(|l| l.cost).collect();
        let grads: Vec<f64> = log.iterations.iter().map(|l| l.grad_norm).collect();
        let steps: Vec<f64> = log.iterations.iter().map(|l| l.step_length).collect();
        let conv = with_suffix(prefix, &format!("{}_convergence.xy", log.label));
        write_xy(
            &conv,
            &[("iteration", &iters), ("cost", &costs), ("grad_norm", &grads), ("step", &steps), ("ratio", &log.residual_ratios)],
        )?;
        files.xy.push(conv);
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> MetricsRow {
        MetricsRow {
            alpha: 23.5 + k as f64,
            beta: 0.611,
            gamma: 1e4,
            mu: 1e-10,
            iterations: 12 + k,
            ssim: 0.1 + 0.123_456_789_012_345_67 * k as f64,
            final_cost: 39.2434 / 3.0,
            converged: k.is_multiple_of(2),
        }
    }

    #[test]
    fn empty_csv_has_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        write_metrics_csv(&[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().trim(), CSV_HEADER.join(","));
        assert!(read_metrics_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let rows: Vec<_> = (0..4).map(row).collect();
        write_metrics_csv(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER.join(","));
        assert_eq!(read_metrics_csv(&p).unwrap(), rows);
    }

    #[test]
    fn directory_prefix_is_created() {
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("nested").join("out/");
        let files = emit_report(&[row(0)], &[], &prefix).unwrap();
        assert_eq!(files.metrics, dir.path().join("nested/out/metrics.csv"));
        assert!(files.metrics.exists());
    }

    #[test]
    fn io_errors_carry_the_path() {
        let p = Path::new("/nonexistent-dir/x/m.csv");
        let err = write_metrics_csv(&[], p).unwrap_err();
        assert!(err.to_string().contains("/nonexistent-dir/x/m.csv"));
        assert!(read_run_log(Path::new("/nonexistent-dir/log.json")).is_err());
    }

    #[test]
    fn xy_layout() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xy");
        write_xy(&p, &[("x", &[1.0, 2.0]), ("y", &[3.0])]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# x y");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].ends_with("nan"));
        let parsed: Vec<f64> = lines[1].split_whitespace().map(|t| t.parse().unwrap()).collect();
        assert_eq!(parsed, vec![1.0, 3.0]);
    }
}
