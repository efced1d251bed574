//! CSV and JSON artifact emission.
//!
//! All tables are UTF-8 CSV with a header row, `.` as the decimal separator,
//! and every float printed with 17 significant digits so the exact binary
//! value round-trips. Controls are stored unscaled; the `u_over_10_*`
//! columns exist only as plot data.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;

use qlctrl::{ControlTrajectory, Grid, MonteCarloReport, SolveReport};

use crate::failure::{CliResult, Failure};

/// Formats a float with 17 significant digits (round-trip exact for f64).
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Output directory handle; creation is idempotent.
pub struct OutDir {
    root: PathBuf,
}

impl OutDir {
    /// Creates the directory (and parents) if needed.
    pub fn create(path: &Path) -> CliResult<OutDir> {
        fs::create_dir_all(path).map_err(|e| {
            Failure::Other(format!("cannot create output directory {}: {e}", path.display()))
        })?;
        Ok(OutDir { root: path.to_path_buf() })
    }

    /// The directory path.
    pub fn path(&self) -> &Path {
        &self.root
    }

    /// Writes one artifact file, returning its path.
    pub fn write(&self, name: &str, contents: &str) -> CliResult<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, contents)
            .map_err(|e| Failure::Other(format!("cannot write {}: {e}", path.display())))?;
        Ok(path)
    }
}

/// Trajectory table: `t`, state components, control components, and the
/// scaled `u/10` plot columns. One row per grid node.
pub fn trajectory_csv(grid: &Grid, y: &[DVector<f64>], u: &ControlTrajectory) -> String {
    let d = y.first().map_or(0, |v| v.len());
    let n = u.channels();
    let mut out = String::from("t");
    for i in 1..=d {
        out.push_str(&format!(",y_{i}"));
    }
    for j in 1..=n {
        out.push_str(&format!(",u_{j}"));
    }
    for j in 1..=n {
        out.push_str(&format!(",u_over_10_{j}"));
    }
    out.push('\n');
    for k in 0..grid.len() {
        out.push_str(&fmt(grid.t(k)));
        for i in 0..d {
            out.push(',');
            out.push_str(&fmt(y[k][i]));
        }
        let uk = u.at(k);
        for j in 0..n {
            out.push(',');
            out.push_str(&fmt(uk[j]));
        }
        for j in 0..n {
            out.push(',');
            out.push_str(&fmt(uk[j] / 10.0));
        }
        out.push('\n');
    }
    out
}

/// Iteration table: one row per fixed-point iteration with the relative
/// control change and the final state reached by the nonlinear re-simulation.
pub fn iterations_csv(report: &SolveReport) -> String {
    let d = report.final_state().len();
    let mut out = String::from("iter,delta_u");
    for i in 1..=d {
        out.push_str(&format!(",reached_{i}"));
    }
    out.push('\n');
    for (i, (delta, reached)) in report.deltas.iter().zip(&report.reached).enumerate() {
        out.push_str(&format!("{}", i + 1));
        out.push(',');
        out.push_str(&fmt(*delta));
        for c in 0..d {
            out.push(',');
            out.push_str(&fmt(reached[c]));
        }
        out.push('\n');
    }
    out
}

/// Monte Carlo table: one row per iteration budget with the sample mean of
/// the reached finals, then a `total` row with the pooled mean.
pub fn montecarlo_csv(report: &MonteCarloReport) -> String {
    let d = report.pooled_mean.len();
    let mut out = String::from("iterations");
    for i in 1..=d {
        out.push_str(&format!(",mean_{i}"));
    }
    out.push('\n');
    for (budget, mean) in report.budgets.iter().zip(&report.budget_means) {
        out.push_str(&format!("{budget}"));
        for c in 0..d {
            out.push(',');
            out.push_str(&fmt(mean[c]));
        }
        out.push('\n');
    }
    out.push_str("total");
    for c in 0..d {
        out.push(',');
        out.push_str(&fmt(report.pooled_mean[c]));
    }
    out.push('\n');
    out
}

/// Per-path final states: budget, global path index (the Brownian stream
/// index, so any row can be reproduced in isolation), and the reached final.
/// Failed paths are absent, matching their exclusion from the means.
pub fn path_finals_csv(report: &MonteCarloReport, n_paths: usize) -> String {
    let d = report.pooled_mean.len();
    let failed: std::collections::HashSet<u64> =
        report.failures.iter().map(|f| f.path_index).collect();
    let mut out = String::from("budget,path");
    for i in 1..=d {
        out.push_str(&format!(",final_{i}"));
    }
    out.push('\n');
    for (bi, budget) in report.budgets.iter().enumerate() {
        let start = (bi * n_paths) as u64;
        let globals =
            (start..start + n_paths as u64).filter(|g| !failed.contains(g));
        for (g, fin) in globals.zip(&report.finals[bi]) {
            out.push_str(&format!("{budget},{g}"));
            for c in 0..d {
                out.push(',');
                out.push_str(&fmt(fin[c]));
            }
            out.push('\n');
        }
    }
    out
}

/// Converts a vector to a JSON array value.
pub fn vec_json(v: &DVector<f64>) -> serde_json::Value {
    serde_json::Value::from(v.iter().copied().collect::<Vec<f64>>())
}
