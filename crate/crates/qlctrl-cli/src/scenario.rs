//! Scenario files: one JSON document that fully describes a run.
//!
//! The schema mirrors the library's vocabulary. A minimal exact-steering
//! scenario looks like
//!
//! ```json
//! {
//!   "system": { "builtin": { "name": "avoid-crowding" } },
//!   "problem": {
//!     "initial": [1.0, 1.0],
//!     "target": [2.0, 2.0],
//!     "horizon": 0.5,
//!     "mode": "exact"
//!   }
//! }
//! ```
//!
//! and every solver field is optional with the library's defaults. Unknown
//! fields are rejected so typos surface as config errors instead of being
//! silently ignored. Scenarios written back by the tool (`scenario.json` in
//! the output directory) re-parse to an identical scenario.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use qlctrl::{ControlProblem, ExpmMethod, QuasilinearSystem, SolverOptions, TargetMode};

use crate::failure::{CliResult, Failure};

/// Builds a dense matrix from row-major JSON data, rejecting ragged rows.
fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Failure::config(format!("{what}: matrix must have at least one row and column")));
    }
    let cols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Failure::config(format!(
                "{what}: row {i} has {} entries, expected {cols}",
                row.len()
            )));
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

/// The system block: exactly one source, picked by the JSON key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SystemSpec {
    /// One of the named built-in families.
    Builtin(BuiltinSpec),
    /// Explicit coefficient matrices for the power-law family
    /// `A(t, y) = |y|^m A0`, `B(t, y) = B0`.
    Explicit(ExplicitSpec),
}

/// Parameters for a built-in family. `avoid-crowding` takes no parameters;
/// `porous` takes `a0`, `b0`, and optionally `m` (default 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuiltinSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b0: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<f64>,
}

/// Explicit matrices and exponent; `m = 0` gives a linear time-invariant
/// system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    #[serde(default)]
    pub m: f64,
}

impl SystemSpec {
    /// Instantiates the described system.
    pub fn build(&self) -> CliResult<QuasilinearSystem> {
        match self {
            SystemSpec::Builtin(spec) => match spec.name.as_str() {
                "avoid-crowding" => {
                    if spec.a0.is_some() || spec.b0.is_some() || spec.m.is_some() {
                        return Err(Failure::config(
                            "system.builtin: avoid-crowding takes no parameters",
                        ));
                    }
                    Ok(QuasilinearSystem::avoid_crowding())
                }
                "porous" => {
                    let a0 = spec.a0.as_ref().ok_or_else(|| {
                        Failure::config("system.builtin: porous needs the a0 matrix")
                    })?;
                    let b0 = spec.b0.as_ref().ok_or_else(|| {
                        Failure::config("system.builtin: porous needs the b0 matrix")
                    })?;
                    let a0 = matrix_from_rows(a0, "system.builtin.a0")?;
                    let b0 = matrix_from_rows(b0, "system.builtin.b0")?;
                    QuasilinearSystem::porous(a0, b0, spec.m.unwrap_or(0.0))
                        .map_err(|e| Failure::Config(format!("system.builtin: {e}")))
                }
                other => Err(Failure::config(format!(
                    "system.builtin.name: unknown builtin {other:?} \
                     (expected \"avoid-crowding\" or \"porous\")"
                ))),
            },
            SystemSpec::Explicit(spec) => {
                let a = matrix_from_rows(&spec.a, "system.explicit.a")?;
                let b = matrix_from_rows(&spec.b, "system.explicit.b")?;
                QuasilinearSystem::porous(a, b, spec.m)
                    .map_err(|e| Failure::Config(format!("system.explicit: {e}")))
            }
        }
    }
}

/// Steering mode, spelled in kebab case in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeSpec {
    #[default]
    Exact,
    InExpectation,
}

impl From<ModeSpec> for TargetMode {
    fn from(mode: ModeSpec) -> TargetMode {
        match mode {
            ModeSpec::Exact => TargetMode::Exact,
            ModeSpec::InExpectation => TargetMode::InExpectation,
        }
    }
}

/// The steering problem: endpoints, horizon, and mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    pub initial: Vec<f64>,
    pub target: Vec<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub mode: ModeSpec,
}

impl ProblemSpec {
    /// Instantiates the steering problem.
    pub fn build(&self) -> CliResult<ControlProblem> {
        ControlProblem::new(
            DVector::from_vec(self.initial.clone()),
            DVector::from_vec(self.target.clone()),
            self.horizon,
            self.mode.into(),
        )
        .map_err(|e| Failure::Config(format!("problem: {e}")))
    }
}

/// Matrix-exponential method, spelled `"accurate"` or `{"taylor": k}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpmSpec {
    Accurate,
    Taylor(usize),
}

impl From<ExpmSpec> for ExpmMethod {
    fn from(spec: ExpmSpec) -> ExpmMethod {
        match spec {
            ExpmSpec::Accurate => ExpmMethod::Accurate,
            ExpmSpec::Taylor(k) => ExpmMethod::Taylor(k),
        }
    }
}

/// Solver options block. Every field defaults to the library's default, so
/// an absent block means "library defaults".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSpec {
    pub max_iter: usize,
    pub tol: f64,
    pub alpha: f64,
    pub expm: ExpmSpec,
    pub dt: f64,
    pub marching: bool,
    pub k_cap: u64,
    pub window_budget: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        let o = SolverOptions::default();
        SolverSpec {
            max_iter: o.max_iter,
            tol: o.tol,
            alpha: o.alpha,
            expm: match o.expm {
                ExpmMethod::Accurate => ExpmSpec::Accurate,
                ExpmMethod::Taylor(k) => ExpmSpec::Taylor(k),
            },
            dt: o.dt,
            marching: o.marching,
            k_cap: o.k_cap,
            window_budget: o.window_budget,
        }
    }
}

impl SolverSpec {
    /// Converts to the library's options struct.
    pub fn to_options(&self) -> SolverOptions {
        SolverOptions {
            max_iter: self.max_iter,
            tol: self.tol,
            alpha: self.alpha,
            expm: self.expm.into(),
            dt: self.dt,
            marching: self.marching,
            k_cap: self.k_cap,
            window_budget: self.window_budget,
        }
    }
}

/// The stochastic block: noise model and Monte Carlo shape. Exactly one of
/// `sigma` (isotropic `sigma * I`) or `z` (explicit diffusion matrix) must be
/// given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<Vec<Vec<f64>>>,
    pub n_paths: usize,
    pub budgets: Vec<usize>,
    pub seed: u64,
}

impl StochasticSpec {
    /// Resolves the diffusion matrix for a `dim`-dimensional state.
    pub fn diffusion(&self, dim: usize) -> CliResult<DMatrix<f64>> {
        match (self.sigma, &self.z) {
            (Some(sigma), None) => Ok(DMatrix::identity(dim, dim) * sigma),
            (None, Some(rows)) => {
                let z = matrix_from_rows(rows, "stochastic.z")?;
                if z.nrows() != dim {
                    return Err(Failure::config(format!(
                        "stochastic.z: {} rows do not match the state dimension {dim}",
                        z.nrows()
                    )));
                }
                Ok(z)
            }
            (Some(_), Some(_)) => {
                Err(Failure::config("stochastic: give exactly one of sigma or z, not both"))
            }
            (None, None) => Err(Failure::config("stochastic: give exactly one of sigma or z")),
        }
    }
}

/// A full scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub system: SystemSpec,
    pub problem: ProblemSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stochastic: Option<StochasticSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Scenario {
    /// Parses a scenario file; parse errors carry the file, line, and column.
    pub fn load(path: &Path) -> CliResult<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Failure::config(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| Failure::config(format!("{}: {e}", path.display())))
    }

    /// Pretty JSON rendering; `load` of the result yields an equal scenario.
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("a scenario always serializes");
        text.push('\n');
        text
    }
}
