//! Averaged control of quasilinear systems under additive noise.
//!
//! The stochastic layer mirrors the deterministic fixed-point solver path
//! for path: [`per_path_picard`] freezes the coefficients along the previous
//! iterate of *this sample path*, synthesizes the minimum-energy control of
//! the frozen system, and advances the iterate through the frozen linear SDE
//! with the path's own Brownian increments. The synthesized control steers
//! the *mean* exactly (the mean of the frozen dynamics is the deterministic
//! system), while individual paths scatter around the target — which is the
//! sense in which the original steering problem is solved "in expectation".
//!
//! [`averaged_control_experiment`] runs the whole Monte Carlo design:
//! for each iteration budget it solves a fresh batch of paths and reports
//! per-budget and pooled sample means. Paths are embarrassingly parallel;
//! every path draws its noise from a counter-based stream keyed by
//! `(seed, path index)`, and aggregation always walks the paths in index
//! order with compensated summation, so reports are bit-identical for any
//! worker count.

use nalgebra::DVector;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linctrl::{min_energy_control, ControlTrajectory};
use crate::nonlinctrl::SolverOptions;
use crate::propagator::transition;
use crate::systems::{ControlProblem, LtvSystem, SdeSystem, TargetMode};
use crate::numeric::vector_is_finite;

/// Brownian increments for one sample path on one grid.
///
/// The increments are reproducible from `(seed, path_index, grid)` alone:
/// the stream is keyed by the master seed and the path index, never by
/// execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    seed: u64,
    path_index: u64,
    grid: Grid,
    increments: Vec<DVector<f64>>,
}

impl NoiseRealization {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// One increment per grid step, each distributed `N(0, dt I)`.
    pub fn increments(&self) -> &[DVector<f64>] {
        &self.increments
    }

    /// Dimension of each increment.
    pub fn noise_dim(&self) -> usize {
        self.increments.first().map_or(0, |w| w.len())
    }

    /// The terminal Brownian value `W(T)`, the plain sum of increments.
    pub fn terminal(&self) -> DVector<f64> {
        let mut w = DVector::zeros(self.noise_dim());
        for dw in &self.increments {
            w += dw;
        }
        w
    }
}

/// Draws the Brownian increments of one path: `noise_dim` components per
/// grid step, i.i.d. `N(0, dt)`. The generator is a counter-based stream
/// seeded by `seed` with the path index as stream id, so paths can be drawn
/// in any order (or concurrently) with identical results.
pub fn brownian_increments(
    grid: &Grid,
    noise_dim: usize,
    seed: u64,
    path_index: u64,
) -> NoiseRealization {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    let scale = grid.dt().sqrt();
    let increments = (0..grid.steps())
        .map(|_| DVector::from_fn(noise_dim, |_, _| scale * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    NoiseRealization { seed, path_index, grid: *grid, increments }
}

/// Euler–Maruyama integration of the controlled SDE
/// `dy = (Ahat(t,y) y + B(t,y) u(t)) dt + Z dW` with the control held at the
/// left node over each step. Returns the state at every grid node.
pub fn euler_maruyama(
    sde: &SdeSystem,
    u: &ControlTrajectory,
    y0: &DVector<f64>,
    noise: &NoiseRealization,
) -> Result<Vec<DVector<f64>>> {
    let grid = noise.grid();
    let qsys = sde.system();
    if u.grid() != grid {
        return Err(Error::invalid("control and noise live on different grids"));
    }
    if u.channels() != qsys.inputs() {
        return Err(Error::invalid(format!(
            "control has {} channels but the system has {} inputs",
            u.channels(),
            qsys.inputs()
        )));
    }
    if y0.len() != qsys.dim() {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, expected {}",
            y0.len(),
            qsys.dim()
        )));
    }
    if !vector_is_finite(y0) {
        return Err(Error::invalid("initial state must be finite"));
    }
    if noise.noise_dim() != sde.noise_dim() {
        return Err(Error::invalid(format!(
            "noise realization has dimension {} but the diffusion expects {}",
            noise.noise_dim(),
            sde.noise_dim()
        )));
    }
    let dt = grid.dt();
    let guard = 1e6 * (1.0 + y0.norm());
    let mut states = Vec::with_capacity(grid.len());
    states.push(y0.clone());
    for k in 0..grid.steps() {
        let t = grid.t(k);
        let y = &states[k];
        let drift = qsys.full_drift(t, y) * y + qsys.input(t, y) * u.at(k);
        let next = y + drift * dt + sde.diffusion() * &noise.increments()[k];
        if !vector_is_finite(&next) || next.norm() > guard {
            return Err(Error::BlowUp {
                node: k + 1,
                t: grid.t(k + 1),
                detail: "stochastic path diverged".to_string(),
            });
        }
        states.push(next);
    }
    Ok(states)
}

/// Pathwise fixed-point solve: the deterministic iteration with the frozen
/// linear *SDE* as its simulation leg, so the coefficients are frozen along
/// this path's own previous iterate. Returns the nonlinear re-simulation
/// (driven by the final control and the same increments) together with that
/// control. Errors carry the path index.
///
/// The synthesis grid is the noise realization's grid; `opts.dt` is not
/// consulted here. Relaxation is likewise not applied: each iterate steers
/// the frozen mean to the plain target.
pub fn per_path_picard(
    sde: &SdeSystem,
    problem: &ControlProblem,
    noise: &NoiseRealization,
    opts: &SolverOptions,
) -> Result<(Vec<DVector<f64>>, ControlTrajectory)> {
    let attempt = (|| -> Result<(Vec<DVector<f64>>, ControlTrajectory)> {
        opts.validate()?;
        if problem.mode() != TargetMode::InExpectation {
            return Err(Error::invalid(
                "pathwise synthesis requires an in-expectation problem; \
                 exact targets belong to the deterministic solvers",
            ));
        }
        let qsys = sde.system();
        if problem.dim() != qsys.dim() {
            return Err(Error::invalid(format!(
                "problem dimension {} does not match the system dimension {}",
                problem.dim(),
                qsys.dim()
            )));
        }
        let grid = *noise.grid();
        if (problem.horizon() - grid.horizon()).abs() > 1e-9 * grid.horizon().max(1.0) {
            return Err(Error::invalid(format!(
                "problem horizon {} does not match the noise grid horizon {}",
                problem.horizon(),
                grid.horizon()
            )));
        }

        // Initial iterate: the straight line from y0 to yT.
        let mut v: Vec<DVector<f64>> = (0..grid.len())
            .map(|k| {
                let theta = k as f64 / grid.steps() as f64;
                problem.initial() * (1.0 - theta) + problem.target() * theta
            })
            .collect();
        let mut u_prev = ControlTrajectory::zero(grid, qsys.inputs());
        let mut last: Option<ControlTrajectory> = None;
        for _ in 1..=opts.max_iter {
            let ltv = LtvSystem::freeze(qsys, &grid, &v)?;
            let tset = transition(&ltv, opts.expm)?;
            let stage = ControlProblem::new(
                problem.initial().clone(),
                problem.target().clone(),
                grid.horizon(),
                TargetMode::Exact,
            )?;
            let u = min_energy_control(&tset, &ltv, &stage)?;
            let frozen_sde = SdeSystem::new(ltv.to_system(), sde.diffusion().clone())?;
            v = euler_maruyama(&frozen_sde, &u, problem.initial(), noise)?;
            let delta = u.relative_linf_delta(&u_prev);
            u_prev = u.clone();
            last = Some(u);
            if delta < opts.tol {
                break;
            }
        }
        let u = last.expect("the iteration budget is at least 1");
        let path = euler_maruyama(sde, &u, problem.initial(), noise)?;
        Ok((path, u))
    })();
    attempt.map_err(|e| Error::Path { path_index: noise.path_index(), source: Box::new(e) })
}

/// One excluded sample path in a Monte Carlo report.
#[derive(Debug, Clone, PartialEq)]
pub struct PathFailure {
    pub path_index: u64,
    pub budget: usize,
    pub message: String,
}

/// Monte Carlo summary of [`averaged_control_experiment`].
#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloReport {
    /// Master seed the experiment was keyed by.
    pub seed: u64,
    /// Iteration budgets, one batch of paths each.
    pub budgets: Vec<usize>,
    /// Sample mean of the reached finals per budget.
    pub budget_means: Vec<DVector<f64>>,
    /// Mean over every successful path of every budget.
    pub pooled_mean: DVector<f64>,
    /// Reached finals per budget, in path order (failures excluded).
    pub finals: Vec<Vec<DVector<f64>>>,
    /// Paths excluded from the means, with their failure messages.
    pub failures: Vec<PathFailure>,
}

/// Componentwise arithmetic mean of a non-empty set of finals, accumulated
/// with compensated summation so the result does not depend on how callers
/// grouped the values beforehand.
pub fn expectation(finals: &[DVector<f64>]) -> Result<DVector<f64>> {
    let first = finals
        .first()
        .ok_or_else(|| Error::invalid("expectation of an empty set of finals"))?;
    let d = first.len();
    let mut sum = vec![0.0f64; d];
    let mut comp = vec![0.0f64; d];
    for f in finals {
        if f.len() != d {
            return Err(Error::invalid("finals must share one dimension"));
        }
        for i in 0..d {
            let x = f[i];
            let t = sum[i] + x;
            if sum[i].abs() >= x.abs() {
                comp[i] += (sum[i] - t) + x;
            } else {
                comp[i] += (x - t) + sum[i];
            }
            sum[i] = t;
        }
    }
    let n = finals.len() as f64;
    Ok(DVector::from_iterator(d, (0..d).map(|i| (sum[i] + comp[i]) / n)))
}

/// The full Monte Carlo design: for each iteration budget, solve `n_paths`
/// fresh sample paths (path indices `budget_position * n_paths + j`, so no
/// increments are reused across budgets), then report per-budget means and
/// the pooled mean over all paths. Failed paths are excluded from the means
/// and recorded. The report is a pure function of the arguments: paths run
/// in parallel, but aggregation is in path order.
pub fn averaged_control_experiment(
    sde: &SdeSystem,
    problem: &ControlProblem,
    n_paths: usize,
    budgets: &[usize],
    seed: u64,
    opts: &SolverOptions,
) -> Result<MonteCarloReport> {
    opts.validate()?;
    if n_paths == 0 {
        return Err(Error::invalid("the experiment needs at least one path per budget"));
    }
    if budgets.is_empty() {
        return Err(Error::invalid("the experiment needs at least one iteration budget"));
    }
    if budgets.iter().any(|b| *b == 0) {
        return Err(Error::invalid("iteration budgets must be at least 1"));
    }
    let grid = Grid::new(problem.horizon(), opts.dt)?;
    let total = budgets.len() * n_paths;
    let runs: Vec<Result<DVector<f64>>> = (0..total)
        .into_par_iter()
        .map(|g| {
            let budget = budgets[g / n_paths];
            let noise = brownian_increments(&grid, sde.noise_dim(), seed, g as u64);
            let wopts = SolverOptions { max_iter: budget, ..*opts };
            per_path_picard(sde, problem, &noise, &wopts)
                .map(|(path, _)| path.last().expect("paths are non-empty").clone())
        })
        .collect();

    let mut finals: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(n_paths); budgets.len()];
    let mut failures = Vec::new();
    for (g, run) in runs.into_iter().enumerate() {
        let b = g / n_paths;
        match run {
            Ok(final_state) => finals[b].push(final_state),
            Err(e) => failures.push(PathFailure {
                path_index: g as u64,
                budget: budgets[b],
                message: e.to_string(),
            }),
        }
    }
    let mut budget_means = Vec::with_capacity(budgets.len());
    for (b, batch) in finals.iter().enumerate() {
        if batch.is_empty() {
            return Err(Error::invalid(format!(
                "all {n_paths} paths failed for iteration budget {}",
                budgets[b]
            )));
        }
        budget_means.push(expectation(batch)?);
    }
    let pooled: Vec<DVector<f64>> = finals.iter().flatten().cloned().collect();
    let pooled_mean = expectation(&pooled)?;
    Ok(MonteCarloReport {
        seed,
        budgets: budgets.to_vec(),
        budget_means,
        pooled_mean,
        finals,
        failures,
    })
}
