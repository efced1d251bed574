//! Exact control of quasilinear systems by fixed-point iteration.
//!
//! The driver [`picard_solve`] solves the steering problem for
//! `y' = -A(t,y) y + B(t,y) u` by repeatedly freezing the coefficients along
//! the previous trajectory iterate, synthesizing the minimum-energy control
//! of the frozen linear system, and simulating that frozen system to obtain
//! the next iterate:
//!
//! ```text
//!     v0   = straight-line interpolant from y0 to yT,
//!     u^n  = min-energy control of the system frozen along v^{n-1},
//!     v^n  = trajectory of that frozen system driven by u^n.
//! ```
//!
//! Iteration stops when the relative L-infinity change of the control drops
//! below the tolerance (default 1%) or the iteration budget is exhausted.
//! What the report calls "reached" is always measured on a nonlinear
//! re-simulation of the original quasilinear system driven by the synthesized
//! control; the frozen system hits its target by construction, so only the
//! re-simulation says anything about the actual problem.
//!
//! Two refinements are provided. A relaxation factor `alpha` biases the
//! target fed to the next iteration by the miss of the current one
//! ([`relax_target`]), which speeds up the final approach. And
//! [`march_solve`] globalizes the method: when the full horizon is too long
//! for a single Gramian solve (the transition factors grow like
//! `exp(|Ahat| T)` and the Gramian condition number like their square), the
//! horizon is split into windows sized by the scaling constant of
//! [`choose_k`], each window steering the current state toward the final
//! target. Short windows keep the frozen problems well conditioned and the
//! freeze map strongly contractive, so the concatenated solve succeeds on
//! instances where the single-shot solver provably cannot assemble a usable
//! Gramian.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::linctrl::{min_energy_control, simulate, ControlTrajectory};
use crate::numeric::{next_power_of_two_at_least, spectral_norm, vector_is_finite};
use crate::propagator::{transition, ExpmMethod};
use crate::systems::{ControlProblem, LtvSystem, QuasilinearSystem, TargetMode};

/// Tuning knobs shared by [`picard_solve`] and [`march_solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Iteration budget for a single fixed-point solve.
    pub max_iter: usize,
    /// Stop when the relative L-infinity change of `u` drops below this.
    pub tol: f64,
    /// Target relaxation factor in `[0, 1)`; `0` disables relaxation.
    pub alpha: f64,
    /// Matrix-exponential method used for the transition factors.
    pub expm: ExpmMethod,
    /// Time step of the synthesis grid.
    pub dt: f64,
    /// Scenario-level flag: solve by marching rather than single-shot.
    pub marching: bool,
    /// Hard cap on the number of marching windows.
    pub k_cap: u64,
    /// Iteration budget per marching window.
    pub window_budget: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 6,
            tol: 1e-2,
            alpha: 0.0,
            expm: ExpmMethod::Accurate,
            dt: 1e-3,
            marching: false,
            k_cap: 1 << 20,
            window_budget: 6,
        }
    }
}

impl SolverOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("iteration budget must be at least 1"));
        }
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::invalid(format!("tolerance must be positive, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!(
                "relaxation factor must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("time step must be positive, got {}", self.dt)));
        }
        if self.k_cap == 0 {
            return Err(Error::invalid("window cap must be at least 1"));
        }
        if self.window_budget == 0 {
            return Err(Error::invalid("window iteration budget must be at least 1"));
        }
        Ok(())
    }
}

/// Result of a fixed-point or marching solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    /// Final synthesized control (concatenated across windows when marching).
    pub u: ControlTrajectory,
    /// Nonlinear re-simulation of the original system driven by `u`, one
    /// state per grid node.
    pub y: Vec<DVector<f64>>,
    /// Relative L-infinity change of the control at each iteration. The
    /// first iteration is compared against the zero control, so its delta is
    /// `1` whenever the first control is nonzero.
    pub deltas: Vec<f64>,
    /// Final state of the nonlinear re-simulation at each iteration.
    pub reached: Vec<DVector<f64>>,
    /// Window boundaries: `[0, T]` for a single-shot solve, the marching
    /// partition of `[0, T]` otherwise.
    pub windows: Vec<f64>,
    /// Whether the last (or only) fixed-point iteration met the tolerance.
    pub converged: bool,
    /// Total number of iterations performed (summed over windows).
    pub iterations: usize,
}

impl SolveReport {
    /// Synthesis grid of the reported control.
    pub fn grid(&self) -> &Grid {
        self.u.grid()
    }

    /// Final state of the nonlinear re-simulation.
    pub fn final_state(&self) -> &DVector<f64> {
        self.y.last().expect("a solve report always carries at least one state")
    }
}

/// Relaxed target for the next iteration: `yT + alpha (yT - reached)`,
/// componentwise. Affine in `reached`, with fixed point `reached = yT`.
pub fn relax_target(
    target: &DVector<f64>,
    reached: &DVector<f64>,
    alpha: f64,
) -> Result<DVector<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::invalid(format!(
            "relaxation factor must lie in [0, 1), got {alpha}"
        )));
    }
    if target.len() != reached.len() {
        return Err(Error::invalid(format!(
            "target has dimension {} but the reached state has {}",
            target.len(),
            reached.len()
        )));
    }
    if !vector_is_finite(reached) {
        return Err(Error::invalid("reached state must be finite"));
    }
    Ok(target + (target - reached) * alpha)
}

/// Scaling constant for one marching window:
/// `max(1, sup_k |Ahat(t_k)|, sup_k |Bhat(t_k) u(t_k)|, sup_k |u(t_k)|)`
/// rounded up to the next power of two (spectral norm for matrices,
/// Euclidean for vectors). Dividing the window dynamics by this constant
/// brings every coefficient bound at or below one.
pub fn choose_k(ltv: &LtvSystem, u: &ControlTrajectory) -> u64 {
    let grid = ltv.grid();
    let mut bound: f64 = 1.0;
    for k in 0..grid.len() {
        let uk = u.eval(grid.t(k));
        bound = bound
            .max(spectral_norm(ltv.drift_at(k)))
            .max((ltv.input_at(k) * &uk).norm())
            .max(uk.norm());
    }
    next_power_of_two_at_least(bound)
}

fn check_exact_mode(qsys: &QuasilinearSystem, problem: &ControlProblem) -> Result<()> {
    if problem.mode() != TargetMode::Exact {
        return Err(Error::invalid(
            "the deterministic solvers require an exact-mode problem; \
             in-expectation targets belong to the stochastic layer",
        ));
    }
    if problem.dim() != qsys.dim() {
        return Err(Error::invalid(format!(
            "problem dimension {} does not match the system dimension {}",
            problem.dim(),
            qsys.dim()
        )));
    }
    Ok(())
}

/// Divergence threshold: simulations are aborted once any state norm
/// exceeds `1e6 (1 + |y0| + |yT|)`.
fn guard_level(problem: &ControlProblem) -> f64 {
    1e6 * (1.0 + problem.initial().norm() + problem.target().norm())
}

fn check_guard(states: &[DVector<f64>], guard: f64, grid: &Grid) -> Result<()> {
    for (k, y) in states.iter().enumerate() {
        if y.norm() > guard {
            return Err(Error::BlowUp {
                node: k,
                t: grid.t(k),
                detail: format!("state norm {:.3e} exceeded the divergence guard {guard:.3e}", y.norm()),
            });
        }
    }
    Ok(())
}

/// Classical fourth-order simulation of the original quasilinear system
/// `y' = -A(t,y) y + B(t,y) u(t)` with the control interpolated linearly
/// between grid nodes. Aborts with a blow-up error when a state goes
/// non-finite or past the divergence guard.
fn simulate_quasilinear(
    qsys: &QuasilinearSystem,
    u: &ControlTrajectory,
    y0: &DVector<f64>,
    guard: f64,
) -> Result<Vec<DVector<f64>>> {
    let grid = *u.grid();
    let dt = grid.dt();
    let rhs = |t: f64, y: &DVector<f64>, uval: &DVector<f64>| -> DVector<f64> {
        qsys.full_drift(t, y) * y + qsys.input(t, y) * uval
    };
    let mut states = Vec::with_capacity(grid.len());
    states.push(y0.clone());
    for k in 0..grid.steps() {
        let t = grid.t(k);
        let t_mid = t + 0.5 * dt;
        let y = &states[k];
        let u_mid = (u.at(k) + u.at(k + 1)) * 0.5;
        let k1 = rhs(t, y, u.at(k));
        let k2 = rhs(t_mid, &(y + &k1 * (0.5 * dt)), &u_mid);
        let k3 = rhs(t_mid, &(y + &k2 * (0.5 * dt)), &u_mid);
        let k4 = rhs(t + dt, &(y + &k3 * dt), u.at(k + 1));
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        let bad = !vector_is_finite(&next) || next.norm() > guard;
        if bad {
            return Err(Error::BlowUp {
                node: k + 1,
                t: grid.t(k + 1),
                detail: "nonlinear re-simulation diverged".to_string(),
            });
        }
        states.push(next);
    }
    Ok(states)
}

/// Fixed-point solve of the quasilinear steering problem. See the module
/// documentation for the iteration; errors from any iterate are wrapped with
/// the iteration index.
pub fn picard_solve(
    qsys: &QuasilinearSystem,
    problem: &ControlProblem,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    check_exact_mode(qsys, problem)?;
    let grid = Grid::new(problem.horizon(), opts.dt)?;
    let guard = guard_level(problem);

    // Initial iterate: the straight line from y0 to yT.
    let mut v: Vec<DVector<f64>> = (0..grid.len())
        .map(|k| {
            let theta = k as f64 / grid.steps() as f64;
            problem.initial() * (1.0 - theta) + problem.target() * theta
        })
        .collect();

    let mut u_prev = ControlTrajectory::zero(grid, qsys.inputs());
    let mut target = problem.target().clone();
    let mut deltas = Vec::new();
    let mut reached = Vec::new();
    let mut last: Option<(ControlTrajectory, Vec<DVector<f64>>)> = None;
    let mut converged = false;
    let mut iterations = 0;

    for n in 1..=opts.max_iter {
        let outcome = (|| -> Result<_> {
            let ltv = LtvSystem::freeze(qsys, &grid, &v)?;
            let tset = transition(&ltv, opts.expm)?;
            let stage = ControlProblem::new(
                problem.initial().clone(),
                target.clone(),
                grid.horizon(),
                TargetMode::Exact,
            )?;
            let u = min_energy_control(&tset, &ltv, &stage)?;
            let frozen = simulate(&ltv, &u, problem.initial())?;
            check_guard(&frozen, guard, &grid)?;
            let resim = simulate_quasilinear(qsys, &u, problem.initial(), guard)?;
            Ok((u, frozen, resim))
        })();
        let (u, frozen, resim) =
            outcome.map_err(|e| Error::Iteration { iteration: n, source: Box::new(e) })?;

        deltas.push(u.relative_linf_delta(&u_prev));
        reached.push(resim.last().expect("simulation returns at least one state").clone());
        target = relax_target(problem.target(), reached.last().unwrap(), opts.alpha)?;
        v = frozen;
        u_prev = u.clone();
        last = Some((u, resim));
        iterations = n;
        if deltas[n - 1] < opts.tol {
            converged = true;
            break;
        }
    }

    let (u, y) = last.expect("the iteration budget is at least 1");
    Ok(SolveReport {
        u,
        y,
        deltas,
        reached,
        windows: vec![0.0, grid.horizon()],
        converged,
        iterations,
    })
}

/// Straight-line state samples from `from` to `to` on a grid.
fn line_iterate(grid: &Grid, from: &DVector<f64>, to: &DVector<f64>) -> Vec<DVector<f64>> {
    (0..grid.len())
        .map(|k| {
            let theta = k as f64 / grid.steps() as f64;
            from * (1.0 - theta) + to * theta
        })
        .collect()
}

/// Globalized solve by interval marching. Windows are sized as
/// `(remaining horizon) / K` with `K` from [`choose_k`] on the data frozen
/// along the straight line to the target (using the control from a
/// tentative synthesis over the remaining horizon when one is obtainable,
/// and the zero control when that synthesis itself fails — which is
/// precisely the situation marching exists to rescue). Each window runs
/// [`picard_solve`] from the current state toward the final target; the
/// window's reached state seeds the next window. Window boundaries are
/// snapped to the synthesis grid, every window spans at least two grid
/// steps, and a final remainder shorter than two steps is absorbed into the
/// last window, so the partition is exact and finite.
pub fn march_solve(
    qsys: &QuasilinearSystem,
    problem: &ControlProblem,
    opts: &SolverOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    check_exact_mode(qsys, problem)?;
    let grid = Grid::new(problem.horizon(), opts.dt)?;
    let total = grid.steps();

    let mut consumed = 0usize;
    let mut y_cur = problem.initial().clone();
    let mut all_u: Vec<DVector<f64>> = Vec::with_capacity(grid.len());
    let mut all_y: Vec<DVector<f64>> = Vec::with_capacity(grid.len());
    all_y.push(y_cur.clone());
    let mut deltas = Vec::new();
    let mut reached = Vec::new();
    let mut boundaries = vec![0.0];
    let mut windows_done: u64 = 0;
    let mut iterations = 0;
    let mut last_converged = false;

    while consumed < total {
        if windows_done >= opts.k_cap {
            // Assemble what exists so far; the remainder of the horizon is
            // padded with the zero control and the frozen current state.
            let mut u_part = all_u.clone();
            u_part.resize(grid.len(), DVector::zeros(qsys.inputs()));
            let mut y_part = all_y.clone();
            y_part.resize(grid.len(), y_cur.clone());
            let partial = SolveReport {
                u: ControlTrajectory::from_samples(grid, u_part)?,
                y: y_part,
                deltas,
                reached,
                windows: boundaries,
                converged: false,
                iterations,
            };
            return Err(Error::NonTermination {
                windows: windows_done as usize,
                cap: opts.k_cap,
                partial: Box::new(partial),
            });
        }
        let window_index = windows_done as usize + 1;
        let remaining = total - consumed;
        let t_cur = grid.t(consumed);
        let shifted = qsys.time_shifted(t_cur);

        // Size the window from the data frozen along the line to the target
        // over the whole remaining horizon.
        let rem_grid = Grid::with_steps(grid.horizon() - t_cur, remaining)
            .map_err(|e| Error::Window { window: window_index, source: Box::new(e) })?;
        let line = line_iterate(&rem_grid, &y_cur, problem.target());
        let frozen = LtvSystem::freeze(&shifted, &rem_grid, &line)
            .map_err(|e| Error::Window { window: window_index, source: Box::new(e) })?;
        let tentative = transition(&frozen, opts.expm)
            .and_then(|tset| {
                let stage = ControlProblem::new(
                    y_cur.clone(),
                    problem.target().clone(),
                    rem_grid.horizon(),
                    TargetMode::Exact,
                )?;
                min_energy_control(&tset, &frozen, &stage)
            })
            .unwrap_or_else(|_| ControlTrajectory::zero(rem_grid, qsys.inputs()));
        let k = choose_k(&frozen, &tentative);

        // Window length in whole grid steps: at least two, and absorb a
        // tail that would leave fewer than two steps behind.
        let mut wsteps = ((remaining as f64 / k as f64).round() as usize).clamp(2, remaining);
        if remaining - wsteps < 2 {
            wsteps = remaining;
        }
        let full_cover = consumed == 0 && wsteps == total;
        let w_horizon =
            if full_cover { problem.horizon() } else { wsteps as f64 * grid.dt() };

        let stage = ControlProblem::new(
            y_cur.clone(),
            problem.target().clone(),
            w_horizon,
            TargetMode::Exact,
        )
        .map_err(|e| Error::Window { window: window_index, source: Box::new(e) })?;
        let wopts = SolverOptions { max_iter: opts.window_budget, marching: false, ..*opts };
        let report = picard_solve(&shifted, &stage, &wopts)
            .map_err(|e| Error::Window { window: window_index, source: Box::new(e) })?;

        debug_assert_eq!(report.u.grid().steps(), wsteps);
        all_u.extend(report.u.samples()[..wsteps].iter().cloned());
        all_y.extend(report.y[1..=wsteps].iter().cloned());
        deltas.extend(report.deltas.iter().copied());
        reached.extend(report.reached.iter().cloned());
        iterations += report.iterations;
        last_converged = report.converged;
        y_cur = report.y[wsteps].clone();

        consumed += wsteps;
        boundaries.push(grid.t(consumed));
        windows_done += 1;

        if consumed == total {
            all_u.push(report.u.samples()[wsteps].clone());
        }
    }

    Ok(SolveReport {
        u: ControlTrajectory::from_samples(grid, all_u)?,
        y: all_y,
        deltas,
        reached,
        windows: boundaries,
        converged: last_converged,
        iterations,
    })
}
