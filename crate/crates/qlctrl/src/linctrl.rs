//! Exact control of frozen linear time-varying systems.
//!
//! Everything here operates on a sampled system `y' = Ahat(t) y + Bhat(t) u`
//! together with its transition factors. The reachability Gramian in the
//! backward-factor convention is
//!
//! ```text
//!     G = int_0^T Psi(s) Bhat(s) Bhat(s)^T Psi(s)^T ds,
//! ```
//!
//! assembled with composite-trapezoid weights on the shared grid, and the
//! minimum-energy control steering `y0` to `yT` is
//!
//! ```text
//!     u(t) = Bhat(t)^T Psi(t)^T G^{-1} (Psi(T) yT - y0).
//! ```
//!
//! A second, independent route to the same control goes through the adjoint
//! system: minimize the quadratic functional
//!
//! ```text
//!     J(pT) = 1/2 int_0^T |Bhat^T p|^2 dt + <y0, p(0)> - <yT, pT>
//! ```
//!
//! over terminal adjoint states `pT`, where `p' = -Ahat(t)^T p`, `p(T) = pT`;
//! the control is `u = Bhat^T p`. The `1/2` normalization makes the
//! stationarity system directly produce the steering covector (without it
//! the minimizer comes out at half scale and the control must be doubled).
//! Both routes agree to rounding-plus-quadrature accuracy; keeping them
//! separate gives the test suite a genuinely independent oracle.
//!
//! Near-singular Gramians are handled by a Tikhonov ladder: the smallest
//! shift `eps` from a caller-supplied ladder that brings the condition
//! number of `G + eps I` at or below [`CONDITION_CAP`] is used; if none
//! does, the problem is reported uncontrollable together with the offending
//! null direction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::numeric::{matrix_is_finite, vector_is_finite};
use crate::propagator::TransitionSet;
use crate::systems::{ControlProblem, LtvSystem};

/// Condition-number cap for the regularized Gramian solve.
pub const CONDITION_CAP: f64 = 1e12;

/// Default Tikhonov ladder: no shift, then three increasing shifts.
pub const DEFAULT_EPS_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

/// Reachability Gramian together with its spectral summary.
#[derive(Debug, Clone)]
pub struct GramianReport {
    /// Symmetrized Gramian, including the assembly shift `eps * I` if any.
    pub gramian: DMatrix<f64>,
    /// Smallest eigenvalue (of the symmetrized matrix).
    pub lambda_min: f64,
    /// Largest eigenvalue.
    pub lambda_max: f64,
    /// `lambda_max / lambda_min`; infinite when `lambda_min <= 0`.
    pub condition: f64,
    /// Shift included in `gramian` at assembly time (0 when none).
    pub eps: f64,
}

/// Control samples on a grid plus their quadrature energy.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTrajectory {
    grid: Grid,
    values: Vec<DVector<f64>>,
    energy: f64,
}

impl ControlTrajectory {
    /// Wraps node samples; recomputes the trapezoid energy.
    pub fn from_samples(grid: Grid, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!(
                "control trajectory has {} nodes but the grid has {}",
                values.len(),
                grid.len()
            )));
        }
        let n = values[0].len();
        if n == 0 {
            return Err(Error::invalid("control trajectory needs at least one channel"));
        }
        for (k, u) in values.iter().enumerate() {
            if u.len() != n || !vector_is_finite(u) {
                return Err(Error::invalid(format!("bad control sample at node {k}")));
            }
        }
        let energy = (0..grid.len()).map(|k| grid.weight(k) * values[k].norm_squared()).sum();
        Ok(ControlTrajectory { grid, values, energy })
    }

    /// The zero control on a grid.
    pub fn zero(grid: Grid, channels: usize) -> Self {
        ControlTrajectory {
            grid,
            values: vec![DVector::zeros(channels); grid.len()],
            energy: 0.0,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of input channels.
    pub fn channels(&self) -> usize {
        self.values[0].len()
    }

    /// Node sample `u(t_k)`.
    pub fn at(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Linear interpolation between node samples.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        crate::grid::interp_nodes(&self.grid, &self.values, t)
    }

    /// Quadrature energy `int |u|^2 dt` (composite trapezoid).
    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// `max_k |u(t_k)|_inf`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|u| u.amax()).fold(0.0, f64::max)
    }

    /// Relative L-infinity distance to another control on the same grid:
    /// `max_k |u_k - w_k|_inf / max_k |u_k|_inf` (infinite when the
    /// denominator vanishes but the numerator does not).
    pub fn relative_linf_delta(&self, other: &ControlTrajectory) -> f64 {
        let num = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max);
        let den = self.sup_norm();
        if num == 0.0 {
            0.0
        } else if den == 0.0 {
            f64::INFINITY
        } else {
            num / den
        }
    }
}

/// Adjoint-route byproducts: terminal covector, adjoint trajectory, and the
/// value of the quadratic functional at the minimizer.
#[derive(Debug, Clone)]
pub struct AdjointState {
    /// Minimizing terminal state `pT`.
    pub terminal: DVector<f64>,
    /// Backward-integrated adjoint `p(t_k)` on every node.
    pub trajectory: Vec<DVector<f64>>,
    /// `J(pT)` at the minimizer (always `<= 0`; equals `-energy/2` there).
    pub functional: f64,
}

/// Rank of the controllability matrix `[B, AB, ..., A^{d-1} B]` for a
/// constant pair, via singular values with threshold
/// `d * sigma_max * 2^-52`. Returns `(rank, rank == d)`.
pub fn kalman_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(usize, bool)> {
    let d = a.nrows();
    if a.ncols() != d || d == 0 {
        return Err(Error::invalid(format!("kalman test needs a square A, got {}x{}", d, a.ncols())));
    }
    if b.nrows() != d || b.ncols() == 0 {
        return Err(Error::invalid(format!(
            "kalman test needs B with {d} rows, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    if !matrix_is_finite(a) || !matrix_is_finite(b) {
        return Err(Error::invalid("kalman test needs finite matrices"));
    }
    let n = b.ncols();
    let mut block = b.clone();
    let mut ctrb = DMatrix::zeros(d, d * n);
    for j in 0..d {
        ctrb.view_mut((0, j * n), (d, n)).copy_from(&block);
        if j + 1 < d {
            block = a * &block;
        }
    }
    let svals = ctrb.singular_values();
    let sigma_max = svals.max();
    if sigma_max <= 0.0 {
        return Ok((0, false));
    }
    let threshold = d as f64 * sigma_max * f64::EPSILON;
    let rank = svals.iter().filter(|&&s| s > threshold).count();
    Ok((rank, rank == d))
}

fn check_pair(tset: &TransitionSet, ltv: &LtvSystem) -> Result<()> {
    if tset.grid() != ltv.grid() {
        return Err(Error::invalid("transition set and system live on different grids"));
    }
    if tset.dim() != ltv.dim() {
        return Err(Error::invalid(format!(
            "transition set dimension {} does not match the system dimension {}",
            tset.dim(),
            ltv.dim()
        )));
    }
    Ok(())
}

fn check_problem(ltv: &LtvSystem, problem: &ControlProblem) -> Result<()> {
    if problem.dim() != ltv.dim() {
        return Err(Error::invalid(format!(
            "problem dimension {} does not match the system dimension {}",
            problem.dim(),
            ltv.dim()
        )));
    }
    let t = ltv.grid().horizon();
    if (problem.horizon() - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::invalid(format!(
            "problem horizon {} does not match the grid horizon {t}",
            problem.horizon()
        )));
    }
    Ok(())
}

/// Spectral summary of a symmetric PSD matrix, shared by the Gramian and the
/// adjoint Hessian.
fn analyze_symmetric(g: DMatrix<f64>, eps: f64) -> GramianReport {
    let g = (&g + g.transpose()) * 0.5;
    let eig = g.clone().symmetric_eigen();
    let mut lambda_min = f64::INFINITY;
    let mut lambda_max = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lambda_min = lambda_min.min(l);
        lambda_max = lambda_max.max(l);
    }
    let condition =
        if lambda_min > 0.0 { lambda_max / lambda_min } else { f64::INFINITY };
    GramianReport { gramian: g, lambda_min, lambda_max, condition, eps }
}

/// Assembles the reachability Gramian
/// `G = sum_k w_k Psi_k Bhat_k Bhat_k^T Psi_k^T (+ eps I)`
/// with trapezoid weights, symmetrized exactly.
pub fn gramian(tset: &TransitionSet, ltv: &LtvSystem, eps: f64) -> Result<GramianReport> {
    check_pair(tset, ltv)?;
    if !eps.is_finite() || eps < 0.0 {
        return Err(Error::invalid(format!("gramian shift must satisfy eps >= 0, got {eps}")));
    }
    let grid = ltv.grid();
    let d = ltv.dim();
    let mut g = DMatrix::<f64>::zeros(d, d);
    for k in 0..grid.len() {
        let pb = tset.backward_at(k) * ltv.input_at(k);
        g += &pb * pb.transpose() * grid.weight(k);
    }
    if eps > 0.0 {
        for i in 0..d {
            g[(i, i)] += eps;
        }
    }
    if !matrix_is_finite(&g) {
        return Err(Error::Overflow("gramian assembly overflowed".to_string()));
    }
    Ok(analyze_symmetric(g, eps))
}

/// Smallest Gramian eigenvalue: the margin by which the frozen system is
/// controllable on its horizon (0 for a singular Gramian).
pub fn observability_margin(report: &GramianReport) -> f64 {
    report.lambda_min
}

/// Solves `(G + eps I) x = rhs` with the smallest ladder shift that brings
/// the condition number at or below [`CONDITION_CAP`]. Returns the solution
/// and the shift actually used. When the whole ladder fails, the error
/// carries the null-space witness (eigenvector of the smallest eigenvalue).
pub fn regularized_gramian_solve(
    report: &GramianReport,
    rhs: &DVector<f64>,
    ladder: &[f64],
) -> Result<(DVector<f64>, f64)> {
    let d = report.gramian.nrows();
    if rhs.len() != d {
        return Err(Error::invalid(format!(
            "right-hand side has dimension {}, expected {d}",
            rhs.len()
        )));
    }
    if !vector_is_finite(rhs) {
        return Err(Error::invalid("right-hand side must be finite"));
    }
    if ladder.is_empty() {
        return Err(Error::invalid("regularization ladder must not be empty"));
    }
    if ladder.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::invalid("regularization ladder entries must satisfy eps >= 0"));
    }
    let eig = report.gramian.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.max();
    let lambda_min = eig.eigenvalues.min();
    if lambda_max > 0.0 {
        for &eps in ladder {
            let lo = lambda_min + eps;
            let hi = lambda_max + eps;
            if lo > 0.0 && hi <= CONDITION_CAP * lo {
                // Solve in the eigenbasis: x = V (L + eps)^{-1} V^T rhs.
                let mut coeffs = eig.eigenvectors.transpose() * rhs;
                for (i, c) in coeffs.iter_mut().enumerate() {
                    *c /= eig.eigenvalues[i] + eps;
                }
                let x = &eig.eigenvectors * coeffs;
                return Ok((x, eps));
            }
        }
    }
    // Ladder exhausted (or the Gramian is identically zero): report the
    // direction that cannot be reached.
    let mut witness = eig.eigenvectors.column(eig.eigenvalues.imin()).clone_owned();
    // Canonical sign for reproducible reports.
    if let Some(first) = witness.iter().find(|x| x.abs() > 0.0) {
        if *first < 0.0 {
            witness = -witness;
        }
    }
    Err(Error::Uncontrollable { lambda_min, lambda_max, witness })
}

/// Minimum-energy control steering `problem.initial()` to `problem.target()`
/// across the grid horizon:
/// `u(t_k) = Bhat_k^T Psi_k^T G^{-1} (Psi(T) yT - y0)`.
pub fn min_energy_control(
    tset: &TransitionSet,
    ltv: &LtvSystem,
    problem: &ControlProblem,
) -> Result<ControlTrajectory> {
    check_pair(tset, ltv)?;
    check_problem(ltv, problem)?;
    let report = gramian(tset, ltv, 0.0)?;
    let rho = tset.final_backward() * problem.target() - problem.initial();
    let (x, _eps) = regularized_gramian_solve(&report, &rho, &DEFAULT_EPS_LADDER)?;
    let grid = ltv.grid();
    let values: Vec<_> =
        (0..grid.len()).map(|k| ltv.input_at(k).transpose() * (tset.backward_at(k).transpose() * &x)).collect();
    ControlTrajectory::from_samples(*grid, values)
}

/// Adjoint (dual) route to the same control: minimizes the quadratic
/// functional over terminal adjoint states and integrates the adjoint ODE
/// backward with a classical fourth-order step. Returns the control together
/// with the adjoint data. Agrees with [`min_energy_control`] to quadrature
/// accuracy but shares none of its Gramian machinery.
pub fn adjoint_control(
    tset: &TransitionSet,
    ltv: &LtvSystem,
    problem: &ControlProblem,
) -> Result<(ControlTrajectory, AdjointState)> {
    check_pair(tset, ltv)?;
    check_problem(ltv, problem)?;
    let grid = ltv.grid();
    let d = ltv.dim();
    let n = grid.steps();
    let dt = grid.dt();

    // Backward solution operators S(t_k) of p' = -Ahat^T p with S(T) = I,
    // so that p(t_k) = S(t_k) pT.
    let mut ops = vec![DMatrix::<f64>::zeros(d, d); grid.len()];
    ops[n] = DMatrix::identity(d, d);
    for k in (0..n).rev() {
        let g_right = -ltv.drift_at(k + 1).transpose(); // at t_{k+1}
        let g_mid = -ltv.drift_mid(k).transpose(); // at t_k + dt/2
        let g_left = -ltv.drift_at(k).transpose(); // at t_k
        let s = &ops[k + 1];
        let h = -dt;
        let k1 = &g_right * s;
        let k2 = &g_mid * &(s + &k1 * (0.5 * h));
        let k3 = &g_mid * &(s + &k2 * (0.5 * h));
        let k4 = &g_left * &(s + &k3 * h);
        let next = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !matrix_is_finite(&next) {
            return Err(Error::Overflow(format!(
                "adjoint propagator overflowed at node {k} (t = {:.6})",
                grid.t(k)
            )));
        }
        ops[k] = next;
    }

    // Stationarity system of J: H pT = yT - S(0)^T y0 with
    // H = sum_k w_k S_k^T Bhat_k Bhat_k^T S_k.
    let mut hessian = DMatrix::<f64>::zeros(d, d);
    for k in 0..grid.len() {
        let sb = ops[k].transpose() * ltv.input_at(k);
        hessian += &sb * sb.transpose() * grid.weight(k);
    }
    let report = analyze_symmetric(hessian, 0.0);
    let rhs = problem.target() - ops[0].transpose() * problem.initial();
    let (terminal, _eps) = regularized_gramian_solve(&report, &rhs, &DEFAULT_EPS_LADDER)?;

    let trajectory: Vec<_> = ops.iter().map(|s| s * &terminal).collect();
    let values: Vec<_> = (0..grid.len())
        .map(|k| ltv.input_at(k).transpose() * &trajectory[k])
        .collect();
    let control = ControlTrajectory::from_samples(*grid, values)?;
    let functional = 0.5 * control.energy() + problem.initial().dot(&trajectory[0])
        - problem.target().dot(&terminal);
    Ok((control, AdjointState { terminal, trajectory, functional }))
}

/// Classical fourth-order simulation of `y' = Ahat(t) y + Bhat(t) u(t)` with
/// the control interpolated linearly between nodes. Returns the state at
/// every grid node.
pub fn simulate(
    ltv: &LtvSystem,
    control: &ControlTrajectory,
    y0: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    if control.grid() != ltv.grid() {
        return Err(Error::invalid("control and system live on different grids"));
    }
    if control.channels() != ltv.inputs() {
        return Err(Error::invalid(format!(
            "control has {} channels but the system has {} inputs",
            control.channels(),
            ltv.inputs()
        )));
    }
    if y0.len() != ltv.dim() {
        return Err(Error::invalid(format!(
            "initial state has dimension {}, expected {}",
            y0.len(),
            ltv.dim()
        )));
    }
    if !vector_is_finite(y0) {
        return Err(Error::invalid("initial state must be finite"));
    }
    let grid = ltv.grid();
    let dt = grid.dt();
    let mut states = Vec::with_capacity(grid.len());
    states.push(y0.clone());
    for k in 0..grid.steps() {
        let y = &states[k];
        let a_mid = ltv.drift_mid(k);
        let b_mid = ltv.input_mid(k);
        let u_mid = (control.at(k) + control.at(k + 1)) * 0.5;
        let f_mid_u = &b_mid * &u_mid;
        let k1 = ltv.drift_at(k) * y + ltv.input_at(k) * control.at(k);
        let k2 = &a_mid * &(y + &k1 * (0.5 * dt)) + &f_mid_u;
        let k3 = &a_mid * &(y + &k2 * (0.5 * dt)) + &f_mid_u;
        let k4 = ltv.drift_at(k + 1) * (y + &k3 * dt) + ltv.input_at(k + 1) * control.at(k + 1);
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !vector_is_finite(&next) {
            return Err(Error::BlowUp {
                node: k + 1,
                t: grid.t(k + 1),
                detail: "simulated state became non-finite".to_string(),
            });
        }
        states.push(next);
    }
    Ok(states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::{transition, ExpmMethod};
    use crate::systems::TargetMode;

    fn constant_ltv(grid: Grid, a: DMatrix<f64>, b: DMatrix<f64>) -> LtvSystem {
        LtvSystem::from_samples(
            grid,
            vec![a; grid.len()],
            vec![b; grid.len()],
        )
        .unwrap()
    }

    /// Scalar benchmark: full drift -1, unit input, horizon 1. Closed forms:
    /// Psi(t) = e^t, G = (e^2 - 1)/2, and for steering 0 -> 1 the control is
    /// u(t) = 2 e^{t+1} / (e^2 - 1).
    fn scalar_bench(dt: f64) -> (LtvSystem, TransitionSet) {
        let grid = Grid::new(1.0, dt).unwrap();
        let ltv = constant_ltv(grid, DMatrix::from_element(1, 1, -1.0), DMatrix::from_element(1, 1, 1.0));
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        (ltv, tset)
    }

    #[test]
    fn kalman_rank_closed_cases() {
        // Chain integrator, forced at the far end: controllable.
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert_eq!(kalman_rank(&a, &b).unwrap(), (2, true));
        // Forced at the head: the second state is unreachable.
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(kalman_rank(&a, &b).unwrap(), (1, false));
        // Distinct diagonal modes, both excited.
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        assert_eq!(kalman_rank(&a, &b).unwrap(), (2, true));
        // Nothing at all.
        assert_eq!(
            kalman_rank(&DMatrix::zeros(1, 1), &DMatrix::zeros(1, 1)).unwrap(),
            (0, false)
        );
        // Frozen crowd-avoidance pair: B and Ahat B span the plane.
        let a = DMatrix::from_row_slice(2, 2, &[-4.0, 4.0, 2.0, -2.0]);
        let b = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(kalman_rank(&a, &b).unwrap(), (2, true));
    }

    #[test]
    fn gramian_of_driftless_full_input_system_is_t_times_identity() {
        let grid = Grid::new(1.0, 0.01).unwrap();
        let ltv = constant_ltv(grid, DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        let rep = gramian(&tset, &ltv, 0.0).unwrap();
        assert!((&rep.gramian - DMatrix::identity(2, 2)).norm() < 1e-12);
        assert!((rep.lambda_min - 1.0).abs() < 1e-12);
        assert!((rep.condition - 1.0).abs() < 1e-10);
        assert_eq!(rep.eps, 0.0);
    }

    #[test]
    fn scalar_gramian_matches_the_closed_form() {
        let (ltv, tset) = scalar_bench(1e-4);
        let rep = gramian(&tset, &ltv, 0.0).unwrap();
        // G = (e^2 - 1)/2.
        let want = 3.194528049465325;
        assert!(
            (rep.gramian[(0, 0)] - want).abs() < 5e-8,
            "G = {}, want {want}",
            rep.gramian[(0, 0)]
        );
        assert!(rep.lambda_min > 0.0);
        assert_eq!(observability_margin(&rep), rep.lambda_min);
    }

    #[test]
    fn zero_input_gramian_is_singular() {
        let grid = Grid::new(1.0, 0.05).unwrap();
        let ltv = constant_ltv(grid, DMatrix::zeros(2, 2), DMatrix::zeros(2, 1));
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        let rep = gramian(&tset, &ltv, 0.0).unwrap();
        assert_eq!(rep.gramian, DMatrix::zeros(2, 2));
        assert_eq!(rep.lambda_min, 0.0);
        assert!(rep.condition.is_infinite());
        assert_eq!(observability_margin(&rep), 0.0);
        // Any nonzero right-hand side is unreachable: the ladder exhausts.
        let rhs = DVector::from_vec(vec![1.0, 0.0]);
        match regularized_gramian_solve(&rep, &rhs, &DEFAULT_EPS_LADDER) {
            Err(Error::Uncontrollable { witness, .. }) => {
                assert!((witness.norm() - 1.0).abs() < 1e-12);
            }
            other => panic!("expected uncontrollable, got {other:?}"),
        }
    }

    #[test]
    fn gramian_shift_is_reported_and_added() {
        let grid = Grid::new(1.0, 0.05).unwrap();
        let ltv = constant_ltv(grid, DMatrix::zeros(1, 1), DMatrix::from_element(1, 1, 1.0));
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        let plain = gramian(&tset, &ltv, 0.0).unwrap();
        let shifted = gramian(&tset, &ltv, 1e-6).unwrap();
        assert!((shifted.gramian[(0, 0)] - plain.gramian[(0, 0)] - 1e-6).abs() < 1e-15);
        assert_eq!(shifted.eps, 1e-6);
        assert!(gramian(&tset, &ltv, -1.0).is_err());
    }

    #[test]
    fn ladder_picks_the_smallest_sufficient_shift() {
        // Well-conditioned: no shift needed.
        let rep = analyze_symmetric(DMatrix::identity(2, 2), 0.0);
        let rhs = DVector::from_vec(vec![2.0, -4.0]);
        let (x, eps) = regularized_gramian_solve(&rep, &rhs, &DEFAULT_EPS_LADDER).unwrap();
        assert_eq!(eps, 0.0);
        assert!((&x - &rhs).norm() < 1e-14);

        // Condition 1e9 is inside the cap: still no shift.
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-9]);
        let rep = analyze_symmetric(g, 0.0);
        let (_, eps) = regularized_gramian_solve(&rep, &rhs, &DEFAULT_EPS_LADDER).unwrap();
        assert_eq!(eps, 0.0);

        // Condition 1e16 at scale 100: eps = 1e-12 still leaves ~1e14, the
        // first sufficient rung is 1e-10.
        let g = DMatrix::from_row_slice(2, 2, &[100.0, 0.0, 0.0, 1e-14]);
        let rep = analyze_symmetric(g, 0.0);
        let (x, eps) = regularized_gramian_solve(&rep, &rhs, &DEFAULT_EPS_LADDER).unwrap();
        assert_eq!(eps, 1e-10);
        assert!((x[0] - 2.0 / (100.0 + 1e-10)).abs() < 1e-12);
        assert!((x[1] - -4.0 / (1e-14 + 1e-10)).abs() < 1e-4 * x[1].abs());

        // Bad ladders are rejected.
        assert!(regularized_gramian_solve(&rep, &rhs, &[]).is_err());
        assert!(regularized_gramian_solve(&rep, &rhs, &[-1.0]).is_err());
    }

    #[test]
    fn driftless_steering_is_the_constant_control() {
        let grid = Grid::new(2.0, 0.01).unwrap();
        let ltv = constant_ltv(grid, DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        let problem = ControlProblem::new(
            DVector::zeros(2),
            DVector::from_vec(vec![3.0, -1.0]),
            2.0,
            TargetMode::Exact,
        )
        .unwrap();
        let u = min_energy_control(&tset, &ltv, &problem).unwrap();
        // u == (yT - y0)/T at every node.
        for k in 0..grid.len() {
            assert!((u.at(k)[0] - 1.5).abs() < 1e-12);
            assert!((u.at(k)[1] + 0.5).abs() < 1e-12);
        }
        // energy = |u|^2 T = 2.5 * 2.
        assert!((u.energy() - 5.0).abs() < 1e-10);
    }

    #[test]
    fn scalar_control_matches_the_closed_form() {
        let (ltv, tset) = scalar_bench(1e-4);
        let problem = ControlProblem::new(
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.0),
            1.0,
            TargetMode::Exact,
        )
        .unwrap();
        let u = min_energy_control(&tset, &ltv, &problem).unwrap();
        let grid = ltv.grid();
        let e2m1 = 1f64.exp().powi(2) - 1.0;
        for k in [0, grid.steps() / 2, grid.steps()] {
            let want = 2.0 * (grid.t(k) + 1.0).exp() / e2m1;
            let got = u.at(k)[0];
            assert!((got - want).abs() <= 1e-6 * want, "node {k}: {got} vs {want}");
        }
        // The synthesized control actually steers 0 -> 1.
        let states = simulate(&ltv, &u, problem.initial()).unwrap();
        let reached = states.last().unwrap()[0];
        assert!((reached - 1.0).abs() <= 1e-6 * 2.0, "reached {reached}");
    }

    #[test]
    fn steering_is_exact_for_a_commuting_time_varying_system() {
        // Frozen crowd-avoidance line: Ahat(t) = (2 + 4t) M over T = 0.5.
        let sys = crate::systems::QuasilinearSystem::avoid_crowding();
        let grid = Grid::new(0.5, 1e-4).unwrap();
        let v: Vec<_> = (0..grid.len())
            .map(|k| {
                let theta = grid.t(k) / grid.horizon();
                DVector::from_vec(vec![1.0 + theta, 1.0 + theta])
            })
            .collect();
        let ltv = LtvSystem::freeze(&sys, &grid, &v).unwrap();
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        let problem = ControlProblem::new(
            DVector::from_vec(vec![1.0, 1.0]),
            DVector::from_vec(vec![2.0, 2.0]),
            0.5,
            TargetMode::Exact,
        )
        .unwrap();
        let u = min_energy_control(&tset, &ltv, &problem).unwrap();
        let states = simulate(&ltv, &u, problem.initial()).unwrap();
        let err = (states.last().unwrap() - problem.target()).norm();
        assert!(err <= 1e-6 * (1.0 + problem.target().norm()), "final error {err:.3e}");
    }

    #[test]
    fn free_dynamics_follow_the_transition_matrix() {
        let sys = crate::systems::QuasilinearSystem::avoid_crowding();
        let grid = Grid::new(0.5, 1e-3).unwrap();
        let v: Vec<_> = (0..grid.len())
            .map(|k| DVector::from_vec(vec![1.0 + grid.t(k), 1.0]))
            .collect();
        let ltv = LtvSystem::freeze(&sys, &grid, &v).unwrap();
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        let y0 = DVector::from_vec(vec![0.3, -0.7]);
        let u = ControlTrajectory::zero(grid, 1);
        let states = simulate(&ltv, &u, &y0).unwrap();
        let want = tset.final_forward() * &y0;
        let err = (states.last().unwrap() - &want).norm();
        assert!(err < 1e-8, "free-flow deviation {err:.3e}");
    }

    #[test]
    fn adjoint_route_agrees_with_the_gramian_route() {
        // Driftless case: both give the constant control, essentially exactly.
        let grid = Grid::new(2.0, 0.01).unwrap();
        let ltv = constant_ltv(grid, DMatrix::zeros(2, 2), DMatrix::identity(2, 2));
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        let problem = ControlProblem::new(
            DVector::zeros(2),
            DVector::from_vec(vec![3.0, -1.0]),
            2.0,
            TargetMode::Exact,
        )
        .unwrap();
        let u = min_energy_control(&tset, &ltv, &problem).unwrap();
        let (w, adj) = adjoint_control(&tset, &ltv, &problem).unwrap();
        assert!(u.relative_linf_delta(&w) < 1e-12);
        // At the minimizer J = -energy/2.
        assert!((adj.functional + 0.5 * w.energy()).abs() < 1e-10 * w.energy().max(1.0));

        // Scalar benchmark: the adjoint is p(t) = e^{T-t} ... just compare routes.
        let (ltv, tset) = scalar_bench(1e-3);
        let problem = ControlProblem::new(
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.0),
            1.0,
            TargetMode::Exact,
        )
        .unwrap();
        let u = min_energy_control(&tset, &ltv, &problem).unwrap();
        let (w, adj) = adjoint_control(&tset, &ltv, &problem).unwrap();
        let delta = u.relative_linf_delta(&w);
        assert!(delta <= 1e-6, "route disagreement {delta:.3e}");
        assert!(adj.functional <= 0.0);
        // u = Bhat^T p at every node, by construction but worth pinning.
        for k in [0, 500, 1000] {
            assert!((w.at(k)[0] - adj.trajectory[k][0]).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_route_on_a_commuting_time_varying_system() {
        // c(t) M with c(t) = 0.4 + 0.3 sin(2t) on a 3-state single-input
        // system; routes must agree to 1e-6 in relative sup norm.
        let m = DMatrix::from_row_slice(
            3,
            3,
            &[-1.0, 0.8, 0.0, 0.3, -0.5, 0.2, 0.0, 0.4, -0.9],
        );
        let b = DMatrix::from_column_slice(3, 1, &[1.0, 0.0, 0.5]);
        let grid = Grid::new(1.0, 1e-3).unwrap();
        let drift: Vec<_> =
            (0..grid.len()).map(|k| &m * (0.4 + 0.3 * (2.0 * grid.t(k)).sin())).collect();
        let ltv = LtvSystem::from_samples(grid, drift, vec![b; grid.len()]).unwrap();
        let tset = transition(&ltv, ExpmMethod::Accurate).unwrap();
        let problem = ControlProblem::new(
            DVector::from_vec(vec![1.0, 0.0, -1.0]),
            DVector::from_vec(vec![0.0, 1.0, 0.5]),
            1.0,
            TargetMode::Exact,
        )
        .unwrap();
        let u = min_energy_control(&tset, &ltv, &problem).unwrap();
        let (w, _) = adjoint_control(&tset, &ltv, &problem).unwrap();
        let delta = u.relative_linf_delta(&w);
        assert!(delta <= 1e-6, "route disagreement {delta:.3e}");
        // The control also steers, though a three-state single-input system
        // amplifies the O(dt^2) quadrature error by the Gramian conditioning,
        // so the bound here is looser than in the well-conditioned cases.
        let states = simulate(&ltv, &u, problem.initial()).unwrap();
        let err = (states.last().unwrap() - problem.target()).norm();
        assert!(err <= 5e-3, "final error {err:.3e}");
    }

    #[test]
    fn minimum_energy_is_minimal_among_exact_controls() {
        // Perturb the optimal control by reachability-preserving directions
        // built from steering 0 -> 0; the quadrature energy must not drop by
        // more than rounding.
        let (ltv, tset) = scalar_bench(1e-4);
        let grid = *ltv.grid();
        let problem = ControlProblem::new(
            DVector::from_element(1, 0.0),
            DVector::from_element(1, 1.0),
            1.0,
            TargetMode::Exact,
        )
        .unwrap();
        let u = min_energy_control(&tset, &ltv, &problem).unwrap();
        for (amp, freq) in [(0.02, 1.0), (0.015, 3.0), (0.01, 7.0)] {
            // A small bump, then cancel its reachability effect.
            let bump: Vec<_> = (0..grid.len())
                .map(|k| {
                    DVector::from_element(
                        1,
                        amp * (freq * std::f64::consts::PI * grid.t(k)).sin(),
                    )
                })
                .collect();
            let bump = ControlTrajectory::from_samples(grid, bump).unwrap();
            let reached = simulate(&ltv, &bump, &DVector::zeros(1)).unwrap();
            let cancel_problem = ControlProblem::new(
                DVector::zeros(1),
                reached.last().unwrap().clone(),
                1.0,
                TargetMode::Exact,
            )
            .unwrap();
            let cancel = min_energy_control(&tset, &ltv, &cancel_problem).unwrap();
            let perturbed: Vec<_> = (0..grid.len())
                .map(|k| u.at(k) + bump.at(k) - cancel.at(k))
                .collect();
            let perturbed = ControlTrajectory::from_samples(grid, perturbed).unwrap();
            // Still steers 0 -> 1 (linearity), and costs at least as much.
            let states = simulate(&ltv, &perturbed, problem.initial()).unwrap();
            assert!((states.last().unwrap()[0] - 1.0).abs() < 1e-6);
            assert!(
                perturbed.energy() >= u.energy() - 1e-8,
                "energy dropped: {} < {}",
                perturbed.energy(),
                u.energy()
            );
        }
    }

    #[test]
    fn simulate_flags_blow_ups_with_the_first_bad_node() {
        let grid = Grid::new(1.0, 0.1).unwrap();
        let ltv = constant_ltv(grid, DMatrix::from_element(1, 1, 2.0), DMatrix::from_element(1, 1, 1.0));
        let u = ControlTrajectory::zero(grid, 1);
        let y0 = DVector::from_element(1, 1e308);
        match simulate(&ltv, &u, &y0) {
            Err(Error::BlowUp { node, .. }) => assert_eq!(node, 1),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let (ltv, tset) = scalar_bench(0.01);
        let other_grid = Grid::new(1.0, 0.02).unwrap();
        let u = ControlTrajectory::zero(other_grid, 1);
        assert!(simulate(&ltv, &u, &DVector::zeros(1)).is_err());
        let other_ltv = constant_ltv(
            other_grid,
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::from_element(1, 1, 1.0),
        );
        assert!(gramian(&tset, &other_ltv, 0.0).is_err());
        let problem = ControlProblem::new(
            DVector::zeros(1),
            DVector::from_element(1, 1.0),
            2.0, // wrong horizon
            TargetMode::Exact,
        )
        .unwrap();
        assert!(min_energy_control(&tset, &ltv, &problem).is_err());
    }

    #[test]
    fn control_trajectory_deltas_and_interp() {
        let grid = Grid::new(1.0, 0.5).unwrap();
        let a = ControlTrajectory::from_samples(
            grid,
            vec![
                DVector::from_element(1, 0.0),
                DVector::from_element(1, 1.0),
                DVector::from_element(1, 2.0),
            ],
        )
        .unwrap();
        assert_eq!(a.eval(0.25)[0], 0.5);
        assert_eq!(a.sup_norm(), 2.0);
        let b = ControlTrajectory::from_samples(
            grid,
            vec![
                DVector::from_element(1, 0.0),
                DVector::from_element(1, 1.1),
                DVector::from_element(1, 2.0),
            ],
        )
        .unwrap();
        let delta = a.relative_linf_delta(&b);
        assert!((delta - 0.05).abs() < 1e-12);
        let zero = ControlTrajectory::zero(grid, 1);
        assert_eq!(zero.relative_linf_delta(&zero), 0.0);
        assert!(zero.relative_linf_delta(&a).is_infinite());
    }
}
