//! Controllability toolkit for quasilinear systems of ODEs and SDEs.
//!
//! The crate synthesizes exact controls for systems of the form
//!
//! ```text
//!     y'(t) = -A(t, y(t)) y(t) + B(t, y(t)) u(t),      y(0) = y0,
//! ```
//!
//! and mean-steering controls for their additive-noise counterparts
//!
//! ```text
//!     dy = (-A(t, y) y + B(t, y) u) dt + Z dW(t).
//! ```
//!
//! A frozen linear time-varying system is steered exactly by the classical
//! minimum-energy Gramian formula. The quasilinear problem is reduced to a
//! sequence of such linear solves by freezing the coefficients along the
//! previous trajectory iterate; when coefficient bounds make that iteration
//! diverge on the full horizon, a marching solver splits the horizon into
//! windows short enough to contract and restarts from each reached state.
//!
//! Module map:
//! - [`systems`]: system descriptions, built-in families, coefficient freezing
//! - [`propagator`]: state-transition factors built from matrix exponentials
//! - [`linctrl`]: Gramians, minimum-energy and adjoint-route controls, simulation
//! - [`nonlinctrl`]: fixed-point solver, target relaxation, marching globalization
//! - [`stochastic`]: Brownian increments, Euler-Maruyama, averaged-control experiments

pub mod error;
pub mod grid;
pub mod linctrl;
pub mod nonlinctrl;
pub mod propagator;
pub mod stochastic;
pub mod systems;

pub(crate) mod numeric;

pub use error::{Error, Result};
pub use grid::Grid;
pub use linctrl::{
    adjoint_control, gramian, kalman_rank, min_energy_control, observability_margin,
    regularized_gramian_solve, simulate, AdjointState, ControlTrajectory, GramianReport,
};
pub use nonlinctrl::{
    choose_k, march_solve, picard_solve, relax_target, SolveReport, SolverOptions,
};
pub use propagator::{mat_exp, transition, ExpmMethod, TransitionSet};
pub use stochastic::{
    averaged_control_experiment, brownian_increments, euler_maruyama, expectation,
    per_path_picard, MonteCarloReport, NoiseRealization, PathFailure,
};
pub use systems::{
    validate_system, validate_system_with, ControlProblem, LtvSystem, QuasilinearSystem,
    SdeSystem, SystemDiagnostics, TargetMode,
};
