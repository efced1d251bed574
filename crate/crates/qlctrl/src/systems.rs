//! System descriptions and coefficient freezing.
//!
//! A quasilinear system is written in the convention
//!
//! ```text
//!     y'(t) = -A(t, y(t)) y(t) + B(t, y(t)) u(t),
//! ```
//!
//! so the stored coefficient map `A` enters with a minus sign: for
//! non-negative definite `A` the uncontrolled flow is dissipative. The
//! *full drift* is `-A`; every downstream consumer (transition factors,
//! simulators) works with the full drift so the sign is resolved exactly
//! once, in [`LtvSystem::freeze`].
//!
//! Two built-in coefficient families cover the usual test cases:
//!
//! * *porous-medium type*: `A(t, y) = |y|^m * A0` with constant matrices
//!   `A0`, `B0` and exponent `m >= 0` (Euclidean norm, `|y|^0 == 1`);
//! * *crowd-avoidance*: the planar single-input system with full drift
//!   `|y1 + y2| * [[-2, 2], [1, -1]] * y` and `B = (1, 0)^T`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::numeric::{matrix_is_finite, spectral_norm, symmetric_eigen_bounds, vector_is_finite};

/// Coefficient map `(t, y) -> matrix`, shared by value.
pub type CoeffMap = Arc<dyn Fn(f64, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// A quasilinear control system `y' = -A(t, y) y + B(t, y) u`.
#[derive(Clone)]
pub struct QuasilinearSystem {
    dim: usize,
    inputs: usize,
    drift: CoeffMap,
    input: CoeffMap,
    family: String,
}

impl std::fmt::Debug for QuasilinearSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QuasilinearSystem")
            .field("dim", &self.dim)
            .field("inputs", &self.inputs)
            .field("family", &self.family)
            .finish()
    }
}

impl QuasilinearSystem {
    /// Wraps user-provided coefficient maps. `drift` must return `d x d`
    /// matrices (the map `A`, not the full drift) and `input` must return
    /// `d x n` matrices.
    pub fn new(
        dim: usize,
        inputs: usize,
        drift: CoeffMap,
        input: CoeffMap,
        family: impl Into<String>,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("state dimension must be at least 1"));
        }
        if inputs == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        Ok(QuasilinearSystem { dim, inputs, drift, input, family: family.into() })
    }

    /// Porous-medium-type family `A(t, y) = |y|^m A0`, `B(t, y) = B0`.
    pub fn porous(a0: DMatrix<f64>, b0: DMatrix<f64>, m: f64) -> Result<Self> {
        let d = a0.nrows();
        if a0.ncols() != d || d == 0 {
            return Err(Error::invalid(format!(
                "porous drift matrix must be square, got {}x{}",
                a0.nrows(),
                a0.ncols()
            )));
        }
        if b0.nrows() != d || b0.ncols() == 0 {
            return Err(Error::invalid(format!(
                "porous input matrix must have {} rows, got {}x{}",
                d,
                b0.nrows(),
                b0.ncols()
            )));
        }
        if !matrix_is_finite(&a0) || !matrix_is_finite(&b0) {
            return Err(Error::invalid("porous coefficient matrices must be finite"));
        }
        if !m.is_finite() || m < 0.0 {
            return Err(Error::invalid(format!("porous exponent must satisfy m >= 0, got {m}")));
        }
        let n = b0.ncols();
        let drift: CoeffMap = Arc::new(move |_t, y: &DVector<f64>| &a0 * y.norm().powf(m));
        let input: CoeffMap = Arc::new(move |_t, _y: &DVector<f64>| b0.clone());
        Self::new(d, n, drift, input, format!("porous(m={m})"))
    }

    /// The planar crowd-avoidance system: full drift
    /// `|y1 + y2| * [[-2, 2], [1, -1]] * y` with single input `B = (1, 0)^T`.
    pub fn avoid_crowding() -> Self {
        let direction = DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 1.0, -1.0]);
        let drift: CoeffMap = Arc::new(move |_t, y: &DVector<f64>| {
            // Stored in the `-A` convention, so A = -|y1 + y2| * direction.
            &direction * (-(y[0] + y[1]).abs())
        });
        let input: CoeffMap =
            Arc::new(|_t, _y: &DVector<f64>| DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        QuasilinearSystem {
            dim: 2,
            inputs: 1,
            drift,
            input,
            family: "avoid-crowding".to_string(),
        }
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Input dimension `n`.
    pub fn inputs(&self) -> usize {
        self.inputs
    }

    /// Family tag used in diagnostics.
    pub fn family(&self) -> &str {
        &self.family
    }

    /// Evaluates the stored map `A(t, y)`.
    pub fn drift(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        (self.drift)(t, y)
    }

    /// Evaluates `B(t, y)`.
    pub fn input(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        (self.input)(t, y)
    }

    /// Evaluates the full (sign-resolved) drift `-A(t, y)`.
    pub fn full_drift(&self, t: f64, y: &DVector<f64>) -> DMatrix<f64> {
        -(self.drift)(t, y)
    }

    /// The same system with time argument shifted by `offset`: the returned
    /// system evaluated at `(s, y)` sees `(offset + s, y)`. Used by the
    /// marching solver, whose windows restart local time at zero.
    pub fn time_shifted(&self, offset: f64) -> Self {
        let drift = self.drift.clone();
        let input = self.input.clone();
        QuasilinearSystem {
            dim: self.dim,
            inputs: self.inputs,
            drift: Arc::new(move |t, y| drift(offset + t, y)),
            input: Arc::new(move |t, y| input(offset + t, y)),
            family: self.family.clone(),
        }
    }
}

/// Quasilinear system with constant additive noise:
/// `dy = (-A(t, y) y + B(t, y) u) dt + Z dW`.
#[derive(Clone, Debug)]
pub struct SdeSystem {
    system: QuasilinearSystem,
    diffusion: DMatrix<f64>,
}

impl SdeSystem {
    /// Pairs a deterministic system with a constant `d x n_w` diffusion
    /// matrix, `n_w >= 1`.
    pub fn new(system: QuasilinearSystem, diffusion: DMatrix<f64>) -> Result<Self> {
        if diffusion.nrows() != system.dim() {
            return Err(Error::invalid(format!(
                "diffusion matrix must have {} rows, got {}",
                system.dim(),
                diffusion.nrows()
            )));
        }
        if diffusion.ncols() == 0 {
            return Err(Error::invalid("noise dimension must be at least 1"));
        }
        if !matrix_is_finite(&diffusion) {
            return Err(Error::invalid("diffusion matrix must be finite"));
        }
        Ok(SdeSystem { system, diffusion })
    }

    /// Crowd-avoidance system with isotropic noise `Z = sigma * I_2`.
    pub fn avoid_crowding(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::invalid(format!("noise level must satisfy sigma >= 0, got {sigma}")));
        }
        Self::new(QuasilinearSystem::avoid_crowding(), DMatrix::identity(2, 2) * sigma)
    }

    pub fn system(&self) -> &QuasilinearSystem {
        &self.system
    }

    pub fn diffusion(&self) -> &DMatrix<f64> {
        &self.diffusion
    }

    /// Noise dimension `n_w`.
    pub fn noise_dim(&self) -> usize {
        self.diffusion.ncols()
    }
}

/// How the terminal condition is understood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Pathwise (deterministic) steering: `y(T) = y_target`.
    Exact,
    /// Steering in the mean: `E[y(T)] = y_target`.
    InExpectation,
}

/// Initial state, target state, horizon, and target interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProblem {
    initial: DVector<f64>,
    target: DVector<f64>,
    horizon: f64,
    mode: TargetMode,
}

impl ControlProblem {
    pub fn new(
        initial: DVector<f64>,
        target: DVector<f64>,
        horizon: f64,
        mode: TargetMode,
    ) -> Result<Self> {
        if initial.len() != target.len() {
            return Err(Error::invalid(format!(
                "initial state has dimension {} but target has {}",
                initial.len(),
                target.len()
            )));
        }
        if initial.is_empty() {
            return Err(Error::invalid("control problem needs at least one state component"));
        }
        if !vector_is_finite(&initial) || !vector_is_finite(&target) {
            return Err(Error::invalid("control problem states must be finite"));
        }
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::invalid(format!("horizon must be positive, got {horizon}")));
        }
        Ok(ControlProblem { initial, target, horizon, mode })
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.initial
    }

    pub fn target(&self) -> &DVector<f64> {
        &self.target
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn mode(&self) -> TargetMode {
        self.mode
    }

    /// Same end points on a different horizon (marching windows).
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        Self::new(self.initial.clone(), self.target.clone(), horizon, self.mode)
    }

    /// Same horizon and target, restarted from a new initial state.
    pub fn with_initial(&self, initial: DVector<f64>) -> Result<Self> {
        Self::new(initial, self.target.clone(), self.horizon, self.mode)
    }

    /// Dimension of the state space.
    pub fn dim(&self) -> usize {
        self.initial.len()
    }
}

/// Linear time-varying system sampled on a grid: full drift `Ahat(t_k)` and
/// input `Bhat(t_k)` at every node. This is what freezing a quasilinear
/// system along a trajectory produces, and the only thing the linear control
/// stages ever see.
#[derive(Clone, Debug)]
pub struct LtvSystem {
    grid: Grid,
    drift: Arc<Vec<DMatrix<f64>>>,
    input: Arc<Vec<DMatrix<f64>>>,
}

impl LtvSystem {
    /// Freezes the coefficients of `sys` along the trajectory `v` sampled on
    /// `grid`: `Ahat(t_k) = -A(t_k, v_k)`, `Bhat(t_k) = B(t_k, v_k)`.
    pub fn freeze(sys: &QuasilinearSystem, grid: &Grid, v: &[DVector<f64>]) -> Result<Self> {
        if v.len() != grid.len() {
            return Err(Error::invalid(format!(
                "freezing trajectory has {} nodes but the grid has {}",
                v.len(),
                grid.len()
            )));
        }
        let d = sys.dim();
        let n = sys.inputs();
        let mut drift = Vec::with_capacity(grid.len());
        let mut input = Vec::with_capacity(grid.len());
        for (k, vk) in v.iter().enumerate() {
            let t = grid.t(k);
            if vk.len() != d {
                return Err(Error::invalid(format!(
                    "freezing trajectory node {k} has dimension {}, expected {d}",
                    vk.len()
                )));
            }
            if !vector_is_finite(vk) {
                return Err(Error::CoefficientEvaluation {
                    t,
                    detail: format!("freezing trajectory is non-finite at node {k}"),
                });
            }
            let a = sys.drift(t, vk);
            if a.nrows() != d || a.ncols() != d {
                return Err(Error::invalid(format!(
                    "drift map returned a {}x{} matrix, expected {d}x{d}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            if !matrix_is_finite(&a) {
                return Err(Error::CoefficientEvaluation {
                    t,
                    detail: format!("drift map is non-finite at node {k}"),
                });
            }
            let b = sys.input(t, vk);
            if b.nrows() != d || b.ncols() != n {
                return Err(Error::invalid(format!(
                    "input map returned a {}x{} matrix, expected {d}x{n}",
                    b.nrows(),
                    b.ncols()
                )));
            }
            if !matrix_is_finite(&b) {
                return Err(Error::CoefficientEvaluation {
                    t,
                    detail: format!("input map is non-finite at node {k}"),
                });
            }
            drift.push(-a);
            input.push(b);
        }
        Ok(LtvSystem { grid: *grid, drift: Arc::new(drift), input: Arc::new(input) })
    }

    /// Builds an LTV system directly from node samples of the full drift and
    /// input (already sign-resolved).
    pub fn from_samples(
        grid: Grid,
        drift: Vec<DMatrix<f64>>,
        input: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        if drift.len() != grid.len() || input.len() != grid.len() {
            return Err(Error::invalid(format!(
                "sample tables must have {} nodes, got {} drift and {} input",
                grid.len(),
                drift.len(),
                input.len()
            )));
        }
        let d = drift[0].nrows();
        let n = input[0].ncols();
        if d == 0 || n == 0 {
            return Err(Error::invalid("sampled system needs d >= 1 and n >= 1"));
        }
        for (k, a) in drift.iter().enumerate() {
            if a.nrows() != d || a.ncols() != d || !matrix_is_finite(a) {
                return Err(Error::invalid(format!("bad drift sample at node {k}")));
            }
        }
        for (k, b) in input.iter().enumerate() {
            if b.nrows() != d || b.ncols() != n || !matrix_is_finite(b) {
                return Err(Error::invalid(format!("bad input sample at node {k}")));
            }
        }
        Ok(LtvSystem { grid, drift: Arc::new(drift), input: Arc::new(input) })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.drift[0].nrows()
    }

    pub fn inputs(&self) -> usize {
        self.input[0].ncols()
    }

    /// Full drift sample `Ahat(t_k)`.
    pub fn drift_at(&self, k: usize) -> &DMatrix<f64> {
        &self.drift[k]
    }

    /// Input sample `Bhat(t_k)`.
    pub fn input_at(&self, k: usize) -> &DMatrix<f64> {
        &self.input[k]
    }

    /// Midpoint value `Ahat(t_k + dt/2)` by linear interpolation of the node
    /// samples.
    pub fn drift_mid(&self, k: usize) -> DMatrix<f64> {
        debug_assert!(k + 1 < self.grid.len());
        (&self.drift[k] + &self.drift[k + 1]) * 0.5
    }

    /// Midpoint value `Bhat(t_k + dt/2)`.
    pub fn input_mid(&self, k: usize) -> DMatrix<f64> {
        debug_assert!(k + 1 < self.grid.len());
        (&self.input[k] + &self.input[k + 1]) * 0.5
    }

    /// Wraps the sample tables back into a [`QuasilinearSystem`] whose maps
    /// interpolate linearly in `t` and ignore `y`. Lets the frozen linear
    /// system flow through the generic integrators (e.g. the stochastic leg).
    pub fn to_system(&self) -> QuasilinearSystem {
        let grid = self.grid;
        let drift = self.drift.clone();
        let input = self.input.clone();
        let drift_map: CoeffMap = Arc::new(move |t, _y| {
            let (k, theta) = grid.locate(t);
            // Stored as the full drift; hand back the `A` convention.
            -(&drift[k] * (1.0 - theta) + &drift[k + 1] * theta)
        });
        let input_map: CoeffMap = Arc::new(move |t, _y| {
            let (k, theta) = grid.locate(t);
            &input[k] * (1.0 - theta) + &input[k + 1] * theta
        });
        QuasilinearSystem {
            dim: self.dim(),
            inputs: self.inputs(),
            drift: drift_map,
            input: input_map,
            family: "frozen".to_string(),
        }
    }
}

/// Structural diagnostics gathered by [`validate_system`].
///
/// The dissipativity/symmetry conditions are sufficient for the analysis,
/// not necessary for the solver, so violations are flagged and reported but
/// never abort a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemDiagnostics {
    /// Number of pseudo-random sample points inspected.
    pub samples: usize,
    /// max over samples of the spectral norm of `A - A^T`.
    pub max_asymmetry: f64,
    /// min over samples of the smallest eigenvalue of `(A + A^T) / 2`.
    pub min_definiteness: f64,
    /// max over samples of the spectral norm of `A`.
    pub drift_bound: f64,
    /// max over samples of the spectral norm of `B`.
    pub input_bound: f64,
    /// Symmetry violated beyond rounding scale.
    pub asymmetric: bool,
    /// Non-negative definiteness violated beyond rounding scale.
    pub indefinite: bool,
}

/// Samples the coefficient maps at pseudo-random points `(t, y)` with
/// `t in [0, 1)`, `y in [-2, 2]^d`, and reports how far `A` is from being
/// symmetric non-negative definite, together with coefficient sup-norms.
pub fn validate_system(sys: &QuasilinearSystem) -> SystemDiagnostics {
    validate_system_with(sys, 64, 0x51D5)
}

/// [`validate_system`] with an explicit sample count and seed.
pub fn validate_system_with(sys: &QuasilinearSystem, samples: usize, seed: u64) -> SystemDiagnostics {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = sys.dim();
    let mut max_asymmetry: f64 = 0.0;
    let mut min_definiteness = f64::INFINITY;
    let mut drift_bound: f64 = 0.0;
    let mut input_bound: f64 = 0.0;
    for _ in 0..samples.max(1) {
        let t: f64 = rng.random_range(0.0..1.0);
        let y = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let a = sys.drift(t, &y);
        let b = sys.input(t, &y);
        let asym = spectral_norm(&(&a - a.transpose()));
        let sym = (&a + a.transpose()) * 0.5;
        let (lo, _) = symmetric_eigen_bounds(&sym);
        max_asymmetry = max_asymmetry.max(asym);
        min_definiteness = min_definiteness.min(lo);
        drift_bound = drift_bound.max(spectral_norm(&a));
        input_bound = input_bound.max(spectral_norm(&b));
    }
    let scale = 1e-10 * (1.0 + drift_bound);
    SystemDiagnostics {
        samples: samples.max(1),
        max_asymmetry,
        min_definiteness,
        drift_bound,
        input_bound,
        asymmetric: max_asymmetry > scale,
        indefinite: min_definiteness < -scale,
    }
}
