//! State-transition factors for frozen linear systems.
//!
//! For the sampled full drift `Ahat(t)` the forward factors solve
//! `Phi' = Ahat(t) Phi`, `Phi(0) = I`, accumulated one step at a time:
//!
//! ```text
//!     Phi(t_{k+1}) = expm(Ahat(t_k + dt/2) * dt) * Phi(t_k),
//! ```
//!
//! with the midpoint value interpolated from the node samples. For drifts of
//! the commuting form `c(t) * M` (both built-in families freeze to this
//! shape) the step rule is exact up to the midpoint quadrature of `c`.
//!
//! The backward factors `Psi(t_k) = Phi(t_k)^{-1}` are *never* obtained by
//! numeric inversion: each step exponentiates the negated generator and the
//! factors accumulate in reverse order,
//!
//! ```text
//!     Psi(t_{k+1}) = Psi(t_k) * expm(-Ahat(t_k + dt/2) * dt),
//! ```
//!
//! which keeps the group-inverse structure exact under the accurate
//! exponential and stays well defined when a truncated exponential is in
//! play (where the forward factor may not even be invertible).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::numeric::matrix_is_finite;
use crate::systems::LtvSystem;
use crate::Grid;

/// How matrix exponentials are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpmMethod {
    /// Pade scaling-and-squaring; relative error around 1e-13 on
    /// well-conditioned inputs.
    Accurate,
    /// Deliberately truncated Taylor polynomial `sum_{j=0}^{k} M^j / j!`,
    /// `k >= 1`. Exists to study the effect of low-order exponential
    /// approximations on the synthesized control; never use it for accuracy.
    Taylor(usize),
}

impl std::fmt::Display for ExpmMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExpmMethod::Accurate => write!(f, "accurate"),
            ExpmMethod::Taylor(k) => write!(f, "taylor({k})"),
        }
    }
}

/// Matrix exponential of a square matrix.
pub fn mat_exp(m: &DMatrix<f64>, method: ExpmMethod) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::invalid(format!(
            "matrix exponential needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::invalid("matrix exponential of an empty matrix"));
    }
    if !matrix_is_finite(m) {
        return Err(Error::invalid("matrix exponential of a non-finite matrix"));
    }
    match method {
        ExpmMethod::Accurate => {
            let e = m.exp();
            if !matrix_is_finite(&e) {
                return Err(Error::Overflow(format!(
                    "accurate exponential overflowed (norm {:.3e})",
                    m.norm()
                )));
            }
            Ok(e)
        }
        ExpmMethod::Taylor(k) => {
            if k == 0 {
                return Err(Error::invalid("taylor exponential needs order k >= 1"));
            }
            let d = m.nrows();
            let mut sum = DMatrix::<f64>::identity(d, d);
            let mut term = DMatrix::<f64>::identity(d, d);
            for j in 1..=k {
                term = (&term * m) / j as f64;
                if !matrix_is_finite(&term) {
                    return Err(Error::Overflow(format!(
                        "taylor power {j} of {k} overflowed (norm {:.3e})",
                        m.norm()
                    )));
                }
                sum += &term;
            }
            Ok(sum)
        }
    }
}

/// Forward and backward transition factors on every grid node.
#[derive(Debug, Clone)]
pub struct TransitionSet {
    grid: Grid,
    forward: Vec<DMatrix<f64>>,
    backward: Vec<DMatrix<f64>>,
    /// Set when a truncated-exponential step factor was (numerically)
    /// singular, i.e. the backward accumulation no longer tracks an inverse.
    pub conditioning_warning: bool,
}

impl TransitionSet {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `Phi(t_k)`.
    pub fn forward_at(&self, k: usize) -> &DMatrix<f64> {
        &self.forward[k]
    }

    /// `Psi(t_k) = Phi(t_k)^{-1}`.
    pub fn backward_at(&self, k: usize) -> &DMatrix<f64> {
        &self.backward[k]
    }

    /// `Phi(T)`.
    pub fn final_forward(&self) -> &DMatrix<f64> {
        self.forward.last().expect("transition set is never empty")
    }

    /// `Psi(T)`.
    pub fn final_backward(&self) -> &DMatrix<f64> {
        self.backward.last().expect("transition set is never empty")
    }

    pub fn dim(&self) -> usize {
        self.forward[0].nrows()
    }
}

/// Accumulates the transition factors of a sampled linear system.
pub fn transition(ltv: &LtvSystem, method: ExpmMethod) -> Result<TransitionSet> {
    let grid = *ltv.grid();
    let dt = grid.dt();
    let d = ltv.dim();
    let mut forward = Vec::with_capacity(grid.len());
    let mut backward = Vec::with_capacity(grid.len());
    forward.push(DMatrix::identity(d, d));
    backward.push(DMatrix::identity(d, d));
    let mut warning = false;
    for k in 0..grid.steps() {
        let gen = ltv.drift_mid(k) * dt;
        let step_f = mat_exp(&gen, method)?;
        let step_b = mat_exp(&(-&gen), method)?;
        if let ExpmMethod::Taylor(_) = method {
            // A truncated factor can be singular (the exact exponential never
            // is); flag it so downstream consumers know the backward factors
            // have lost their inverse meaning.
            let det = step_f.determinant();
            let expected = gen.trace().exp();
            if !det.is_finite() || det.abs() < 1e-12 * expected.min(1e300) {
                warning = true;
            }
        }
        let phi = &step_f * forward.last().expect("non-empty");
        let psi = backward.last().expect("non-empty") * &step_b;
        if !matrix_is_finite(&phi) || !matrix_is_finite(&psi) {
            return Err(Error::Overflow(format!(
                "transition factor overflowed at node {} (t = {:.6})",
                k + 1,
                grid.t(k + 1)
            )));
        }
        forward.push(phi);
        backward.push(psi);
    }
    Ok(TransitionSet { grid, forward, backward, conditioning_warning: warning })
}
