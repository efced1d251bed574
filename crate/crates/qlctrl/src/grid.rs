//! Uniform time grid shared by every trajectory object.
//!
//! All sampled quantities (frozen coefficients, transition factors, controls,
//! state trajectories, Brownian increments) live on the nodes `t_k = k * dt`,
//! `k = 0..=N`, with `N * dt` equal to the horizon up to one floating
//! rounding. Keeping a single grid per problem removes every off-by-one and
//! interpolation mismatch between the solver stages.

use crate::error::{Error, Result};

/// Uniform partition of `[0, T]` into `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    horizon: f64,
    dt: f64,
    steps: usize,
}

impl Grid {
    /// Builds the grid for horizon `T > 0` and requested step `dt > 0`.
    ///
    /// The number of intervals is `N = round(T / dt)` (at least two); the
    /// stored step is adjusted to `T / N` so that `N * dt == T` holds exactly
    /// up to rounding. A requested step that is not close to a divisor of the
    /// horizon is therefore snapped to the nearest one.
    pub fn new(horizon: f64, dt: f64) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::invalid(format!("grid horizon must be positive, got {horizon}")));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(Error::invalid(format!("grid step must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round();
        if !(steps >= 2.0) {
            return Err(Error::invalid(format!(
                "grid needs at least 2 steps: horizon {horizon} with step {dt} gives {steps}"
            )));
        }
        if steps > 1e9 {
            return Err(Error::invalid(format!(
                "grid of {steps} steps is beyond the supported size"
            )));
        }
        Self::with_steps(horizon, steps as usize)
    }

    /// Builds the grid from an explicit interval count.
    pub fn with_steps(horizon: f64, steps: usize) -> Result<Self> {
        if !horizon.is_finite() || horizon <= 0.0 {
            return Err(Error::invalid(format!("grid horizon must be positive, got {horizon}")));
        }
        if steps < 2 {
            return Err(Error::invalid(format!("grid needs at least 2 steps, got {steps}")));
        }
        Ok(Grid { horizon, dt: horizon / steps as f64, steps })
    }

    /// Horizon `T`.
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step length `dt = T / N`.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Interval count `N`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Node count `N + 1`.
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    /// Never empty; present for clippy symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node time `t_k`, exact at both endpoints.
    pub fn t(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * (k as f64 / self.steps as f64)
        }
    }

    /// All node times.
    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.t(k)).collect()
    }

    /// Locates `t` in the grid: returns the interval index `k` and the local
    /// barycentric weight `theta` in `[0, 1]` such that
    /// `t = (1 - theta) * t_k + theta * t_{k+1}`. Times outside `[0, T]` are
    /// clamped to the ends.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        if t <= 0.0 {
            return (0, 0.0);
        }
        if t >= self.horizon {
            return (self.steps - 1, 1.0);
        }
        let s = t / self.dt;
        let mut k = s.floor() as usize;
        if k >= self.steps {
            k = self.steps - 1;
        }
        (k, (s - k as f64).clamp(0.0, 1.0))
    }

    /// Composite-trapezoid quadrature weight of node `k`:
    /// `dt / 2` at the ends, `dt` in the interior.
    pub fn weight(&self, k: usize) -> f64 {
        debug_assert!(k <= self.steps);
        if k == 0 || k == self.steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

/// Linear interpolation of node samples at an arbitrary time.
pub fn interp_nodes(grid: &Grid, nodes: &[nalgebra::DVector<f64>], t: f64) -> nalgebra::DVector<f64> {
    debug_assert_eq!(nodes.len(), grid.len());
    let (k, theta) = grid.locate(t);
    if theta == 0.0 {
        nodes[k].clone()
    } else {
        &nodes[k] * (1.0 - theta) + &nodes[k + 1] * theta
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_times_hit_both_endpoints_exactly() {
        let g = Grid::new(0.5, 1e-3).unwrap();
        assert_eq!(g.steps(), 500);
        assert_eq!(g.t(0), 0.0);
        assert_eq!(g.t(500), 0.5);
        assert!((g.steps() as f64 * g.dt() - g.horizon()).abs() <= f64::EPSILON * g.horizon());
    }

    #[test]
    fn step_is_snapped_to_a_divisor() {
        // 0.3 does not divide 1.0; the grid snaps to the nearest count.
        let g = Grid::new(1.0, 0.3).unwrap();
        assert_eq!(g.steps(), 3);
        assert!((g.dt() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid::new(0.0, 0.1).is_err());
        assert!(Grid::new(1.0, 0.0).is_err());
        assert!(Grid::new(1.0, -0.1).is_err());
        assert!(Grid::new(1.0, 0.9).is_err(), "rounds to a single step");
        assert!(Grid::new(f64::NAN, 0.1).is_err());
        assert!(Grid::with_steps(1.0, 1).is_err());
    }

    #[test]
    fn locate_is_consistent_with_node_times() {
        let g = Grid::new(2.0, 0.25).unwrap();
        for k in 0..g.steps() {
            let (kk, theta) = g.locate(g.t(k));
            assert_eq!(kk, k);
            assert!(theta.abs() < 1e-12);
        }
        let (k, theta) = g.locate(0.375);
        assert_eq!(k, 1);
        assert!((theta - 0.5).abs() < 1e-12);
        // Clamping below and above.
        assert_eq!(g.locate(-1.0), (0, 0.0));
        assert_eq!(g.locate(3.0), (g.steps() - 1, 1.0));
    }

    #[test]
    fn trapezoid_weights_sum_to_horizon() {
        let g = Grid::new(1.0, 1e-2).unwrap();
        let total: f64 = (0..g.len()).map(|k| g.weight(k)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn interpolation_reproduces_linear_data() {
        let g = Grid::new(1.0, 0.125).unwrap();
        let nodes: Vec<_> = (0..g.len())
            .map(|k| nalgebra::DVector::from_vec(vec![2.0 * g.t(k) - 1.0]))
            .collect();
        for &t in &[0.0, 0.1, 0.33, 0.5, 0.99, 1.0] {
            let v = interp_nodes(&g, &nodes, t);
            assert!((v[0] - (2.0 * t - 1.0)).abs() < 1e-12, "t = {t}");
        }
    }
}
