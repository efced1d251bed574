//! Small shared numeric helpers (norms, finiteness checks, rounding).

use nalgebra::{DMatrix, DVector};

/// Largest singular value. Zero and empty matrices give 0.
pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.iter().all(|x| *x == 0.0) {
        return 0.0;
    }
    m.singular_values().max()
}

/// Eigenvalue range of a symmetric matrix: `(min, max)`.
pub(crate) fn symmetric_eigen_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

pub(crate) fn matrix_is_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|x| x.is_finite())
}

pub(crate) fn vector_is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Smallest power of two that is `>= x`, as a u64. Values at or below 1 give 1.
pub(crate) fn next_power_of_two_at_least(x: f64) -> u64 {
    if !(x > 1.0) {
        return 1;
    }
    let mut p: u64 = 1;
    while (p as f64) < x {
        p = p.checked_mul(2).unwrap_or(u64::MAX / 2);
        if p >= u64::MAX / 2 {
            break;
        }
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spectral_norm_matches_closed_forms() {
        // Rank-one [[3, 0], [4, 0]] has norm 5.
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 4.0, 0.0]);
        assert!((spectral_norm(&m) - 5.0).abs() < 1e-12);
        // The crowd-avoidance direction [[-2, 2], [1, -1]] has norm sqrt(10):
        // M^T M = [[5, -5], [-5, 5]] with eigenvalues {10, 0}.
        let m = DMatrix::from_row_slice(2, 2, &[-2.0, 2.0, 1.0, -1.0]);
        assert!((spectral_norm(&m) - 10f64.sqrt()).abs() < 1e-12);
        assert_eq!(spectral_norm(&DMatrix::zeros(3, 3)), 0.0);
    }

    #[test]
    fn eigen_bounds_of_symmetric_matrix() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, -1.5, -1.5, 1.0]);
        // trace 3, det -0.25 => eigenvalues (3 +- sqrt(10)) / 2.
        let (lo, hi) = symmetric_eigen_bounds(&m);
        assert!((lo - (3.0 - 10f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((hi - (3.0 + 10f64.sqrt()) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn power_of_two_rounding() {
        assert_eq!(next_power_of_two_at_least(0.0), 1);
        assert_eq!(next_power_of_two_at_least(1.0), 1);
        assert_eq!(next_power_of_two_at_least(1.01), 2);
        assert_eq!(next_power_of_two_at_least(4.0), 4);
        assert_eq!(next_power_of_two_at_least(5.0), 8);
        assert_eq!(next_power_of_two_at_least(63.245553203367585), 64);
    }
}
