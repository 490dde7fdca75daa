//! Numerical check of the optimality conditions for a power allocation.
//!
//! Given receiver weights `lambda` (unit sum), the weighted-average gain
//! `fbar(t) = sum_r lambda_r F[r, t]` bounds every allocation's worst
//! receiver from above: `min_r (F p)_r <= lambda' F p <= max_t fbar(t)`.
//! An allocation is optimal exactly when some `lambda` supported on its
//! worst receivers makes `fbar <= m` everywhere, with equality on the
//! allocation's support.

use serde::{Deserialize, Serialize};

use crate::channel::GainMatrix;
use crate::error::{invalid, Error, Result};
use crate::geometry::LatticeGrid;
use nalgebra::DMatrix;

use crate::solver::{solve_maxmin, MaxMinSolution, PowerAllocation, DEFAULT_TOL, SUPPORT_THRESHOLD};

pub const TOL_CERT: f64 = 1e-6;
pub const TOL_SYM: f64 = 1e-6;
/// Receivers within this relative distance of the minimum count as worst.
pub const WORST_ROW_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalityCertificate {
    /// `min_r (F p)_r`, recomputed from the gains.
    pub objective_m: f64,
    /// `max_t fbar(t)`.
    pub dual_bound: f64,
    /// `(max_t fbar(t) - m) / m`; may be negative only through roundoff.
    pub max_fbar_excess: f64,
    /// `max |fbar(t) - m| / m` over antennas carrying at least the support threshold.
    pub support_deviation: f64,
    /// Largest weight difference between mirrored antennas.
    pub symmetry_residual: f64,
    /// `max_r lambda_r |(F p)_r - m| / m`.
    pub complementarity: f64,
    pub support_threshold: f64,
    pub tol_cert: f64,
    pub tol_sym: f64,
    pub passed: bool,
}

/// `fbar(t) = sum_r lambda_r F[r, t] / sum_r lambda_r`.
pub fn weighted_average_gain(duals: &[f64], gains: &GainMatrix) -> Result<Vec<f64>> {
    if duals.len() != gains.n_rx() {
        return Err(Error::DimensionMismatch {
            expected: gains.n_rx(),
            actual: duals.len(),
        });
    }
    if duals.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(invalid("duals must be finite and nonnegative"));
    }
    let total: f64 = duals.iter().sum();
    if !(total > 0.0) {
        return Err(invalid("duals are all zero"));
    }
    let lam = nalgebra::DVector::from_iterator(duals.len(), duals.iter().map(|d| d / total));
    Ok(gains.entries().tr_mul(&lam).iter().copied().collect())
}

/// Best dual candidate for an allocation that did not come from the solver:
/// the receiver weights on its worst receivers minimising `max_t fbar(t)`.
///
/// `min_lambda max_t (F_A' lambda)_t` over the active rows `A` is the
/// max-min problem of the positive matrix `c - F_A'` with `c = 2 max F_A`.
pub fn recover_duals(allocation: &PowerAllocation, gains: &GainMatrix) -> Result<Vec<f64>> {
    let recv = gains.received(allocation.weights())?;
    let m = recv.min();
    let cutoff = m + WORST_ROW_TOL * m.abs();
    let active: Vec<usize> = (0..recv.len()).filter(|&r| recv[r] <= cutoff).collect();
    let f = gains.entries();
    let c = 2.0 * active
        .iter()
        .map(|&r| f.row(r).max())
        .fold(f64::NEG_INFINITY, f64::max);
    let game = DMatrix::from_fn(gains.n_tx(), active.len(), |t, k| c - f[(active[k], t)]);
    let solution = solve_maxmin(&GainMatrix::from_matrix(game)?, DEFAULT_TOL)?;
    let mut duals = vec![0.0; gains.n_rx()];
    for (k, &r) in active.iter().enumerate() {
        duals[r] = solution.allocation.weights()[k];
    }
    Ok(duals)
}

/// Largest `|p_i - p_mirror(i)|` over the reflections the grid admits.
pub fn symmetry_residual(weights: &[f64], grid: &LatticeGrid) -> f64 {
    [grid.mirror_x(), grid.mirror_z()]
        .into_iter()
        .flatten()
        .flat_map(|map| map.iter().enumerate().map(move |(i, &j)| (weights[i] - weights[j]).abs()))
        .fold(0.0, f64::max)
}

/// Certificate for an arbitrary `(allocation, duals)` pair.
pub fn certify(
    allocation: &PowerAllocation,
    duals: &[f64],
    gains: &GainMatrix,
    tol_cert: f64,
    tol_sym: f64,
) -> Result<OptimalityCertificate> {
    let recv = gains.received(allocation.weights())?;
    let fbar = weighted_average_gain(duals, gains)?;
    let m = recv.min();
    let upper = fbar.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let support_deviation = allocation
        .weights()
        .iter()
        .zip(&fbar)
        .filter(|(w, _)| **w >= SUPPORT_THRESHOLD)
        .map(|(_, f)| (f - m).abs() / m)
        .fold(0.0, f64::max);
    let total: f64 = duals.iter().sum();
    let complementarity = duals
        .iter()
        .zip(recv.iter())
        .map(|(l, r)| l / total * (r - m).abs() / m)
        .fold(0.0, f64::max);
    let symmetry = gains
        .tx_grid()
        .map_or(0.0, |g| symmetry_residual(allocation.weights(), g));
    let max_fbar_excess = (upper - m) / m;
    let passed = max_fbar_excess <= tol_cert && support_deviation <= tol_cert && symmetry <= tol_sym;
    Ok(OptimalityCertificate {
        objective_m: m,
        dual_bound: upper,
        max_fbar_excess,
        support_deviation,
        symmetry_residual: symmetry,
        complementarity,
        support_threshold: SUPPORT_THRESHOLD,
        tol_cert,
        tol_sym,
        passed,
    })
}

pub fn verify_optimality(
    solution: &MaxMinSolution,
    gains: &GainMatrix,
    tol_cert: f64,
) -> Result<OptimalityCertificate> {
    if solution.allocation.len() != gains.n_tx() {
        return Err(Error::DimensionMismatch {
            expected: gains.n_tx(),
            actual: solution.allocation.len(),
        });
    }
    certify(&solution.allocation, &solution.duals, gains, tol_cert, TOL_SYM)
}

/// Certificate for an allocation supplied without duals, using
/// [`recover_duals`].
pub fn verify_allocation(
    allocation: &PowerAllocation,
    gains: &GainMatrix,
    tol_cert: f64,
) -> Result<OptimalityCertificate> {
    let duals = recover_duals(allocation, gains)?;
    certify(allocation, &duals, gains, tol_cert, TOL_SYM)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    /// Antennas at or above the support threshold.
    pub nonzero_count: usize,
    pub grid_cells: usize,
    /// `100 * nonzero_count / grid_cells`.
    pub support_fraction_percent: f64,
    pub symmetry_residual: f64,
    pub threshold: f64,
}

pub fn check_structure(solution: &MaxMinSolution, tx_grid: &LatticeGrid) -> Result<StructureReport> {
    allocation_structure(&solution.allocation, tx_grid)
}

pub fn allocation_structure(allocation: &PowerAllocation, tx_grid: &LatticeGrid) -> Result<StructureReport> {
    if allocation.len() != tx_grid.len() {
        return Err(Error::DimensionMismatch {
            expected: tx_grid.len(),
            actual: allocation.len(),
        });
    }
    let nonzero_count = allocation
        .weights()
        .iter()
        .filter(|w| **w >= SUPPORT_THRESHOLD)
        .count();
    Ok(StructureReport {
        nonzero_count,
        grid_cells: tx_grid.len(),
        support_fraction_percent: 100.0 * nonzero_count as f64 / tx_grid.len() as f64,
        symmetry_residual: symmetry_residual(allocation.weights(), tx_grid),
        threshold: SUPPORT_THRESHOLD,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fbar_single_row_is_that_row() {
        let g = GainMatrix::from_rows(&[vec![0.3, 0.1, 0.2]]).unwrap();
        assert_eq!(weighted_average_gain(&[1.0], &g).unwrap(), vec![0.3, 0.1, 0.2]);
    }

    #[test]
    fn fbar_equal_duals_is_row_mean() {
        let g = GainMatrix::from_rows(&[vec![0.2, 0.4], vec![0.6, 0.0]]).unwrap();
        let f = weighted_average_gain(&[2.0, 2.0], &g).unwrap();
        assert_relative_eq!(f[0], 0.4, max_relative = 1e-15);
        assert_relative_eq!(f[1], 0.2, max_relative = 1e-15);
    }

    #[test]
    fn fbar_rejects_zero_duals() {
        let g = GainMatrix::from_rows(&[vec![0.2]]).unwrap();
        assert!(weighted_average_gain(&[0.0], &g).is_err());
        assert!(matches!(
            weighted_average_gain(&[1.0, 1.0], &g),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn scalar_instance_passes_exactly() {
        let g = GainMatrix::from_rows(&[vec![0.25]]).unwrap();
        let a = PowerAllocation::new(vec![1.0]).unwrap();
        let c = verify_allocation(&a, &g, TOL_CERT).unwrap();
        assert!(c.passed);
        assert_eq!(c.max_fbar_excess, 0.0);
        assert_eq!(c.support_deviation, 0.0);
    }

    #[test]
    fn recovered_duals_certify_mixed_optimum() {
        // Value 0.6 at p = (1/2, 1/2); equal duals on both rows certify it.
        let g = GainMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 1.0]]).unwrap();
        let a = PowerAllocation::new(vec![0.5, 0.5]).unwrap();
        let d = recover_duals(&a, &g).unwrap();
        assert_relative_eq!(d[0], 0.5, max_relative = 1e-8);
        assert!(verify_allocation(&a, &g, TOL_CERT).unwrap().passed);
    }

    #[test]
    fn dominated_choice_fails() {
        let g = GainMatrix::from_rows(&[vec![0.25, 0.1]]).unwrap();
        let a = PowerAllocation::single(2, 1).unwrap();
        let c = verify_allocation(&a, &g, TOL_CERT).unwrap();
        assert!(!c.passed);
        assert_relative_eq!(c.max_fbar_excess, 1.5, max_relative = 1e-12);
    }
}
