//! Max-min power allocation over a discretised ceiling.
//!
//! [`solve_maxmin`] runs the interior-point core inside a row/column
//! generation loop: the full receiver-by-transmitter matrix at lod 81 is
//! 6561 x 6561, but only a few dozen transmitters carry power and a modest
//! set of receivers is ever tight. Each round solves the restricted LP
//! exactly, prices every excluded row and column against the full matrix,
//! and adds the worst offenders. Termination therefore comes with a global
//! primal/dual certificate rather than a restricted one.
//!
//! Before returning, the working sets are closed over every near-tight row
//! and column and re-solved, so the interior-point limit is the analytic
//! centre of the whole optimal face. Supports reported after thresholding
//! are then maximal and deterministic rather than an arbitrary vertex.

mod ipm;
mod oracle;
mod symmetric;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::GainMatrix;
use crate::error::{invalid, Error, Result};

pub use oracle::{cutting_plane_oracle, cutting_plane_oracle_with, OracleOptions};
pub use symmetric::{mirror_group, solve_symmetric_reduced, solve_symmetric_reduced_with, MirrorGroup};

/// Weights below this count as "no antenna".
pub const SUPPORT_THRESHOLD: f64 = 1e-6;
/// Default relative tolerance for solves.
pub const DEFAULT_TOL: f64 = 1e-9;

const SUM_TOL: f64 = 1e-9;

/// Normalised power weights over the transmit grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    weights: Vec<f64>,
    support: Vec<usize>,
    threshold_applied: f64,
    removed_mass: f64,
}

impl PowerAllocation {
    /// Validates nonnegativity and unit sum (to 1e-9).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("allocation must be nonempty"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("allocation weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(invalid(format!("allocation weights sum to {sum}, expected 1")));
        }
        Ok(Self::unchecked(weights, 0.0, 0.0))
    }

    /// Rescales nonnegative weights to unit sum.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid("allocation weights must be finite and nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::Degenerate("allocation has no positive weight".into()));
        }
        Self::new(weights.into_iter().map(|w| w / sum).collect())
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("allocation must be nonempty"));
        }
        Self::new(vec![1.0 / n as f64; n])
    }

    /// All power on one antenna.
    pub fn single(n: usize, index: usize) -> Result<Self> {
        if index >= n {
            return Err(invalid(format!("index {index} out of range for {n} antennas")));
        }
        let mut w = vec![0.0; n];
        w[index] = 1.0;
        Self::new(w)
    }

    fn unchecked(weights: Vec<f64>, threshold_applied: f64, removed_mass: f64) -> Self {
        let support = weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(|(i, _)| i)
            .collect();
        Self {
            weights,
            support,
            threshold_applied,
            removed_mass,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn nonzero_count(&self) -> usize {
        self.support.len()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn threshold_applied(&self) -> f64 {
        self.threshold_applied
    }

    /// Mass dropped by [`extract_support`] before renormalising.
    pub fn removed_mass(&self) -> f64 {
        self.removed_mass
    }
}

/// Zeroes weights below `threshold` and renormalises the rest.
pub fn extract_support(allocation: &PowerAllocation, threshold: f64) -> Result<PowerAllocation> {
    if !(threshold >= 0.0) {
        return Err(invalid("threshold must be nonnegative"));
    }
    let mut removed = 0.0;
    let kept: Vec<f64> = allocation
        .weights
        .iter()
        .map(|&w| {
            if w < threshold {
                removed += w;
                0.0
            } else {
                w
            }
        })
        .collect();
    let total: f64 = kept.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate(format!(
            "every weight lies below the threshold {threshold:e}"
        )));
    }
    let weights = kept.into_iter().map(|w| w / total).collect();
    Ok(PowerAllocation::unchecked(
        weights,
        threshold,
        allocation.removed_mass + removed,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveMethod {
    Full,
    SymmetricReduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub method: SolveMethod,
    /// Generation rounds (one restricted LP each).
    pub rounds: usize,
    pub ipm_iterations: usize,
    /// Final working-set sizes (in reduced variables for the symmetric path).
    pub working_rx: usize,
    pub working_tx: usize,
    /// `max_t fbar(t)`: an upper bound on every allocation's worst receiver.
    pub dual_bound: f64,
    /// `(dual_bound - m) / m`.
    pub duality_gap: f64,
    /// `max_r lambda_r |row_r p - m| / m`.
    pub complementarity: f64,
    /// `|sum p - 1|`.
    pub primal_infeasibility: f64,
    pub symmetrized: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxMinSolution {
    pub allocation: PowerAllocation,
    /// `min_r (F p)_r` over the full receiver grid.
    pub objective_m: f64,
    /// Receiver weights, normalised to unit sum.
    pub duals: Vec<f64>,
    pub stats: SolverStats,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    /// Average over the mirror group when the instance is symmetric.
    pub symmetrize: bool,
    /// Problems with at most this many rows (columns) use all of them directly.
    pub full_limit: usize,
    /// Most rows and most columns added per generation round.
    pub batch: usize,
    pub max_rounds: usize,
    pub ipm_tol: f64,
    pub ipm_max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            symmetrize: true,
            full_limit: 600,
            batch: 64,
            max_rounds: 400,
            ipm_tol: 1e-12,
            ipm_max_iter: 200,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

pub fn solve_maxmin(gains: &GainMatrix, tol: f64) -> Result<MaxMinSolution> {
    solve_maxmin_with(gains, &SolveOptions::with_tol(tol))
}

pub fn solve_maxmin_with(gains: &GainMatrix, opts: &SolveOptions) -> Result<MaxMinSolution> {
    validate(gains, opts)?;
    let g = gains.entries();
    let group = if opts.symmetrize { mirror_group(gains) } else { None };
    let core = generate(
        g,
        group.as_ref().map(|gr| &gr.rx),
        group.as_ref().map(|gr| &gr.tx),
        opts,
    )?;
    let (mut p, mut lam) = (core.p, core.lam);
    if let Some(gr) = &group {
        p = gr.tx.average(&p);
        lam = gr.rx.average(&lam);
    }
    finish(
        g,
        p,
        lam,
        SolveMethod::Full,
        &core.stats,
        group.is_some(),
        opts.tol,
    )
}

pub(crate) fn validate(gains: &GainMatrix, opts: &SolveOptions) -> Result<()> {
    if !(opts.tol > 0.0 && opts.tol < 1.0) {
        return Err(invalid(format!("tolerance must lie in (0, 1), got {}", opts.tol)));
    }
    if gains.entries().iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("max-min solve needs strictly positive gains"));
    }
    Ok(())
}

/// Closed index classes (mirror orbits) used to keep working sets symmetric.
#[derive(Debug, Clone)]
pub struct Orbits {
    class_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl Orbits {
    /// Orbits of `0..n` under the group generated by `perms`.
    pub(crate) fn from_permutations(n: usize, perms: &[&[usize]]) -> Self {
        let mut class_of = vec![usize::MAX; n];
        let mut members = Vec::new();
        for start in 0..n {
            if class_of[start] != usize::MAX {
                continue;
            }
            let id = members.len();
            let mut orbit = vec![start];
            class_of[start] = id;
            let mut k = 0;
            while k < orbit.len() {
                let i = orbit[k];
                for p in perms {
                    let j = p[i];
                    if class_of[j] == usize::MAX {
                        class_of[j] = id;
                        orbit.push(j);
                    }
                }
                k += 1;
            }
            orbit.sort_unstable();
            members.push(orbit);
        }
        Self { class_of, members }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn class_of(&self, i: usize) -> usize {
        self.class_of[i]
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    /// Replaces every entry by the mean over its orbit.
    pub fn average(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v.clone();
        for orbit in &self.members {
            let mean = orbit.iter().map(|&i| v[i]).sum::<f64>() / orbit.len() as f64;
            for &i in orbit {
                out[i] = mean;
            }
        }
        out
    }
}

struct WorkingSet<'a> {
    member: Vec<bool>,
    orbits: Option<&'a Orbits>,
}

impl<'a> WorkingSet<'a> {
    fn new(n: usize, orbits: Option<&'a Orbits>) -> Self {
        Self {
            member: vec![false; n],
            orbits,
        }
    }

    fn contains(&self, i: usize) -> bool {
        self.member[i]
    }

    fn insert(&mut self, i: usize) -> bool {
        if self.member[i] {
            return false;
        }
        match self.orbits {
            Some(o) => {
                for &j in o.members(o.class_of(i)) {
                    self.member[j] = true;
                }
            }
            None => self.member[i] = true,
        }
        true
    }

    fn fill(&mut self) {
        self.member.iter_mut().for_each(|m| *m = true);
    }

    fn indices(&self) -> Vec<usize> {
        (0..self.member.len()).filter(|&i| self.member[i]).collect()
    }
}

pub(crate) struct CoreStats {
    pub rounds: usize,
    pub ipm_iterations: usize,
    pub working_rx: usize,
    pub working_tx: usize,
}

pub(crate) struct CoreSolution {
    pub p: DVector<f64>,
    pub lam: DVector<f64>,
    pub stats: CoreStats,
}

/// `k` smallest entries of `key` (ties by index), restricted to `eligible`.
fn smallest_k(key: &DVector<f64>, k: usize, eligible: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..key.len()).filter(|&i| eligible(i)).collect();
    idx.sort_by(|&a, &b| key[a].total_cmp(&key[b]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Row/column generation around the interior-point core.
pub(crate) fn generate(
    g: &DMatrix<f64>,
    row_orbits: Option<&Orbits>,
    col_orbits: Option<&Orbits>,
    opts: &SolveOptions,
) -> Result<CoreSolution> {
    let (m, n) = g.shape();
    let ipm_opts = ipm::IpmOptions {
        tol: opts.ipm_tol,
        max_iter: opts.ipm_max_iter,
        accept: 0.5 * opts.tol,
        ..ipm::IpmOptions::default()
    };
    let price_tol = 0.1 * opts.tol;
    let face_tol = 1e-7_f64.max(10.0 * opts.tol);

    let mut rows = WorkingSet::new(m, row_orbits);
    let mut cols = WorkingSet::new(n, col_orbits);
    if n <= opts.full_limit {
        cols.fill();
    } else {
        // strongest single antennas by their own worst receiver
        let col_min = DVector::from_iterator(n, g.column_iter().map(|c| -c.min()));
        for t in smallest_k(&col_min, 16, |_| true) {
            cols.insert(t);
        }
    }
    if m <= opts.full_limit {
        rows.fill();
    } else {
        let c = cols.indices();
        let mut p = DVector::zeros(n);
        for &t in &c {
            p[t] = 1.0 / c.len() as f64;
        }
        let recv = g * &p;
        for r in smallest_k(&recv, 32, |_| true) {
            rows.insert(r);
        }
    }

    let mut ipm_iterations = 0;
    for round in 1..=opts.max_rounds {
        let ri = rows.indices();
        let ci = cols.indices();
        let sub = g.select_rows(&ri).select_columns(&ci);
        let sol = ipm::solve(&sub, &ipm_opts)?;
        ipm_iterations += sol.iterations;
        let v = sol.value();

        let mut p = DVector::zeros(n);
        for (k, &t) in ci.iter().enumerate() {
            p[t] = sol.allocation()[k];
        }
        let mut lam = DVector::zeros(m);
        let w = sol.receiver_weights();
        for (k, &r) in ri.iter().enumerate() {
            lam[r] = w[k];
        }
        let recv = g * &p;
        let neg_fbar = -g.tr_mul(&lam);

        let bad_rows = smallest_k(&recv, opts.batch, |r| {
            !rows.contains(r) && recv[r] < v * (1.0 - price_tol)
        });
        let bad_cols = smallest_k(&neg_fbar, opts.batch, |t| {
            !cols.contains(t) && -neg_fbar[t] > v * (1.0 + price_tol)
        });
        let mut added = false;
        for r in bad_rows {
            added |= rows.insert(r);
        }
        for t in bad_cols {
            added |= cols.insert(t);
        }
        if !added {
            // close over the (numerically) optimal faces
            for r in 0..m {
                if !rows.contains(r) && recv[r] <= v * (1.0 + face_tol) {
                    added |= rows.insert(r);
                }
            }
            for t in 0..n {
                if !cols.contains(t) && -neg_fbar[t] >= v * (1.0 - face_tol) {
                    added |= cols.insert(t);
                }
            }
        }
        if !added {
            return Ok(CoreSolution {
                p,
                lam,
                stats: CoreStats {
                    rounds: round,
                    ipm_iterations,
                    working_rx: ri.len(),
                    working_tx: ci.len(),
                },
            });
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_rounds,
        gap: f64::NAN,
        infeasibility: f64::NAN,
    })
}

/// Global verification and packaging of a full-grid `(p, lambda)` pair.
pub(crate) fn finish(
    g: &DMatrix<f64>,
    p: DVector<f64>,
    lam: DVector<f64>,
    method: SolveMethod,
    core: &CoreStats,
    symmetrized: bool,
    tol: f64,
) -> Result<MaxMinSolution> {
    let p_sum = p.sum();
    let p = p.map(|v| v.max(0.0)) / p_sum;
    let lam = lam.map(|v| v.max(0.0)) / lam.map(|v| v.max(0.0)).sum();
    let recv = g * &p;
    let m_val = recv.min();
    let upper = g.tr_mul(&lam).max();
    let gap = (upper - m_val) / m_val;
    let complementarity = lam
        .iter()
        .zip(recv.iter())
        .map(|(l, r)| l * (r - m_val).abs() / m_val)
        .fold(0.0, f64::max);
    if gap > tol {
        return Err(Error::NotConverged {
            iterations: core.ipm_iterations,
            gap,
            infeasibility: (p.sum() - 1.0).abs(),
        });
    }
    let allocation = PowerAllocation::normalized(p.iter().copied().collect())?;
    let primal_infeasibility = (allocation.weights().iter().sum::<f64>() - 1.0).abs();
    Ok(MaxMinSolution {
        allocation,
        objective_m: m_val,
        duals: lam.iter().copied().collect(),
        stats: SolverStats {
            method,
            rounds: core.rounds,
            ipm_iterations: core.ipm_iterations,
            working_rx: core.working_rx,
            working_tx: core.working_tx,
            dual_bound: upper,
            duality_gap: gap,
            complementarity,
            primal_infeasibility,
            symmetrized,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn extract_support_drops_small_mass() {
        let a = PowerAllocation::normalized(vec![0.5, 0.5, 1e-8]).unwrap();
        let s = extract_support(&a, SUPPORT_THRESHOLD).unwrap();
        assert_eq!(s.support(), &[0, 1]);
        assert_relative_eq!(s.weights()[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(s.removed_mass(), 1e-8 / (1.0 + 1e-8), max_relative = 1e-12);
        assert_eq!(s.threshold_applied(), SUPPORT_THRESHOLD);
    }

    #[test]
    fn extract_support_identity_and_degenerate() {
        let a = PowerAllocation::new(vec![1.0]).unwrap();
        assert_eq!(extract_support(&a, SUPPORT_THRESHOLD).unwrap().weights(), &[1.0]);
        let tiny = PowerAllocation::uniform(2_000_000).unwrap();
        assert!(matches!(
            extract_support(&tiny, SUPPORT_THRESHOLD),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn allocation_rejects_bad_sums() {
        assert!(PowerAllocation::new(vec![0.5, 0.4]).is_err());
        assert!(PowerAllocation::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn single_column_takes_everything() {
        let g = GainMatrix::from_rows(&[vec![0.3], vec![0.2], vec![0.7]]).unwrap();
        let s = solve_maxmin(&g, DEFAULT_TOL).unwrap();
        assert_eq!(s.allocation.weights(), &[1.0]);
        assert_relative_eq!(s.objective_m, 0.2, max_relative = 1e-12);
    }

    #[test]
    fn generation_matches_direct_solve() {
        // force the generation path on a small dense instance
        let g = DMatrix::from_fn(90, 70, |r, c| {
            let x = (r as f64 * 0.37 + c as f64 * 0.11).sin();
            1.0 + 0.5 * x * x + 0.01 * ((r * c) % 7) as f64
        });
        let gm = GainMatrix::from_matrix(g).unwrap();
        let direct = solve_maxmin(&gm, 1e-10).unwrap();
        let opts = SolveOptions {
            full_limit: 10,
            batch: 4,
            tol: 1e-10,
            ..SolveOptions::default()
        };
        let gen = solve_maxmin_with(&gm, &opts).unwrap();
        assert!(gen.stats.rounds > 1);
        assert_relative_eq!(gen.objective_m, direct.objective_m, max_relative = 1e-9);
    }

    #[test]
    fn orbits_of_reflections() {
        let mx = [2, 1, 0];
        let o = Orbits::from_permutations(3, &[&mx]);
        assert_eq!(o.len(), 2);
        assert_eq!(o.members(o.class_of(2)), &[0, 2]);
        let avg = o.average(&DVector::from_vec(vec![1.0, 5.0, 3.0]));
        assert_eq!(avg.as_slice(), &[2.0, 5.0, 2.0]);
    }
}
