//! Mirror-group reduction.
//!
//! With the group `{id, m_x, m_z, m_x m_z}` acting on both grids and `F`
//! equivariant, a symmetric optimum exists. Parametrising it by orbit totals
//! `q_o` (each orbit member receives `q_o / |o|`) gives the reduced matrix
//!
//! ```text
//!   R[a, b] = (1 / |b|) * sum_{t in b} F[rep(a), t]
//! ```
//!
//! which depends only on the receiver orbit `a`. Expanding the reduced duals
//! as `lambda_r = mu_a / |a|` yields a valid full-grid certificate: for any
//! transmitter `t` in orbit `b`, equivariance gives
//! `sum_r lambda_r F[r, t] = sum_a mu_a R[a, b]`.

use nalgebra::{DMatrix, DVector};

use super::{finish, generate, validate, MaxMinSolution, Orbits, SolveMethod, SolveOptions};
use crate::channel::GainMatrix;
use crate::error::{Error, Result};

/// Orbit structure of an equivariant, doubly mirror-symmetric instance.
#[derive(Debug, Clone)]
pub struct MirrorGroup {
    pub rx: Orbits,
    pub tx: Orbits,
}

const EQUIVARIANCE_TOL: f64 = 1e-12;

fn compose(a: &[usize], b: &[usize]) -> Vec<usize> {
    b.iter().map(|&i| a[i]).collect()
}

fn check(gains: &GainMatrix) -> std::result::Result<MirrorGroup, String> {
    let rx = gains.rx_grid().ok_or("gain matrix carries no receiver grid")?;
    let tx = gains.tx_grid().ok_or("gain matrix carries no transmitter grid")?;
    let (rmx, rmz) = match (rx.mirror_x(), rx.mirror_z()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err("receiver grid is not closed under both reflections".into()),
    };
    let (tmx, tmz) = match (tx.mirror_x(), tx.mirror_z()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err("transmitter grid is not closed under both reflections".into()),
    };
    let g = gains.entries();
    for (rp, tp, name) in [(rmx, tmx, "x"), (rmz, tmz, "z")] {
        for t in 0..g.ncols() {
            let mt = tp[t];
            for r in 0..g.nrows() {
                let a = g[(r, t)];
                let b = g[(rp[r], mt)];
                if (a - b).abs() > EQUIVARIANCE_TOL * a.abs().max(b.abs()) {
                    return Err(format!("gains are not invariant under the {name} reflection"));
                }
            }
        }
    }
    let rxz = compose(rmx, rmz);
    let txz = compose(tmx, tmz);
    Ok(MirrorGroup {
        rx: Orbits::from_permutations(g.nrows(), &[rmx, rmz, &rxz]),
        tx: Orbits::from_permutations(g.ncols(), &[tmx, tmz, &txz]),
    })
}

/// The mirror group of `gains`, if both grids are symmetric and the entries
/// are equivariant (faded gains generally are not).
pub fn mirror_group(gains: &GainMatrix) -> Option<MirrorGroup> {
    check(gains).ok()
}

pub fn solve_symmetric_reduced(gains: &GainMatrix, tol: f64) -> Result<MaxMinSolution> {
    solve_symmetric_reduced_with(gains, &SolveOptions::with_tol(tol))
}

pub fn solve_symmetric_reduced_with(gains: &GainMatrix, opts: &SolveOptions) -> Result<MaxMinSolution> {
    validate(gains, opts)?;
    let group = check(gains).map_err(Error::NotSymmetric)?;
    let g = gains.entries();
    let (ro, to) = (&group.rx, &group.tx);
    let reduced = DMatrix::from_fn(ro.len(), to.len(), |a, b| {
        let rep = ro.members(a)[0];
        let orbit = to.members(b);
        orbit.iter().map(|&t| g[(rep, t)]).sum::<f64>() / orbit.len() as f64
    });
    let core = generate(&reduced, None, None, opts)?;

    let p = DVector::from_fn(g.ncols(), |t, _| {
        let b = to.class_of(t);
        core.p[b] / to.members(b).len() as f64
    });
    let lam = DVector::from_fn(g.nrows(), |r, _| {
        let a = ro.class_of(r);
        core.lam[a] / ro.members(a).len() as f64
    });
    finish(g, p, lam, SolveMethod::SymmetricReduced, &core.stats, true, opts.tol)
}
