//! Dense primal-dual interior-point method (Mehrotra predictor-corrector)
//! for the max-min epigraph LP.
//!
//! With all gains positive the optimum `o*` is positive, so substituting
//! `u = p / o` turns `max o s.t. G p >= o 1, 1'p = 1, p >= 0` into
//!
//! ```text
//!   primal: min 1'u   s.t.  G u - w = 1,  u, w >= 0
//!   dual:   max 1'y   s.t.  G'y + z_u = 1,  y = z_w,  z >= 0
//! ```
//!
//! Optimal `p = u / 1'u`, `o* = 1 / 1'u`, and the receiver weights are
//! `lambda = y / 1'y`. Both formulations share the same optimal faces, so the
//! central-path limit is the analytic centre of the epigraph optimum.
//!
//! Each Newton system is reduced to a dense SPD normal-equation system on
//! whichever side of `G` is smaller and factored once per iteration.

use std::cell::OnceCell;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub(crate) struct IpmOptions {
    /// Target relative duality gap.
    pub tol: f64,
    /// Target scaled residual; roundoff in the normal equations floors it
    /// around 1e-12, so it is looser than `tol`.
    pub feas_tol: f64,
    /// A stalled run still returns its best iterate if within this. On
    /// degenerate faces double precision bottoms out near 1e-10.
    pub accept: f64,
    pub max_iter: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            feas_tol: 1e-10,
            accept: 1e-10,
            max_iter: 200,
        }
    }
}

/// Window (iterations) over which the merit must at least halve; otherwise
/// the run counts as stalled.
const STALL: usize = 8;

#[derive(Debug, Clone)]
pub(crate) struct IpmSolution {
    pub u: DVector<f64>,
    pub y: DVector<f64>,
    pub iterations: usize,
}

impl IpmSolution {
    /// `p = u / 1'u`.
    pub fn allocation(&self) -> DVector<f64> {
        let s = self.u.sum();
        &self.u / s
    }

    /// `lambda = max(y, 0) / sum`.
    pub fn receiver_weights(&self) -> DVector<f64> {
        let y = self.y.map(|v| v.max(0.0));
        let s = y.sum();
        y / s
    }

    /// Master objective `1 / 1'u`.
    pub fn value(&self) -> f64 {
        1.0 / self.u.sum()
    }
}

struct Iterate {
    u: DVector<f64>,
    w: DVector<f64>,
    y: DVector<f64>,
    zu: DVector<f64>,
    zw: DVector<f64>,
}

struct Residuals {
    rp: DVector<f64>,
    rdu: DVector<f64>,
    rdw: DVector<f64>,
}

struct Direction {
    du: DVector<f64>,
    dw: DVector<f64>,
    dy: DVector<f64>,
    dzu: DVector<f64>,
    dzw: DVector<f64>,
}

enum NormalSide {
    /// `(G D_u G' + D_w) dy = ...`, size m.
    Receivers,
    /// `(G' D_w^-1 G + D_u^-1) du = ...`, size n.
    Transmitters,
}

struct Factored<'a> {
    g: &'a DMatrix<f64>,
    side: NormalSide,
    chol: ModifiedCholesky,
    du_diag: DVector<f64>,
    dw_diag: DVector<f64>,
    /// Fallback when the normal equations have lost the direction.
    augmented: OnceCell<LU<f64, Dyn, Dyn>>,
}

/// Dense Cholesky that tolerates the near-singular systems of late
/// interior-point iterations: a pivot lost to cancellation (below
/// `PIVOT_REL` of its original diagonal) is replaced by a huge value, which
/// zeroes that component of the solution instead of amplifying noise.
struct ModifiedCholesky {
    n: usize,
    /// Row-major lower triangle.
    l: Vec<f64>,
}

const PIVOT_REL: f64 = 1e-18;
const REFINE_STEPS: usize = 5;
/// Newton residual above which the augmented system takes over.
const AUGMENT_TRIGGER: f64 = 1e-11;
const NEIGHBOURHOOD: f64 = 1e-4;
const HUGE_PIVOT: f64 = 1e64;

impl ModifiedCholesky {
    fn new(k: &DMatrix<f64>) -> Result<Self> {
        let n = k.nrows();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            let (done, rest) = l.split_at_mut(i * n);
            let row_i = &mut rest[..n];
            for j in 0..i {
                let row_j = &done[j * n..j * n + j + 1];
                let s: f64 = row_i[..j].iter().zip(&row_j[..j]).map(|(a, b)| a * b).sum();
                row_i[j] = (k[(i, j)] - s) / row_j[j];
            }
            let a = k[(i, i)];
            let d = a - row_i[..i].iter().map(|v| v * v).sum::<f64>();
            if !d.is_finite() {
                return Err(Error::Numerical("non-finite pivot in normal equations".into()));
            }
            row_i[i] = if d > PIVOT_REL * a.abs() { d.sqrt() } else { HUGE_PIVOT };
        }
        Ok(Self { n, l })
    }

    fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let l = &self.l;
        let mut x = b.clone();
        for i in 0..n {
            let s: f64 = (0..i).map(|p| l[i * n + p] * x[p]).sum();
            x[i] = (x[i] - s) / l[i * n + i];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|p| l[p * n + i] * x[p]).sum();
            x[i] = (x[i] - s) / l[i * n + i];
        }
        x
    }
}

impl<'a> Factored<'a> {
    fn new(g: &'a DMatrix<f64>, it: &Iterate) -> Result<Self> {
        let (m, n) = g.shape();
        let du_diag = it.u.component_div(&it.zu);
        let dw_diag = it.w.component_div(&it.zw);
        let (side, k) = if m <= n {
            let mut h = g.clone();
            for (j, mut col) in h.column_iter_mut().enumerate() {
                col *= du_diag[j].sqrt();
            }
            let mut k = &h * h.transpose();
            for i in 0..m {
                k[(i, i)] += dw_diag[i];
            }
            (NormalSide::Receivers, k)
        } else {
            let mut h = g.clone();
            for (i, mut row) in h.row_iter_mut().enumerate() {
                row /= dw_diag[i].sqrt();
            }
            let mut k = h.tr_mul(&h);
            for j in 0..n {
                k[(j, j)] += 1.0 / du_diag[j];
            }
            (NormalSide::Transmitters, k)
        };
        Ok(Self {
            g,
            side,
            chol: ModifiedCholesky::new(&k)?,
            du_diag,
            dw_diag,
            augmented: OnceCell::new(),
        })
    }

    /// Solves the Newton system for complementarity targets `rcu`, `rcw`.
    ///
    /// The normal equations are cheap but, once a few columns dominate
    /// `G D_u G'` by more than the pivot floor, the remaining Schur
    /// complement is pure cancellation and refinement with the same factor
    /// cannot recover. The quasi-definite augmented system
    /// `[-D_u^-1 G'; G D_w]` has no such cancellation and is used instead
    /// when the refined residual stays large.
    fn solve(&self, it: &Iterate, res: &Residuals, rcu: &DVector<f64>, rcw: &DVector<f64>) -> Direction {
        let (d, err) = self.refine(it, res, rcu, rcw, |r, a, b| self.solve_once(it, r, a, b));
        if err <= AUGMENT_TRIGGER {
            return d;
        }
        let lu = self.augmented.get_or_init(|| self.augmented_lu());
        let (alt, alt_err) = self.refine(it, res, rcu, rcw, |r, a, b| self.solve_augmented(lu, it, r, a, b));
        if alt_err < err {
            alt
        } else {
            d
        }
    }

    /// Iterative refinement against the unreduced Newton system; returns
    /// the direction and its final residual.
    fn refine(
        &self,
        it: &Iterate,
        res: &Residuals,
        rcu: &DVector<f64>,
        rcw: &DVector<f64>,
        solve: impl Fn(&Residuals, &DVector<f64>, &DVector<f64>) -> Direction,
    ) -> (Direction, f64) {
        let g = self.g;
        let mut d = solve(res, rcu, rcw);
        let mut last = f64::INFINITY;
        for step in 0..=REFINE_STEPS {
            let err = Residuals {
                rp: &res.rp - (g * &d.du - &d.dw),
                rdu: &res.rdu - (g.tr_mul(&d.dy) + &d.dzu),
                rdw: &res.rdw - (&d.dzw - &d.dy),
            };
            let ecu = rcu - (it.zu.component_mul(&d.du) + it.u.component_mul(&d.dzu));
            let ecw = rcw - (it.zw.component_mul(&d.dw) + it.w.component_mul(&d.dzw));
            let size = [&err.rp, &err.rdu, &err.rdw, &ecu, &ecw]
                .iter()
                .map(|v| v.amax())
                .fold(0.0, f64::max);
            if step == REFINE_STEPS || !(size < 0.5 * last) {
                return (d, size.min(last));
            }
            last = size;
            let c = solve(&err, &ecu, &ecw);
            d.du += c.du;
            d.dw += c.dw;
            d.dy += c.dy;
            d.dzu += c.dzu;
            d.dzw += c.dzw;
        }
        unreachable!("the loop returns on its last step")
    }

    fn augmented_lu(&self) -> LU<f64, Dyn, Dyn> {
        let g = self.g;
        let (m, n) = g.shape();
        let mut a = DMatrix::zeros(n + m, n + m);
        for j in 0..n {
            a[(j, j)] = -1.0 / self.du_diag[j];
        }
        for i in 0..m {
            a[(n + i, n + i)] = self.dw_diag[i];
        }
        a.view_mut((n, 0), (m, n)).copy_from(g);
        a.view_mut((0, n), (n, m)).copy_from(&g.transpose());
        a.lu()
    }

    fn solve_augmented(
        &self,
        lu: &LU<f64, Dyn, Dyn>,
        it: &Iterate,
        res: &Residuals,
        rcu: &DVector<f64>,
        rcw: &DVector<f64>,
    ) -> Direction {
        let (m, n) = self.g.shape();
        let tw = (rcw - it.w.component_mul(&res.rdw)).component_div(&it.zw);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(&res.rdu - rcu.component_div(&it.u)));
        rhs.rows_mut(n, m).copy_from(&(&res.rp + &tw));
        let x = lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n + m));
        let du = x.rows(0, n).into_owned();
        let dy = x.rows(n, m).into_owned();
        let dzu = (rcu - it.zu.component_mul(&du)).component_div(&it.u);
        let dw = tw - self.dw_diag.component_mul(&dy);
        let dzw = &res.rdw + &dy;
        Direction { du, dw, dy, dzu, dzw }
    }

    fn solve_once(&self, it: &Iterate, res: &Residuals, rcu: &DVector<f64>, rcw: &DVector<f64>) -> Direction {
        let g = self.g;
        match self.side {
            NormalSide::Receivers => {
                let tu = (rcu - it.u.component_mul(&res.rdu)).component_div(&it.zu);
                let tw = (rcw - it.w.component_mul(&res.rdw)).component_div(&it.zw);
                let rhs = &res.rp - g * &tu + &tw;
                let dy = self.chol.solve(&rhs);
                let dzu = &res.rdu - g.tr_mul(&dy);
                let du = tu + self.du_diag.component_mul(&g.tr_mul(&dy));
                let dzw = &res.rdw + &dy;
                let dw = tw - self.dw_diag.component_mul(&dy);
                Direction { du, dw, dy, dzu, dzw }
            }
            NormalSide::Transmitters => {
                let qw = (rcw - it.w.component_mul(&res.rdw)).component_div(&it.w);
                let qu = (rcu - it.u.component_mul(&res.rdu)).component_div(&it.u);
                let rhs = g.tr_mul(&(&qw + res.rp.component_div(&self.dw_diag))) + qu;
                let du = self.chol.solve(&rhs);
                let dw = g * &du - &res.rp;
                let dy = qw - dw.component_div(&self.dw_diag);
                let dzu = &res.rdu - g.tr_mul(&dy);
                let dzw = &res.rdw + &dy;
                Direction { du, dw, dy, dzu, dzw }
            }
        }
    }
}

fn max_step(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter()
        .zip(dx.iter())
        .filter(|(_, &d)| d < 0.0)
        .map(|(&v, &d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Average complementarity after a step.
fn complementarity(it: &Iterate, d: &Direction, ap: f64, ad: f64) -> f64 {
    let total = (it.u.len() + it.w.len()) as f64;
    ((&it.u + &d.du * ap).dot(&(&it.zu + &d.dzu * ad)) + (&it.w + &d.dw * ap).dot(&(&it.zw + &d.dzw * ad)))
        / total
}

/// Fraction-to-boundary steps, shortened until every complementarity pair
/// stays within a wide neighbourhood of the central path. Pairs collapsing
/// far below the average are what strands the iterate on a wrong face.
fn safeguarded_steps(it: &Iterate, d: &Direction, gamma: f64) -> (f64, f64) {
    let mut ap = (gamma * max_step(&it.u, &d.du).min(max_step(&it.w, &d.dw))).min(1.0);
    let mut ad = (gamma * max_step(&it.zu, &d.dzu).min(max_step(&it.zw, &d.dzw))).min(1.0);
    for _ in 0..40 {
        let mu = complementarity(it, d, ap, ad);
        let floor = NEIGHBOURHOOD * mu;
        let pairs_ok = |x: &DVector<f64>, dx: &DVector<f64>, z: &DVector<f64>, dz: &DVector<f64>| {
            x.iter()
                .zip(dx.iter())
                .zip(z.iter().zip(dz.iter()))
                .all(|((x, dx), (z, dz))| (x + ap * dx) * (z + ad * dz) >= floor)
        };
        if pairs_ok(&it.u, &d.du, &it.zu, &d.dzu) && pairs_ok(&it.w, &d.dw, &it.zw, &d.dzw) {
            break;
        }
        ap *= 0.8;
        ad *= 0.8;
    }
    (ap, ad)
}

fn residuals(g: &DMatrix<f64>, it: &Iterate) -> Residuals {
    let rp = DVector::repeat(g.nrows(), 1.0) - g * &it.u + &it.w;
    let rdu = DVector::repeat(g.ncols(), 1.0) - g.tr_mul(&it.y) - &it.zu;
    let rdw = &it.y - &it.zw;
    Residuals { rp, rdu, rdw }
}

/// Strictly feasible, roughly balanced starting point.
fn initial_point(g: &DMatrix<f64>) -> Iterate {
    let (m, n) = g.shape();
    let min_row_sum = g.row_iter().map(|r| r.sum()).fold(f64::INFINITY, f64::min);
    let max_col_sum = g.column_iter().map(|c| c.sum()).fold(0.0, f64::max);
    let u = DVector::repeat(n, 2.0 / min_row_sum);
    let w = g * &u - DVector::repeat(m, 1.0);
    let y = DVector::repeat(m, 0.5 / max_col_sum);
    let zu = DVector::repeat(n, 1.0) - g.tr_mul(&y);
    let zw = y.clone();
    // rebalance so both complementarity blocks start at the same mu
    let mu_u = u.dot(&zu) / n as f64;
    let mu_w = w.dot(&zw) / m as f64;
    let target = (mu_u * mu_w).sqrt();
    let zu = zu * (target / mu_u);
    let zw = zw * (target / mu_w);
    let y = zw.clone();
    Iterate { u, w, y, zu, zw }
}

/// Solves the scaled max-min LP for a positive gain matrix.
pub(crate) fn solve(g: &DMatrix<f64>, opts: &IpmOptions) -> Result<IpmSolution> {
    let (m, n) = g.shape();
    debug_assert!(m > 0 && n > 0);
    let mut it = initial_point(g);
    let total = (m + n) as f64;
    let gamma = 0.95;
    let mut best: Option<(f64, f64, f64, DVector<f64>, DVector<f64>, usize)> = None;
    let mut history = Vec::with_capacity(opts.max_iter);

    for iter in 0..opts.max_iter {
        let res = residuals(g, &it);
        let pobj = it.u.sum();
        let dobj = it.y.sum();
        let rel_gap = (pobj - dobj).abs() / pobj.abs().max(1.0);
        let pinf = res.rp.amax() / (1.0 + it.w.amax().max(1.0));
        let dinf = res.rdu.amax().max(res.rdw.amax()) / (1.0 + it.y.amax().max(1.0));
        let infeasibility = pinf.max(dinf);
        if rel_gap < opts.tol && infeasibility < opts.feas_tol {
            return Ok(IpmSolution {
                u: it.u,
                y: it.y,
                iterations: iter,
            });
        }
        let merit = rel_gap.max(infeasibility);
        history.push(merit);
        if best.as_ref().is_none_or(|b| merit < b.0) {
            best = Some((merit, rel_gap, infeasibility, it.u.clone(), it.y.clone(), iter));
        }
        let best_merit = best.as_ref().map_or(f64::INFINITY, |b| b.0);
        let crawling = iter >= STALL && merit > 0.5 * history[iter - STALL];
        let diverging = merit > 1e3 * best_merit;
        if (crawling || diverging) && best_merit < opts.accept {
            break;
        }

        let mu = (it.u.dot(&it.zu) + it.w.dot(&it.zw)) / total;
        let fac = Factored::new(g, &it)?;

        // predictor
        let rcu = -it.u.component_mul(&it.zu);
        let rcw = -it.w.component_mul(&it.zw);
        let aff = fac.solve(&it, &res, &rcu, &rcw);
        let ap = max_step(&it.u, &aff.du).min(max_step(&it.w, &aff.dw)).min(1.0);
        let ad = max_step(&it.zu, &aff.dzu).min(max_step(&it.zw, &aff.dzw)).min(1.0);
        let mu_aff = ((&it.u + &aff.du * ap).dot(&(&it.zu + &aff.dzu * ad))
            + (&it.w + &aff.dw * ap).dot(&(&it.zw + &aff.dzw * ad)))
            / total;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // corrector, with a first-order fallback when the second-order
        // term backfires (short steps or no decrease in mu)
        let rcu = DVector::repeat(n, sigma * mu) - it.u.component_mul(&it.zu) - aff.du.component_mul(&aff.dzu);
        let rcw = DVector::repeat(m, sigma * mu) - it.w.component_mul(&it.zw) - aff.dw.component_mul(&aff.dzw);
        let mut dir = fac.solve(&it, &res, &rcu, &rcw);
        let (mut ap, mut ad) = safeguarded_steps(&it, &dir, gamma);
        if ap.min(ad) < 0.1 || complementarity(&it, &dir, ap, ad) >= mu {
            let sigma_f = sigma.max(0.2);
            let rcu = DVector::repeat(n, sigma_f * mu) - it.u.component_mul(&it.zu);
            let rcw = DVector::repeat(m, sigma_f * mu) - it.w.component_mul(&it.zw);
            let alt = fac.solve(&it, &res, &rcu, &rcw);
            let (bp, bd) = safeguarded_steps(&it, &alt, gamma);
            if complementarity(&it, &alt, bp, bd) < complementarity(&it, &dir, ap, ad) {
                (dir, ap, ad) = (alt, bp, bd);
            }
        }
        if !(ap > 0.0 && ad > 0.0) {
            break;
        }
        it.u += &dir.du * ap;
        it.w += &dir.dw * ap;
        it.y += &dir.dy * ad;
        it.zu += &dir.dzu * ad;
        it.zw += &dir.dzw * ad;
    }
    match best {
        Some((merit, _, _, u, y, iter)) if merit < opts.accept => Ok(IpmSolution {
            u,
            y,
            iterations: iter,
        }),
        Some((_, gap, infeasibility, _, _, iter)) => Err(Error::NotConverged {
            iterations: iter,
            gap,
            infeasibility,
        }),
        None => Err(Error::Numerical("interior-point run produced no iterate".into())),
    }
}
