//! Cutting-plane verification oracle.
//!
//! Deliberately unrelated to the interior-point path: receivers enter one at
//! a time (worst first), and each master problem is solved exactly by a
//! dense tableau simplex. The master is kept in its dual form
//!
//! ```text
//!   max 1'y   s.t.   sum_{r in R} y_r F[r, t] <= 1  (every t),   y >= 0
//! ```
//!
//! whose value is `1 / m_R`. Adding a receiver adds a column, so the current
//! basis stays primal feasible and the simplex warm-starts. The transmit
//! allocation is read off the slack reduced costs.

use nalgebra::DVector;

use crate::channel::GainMatrix;
use crate::error::{invalid, Error, Result};

const PIVOT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
pub struct OracleOptions {
    pub max_cuts: usize,
    pub max_pivots: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            max_cuts: 20_000,
            max_pivots: 1_000_000,
        }
    }
}

/// Column-stored simplex tableau; columns `0..n` are the slacks.
struct Tableau {
    cols: Vec<Vec<f64>>,
    reduced: Vec<f64>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
    value: f64,
}

impl Tableau {
    fn new(n: usize) -> Self {
        let cols = (0..n)
            .map(|t| {
                let mut c = vec![0.0; n];
                c[t] = 1.0;
                c
            })
            .collect();
        Self {
            cols,
            reduced: vec![0.0; n],
            rhs: vec![1.0; n],
            basis: (0..n).collect(),
            value: 0.0,
        }
    }

    fn n(&self) -> usize {
        self.rhs.len()
    }

    /// Appends the variable for one receiver row (objective coefficient 1).
    fn add_column(&mut self, row: &[f64]) {
        let n = self.n();
        let mut col = vec![0.0; n];
        let mut red = -1.0;
        for (t, &a) in row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let binv = &self.cols[t];
            for (c, b) in col.iter_mut().zip(binv) {
                *c += a * b;
            }
            red += a * self.reduced[t];
        }
        self.cols.push(col);
        self.reduced.push(red);
    }

    fn pivot(&mut self, row: usize, enter: usize) {
        let a = self.cols[enter].clone();
        let piv = a[row];
        let red_e = self.reduced[enter];
        for (col, red) in self.cols.iter_mut().zip(self.reduced.iter_mut()) {
            let f = col[row] / piv;
            if f == 0.0 {
                continue;
            }
            for (l, (c, al)) in col.iter_mut().zip(&a).enumerate() {
                if l == row {
                    *c = f;
                } else {
                    *c -= al * f;
                }
            }
            *red -= red_e * f;
        }
        let f = self.rhs[row] / piv;
        for (l, (b, al)) in self.rhs.iter_mut().zip(&a).enumerate() {
            if l == row {
                *b = f;
            } else {
                *b -= al * f;
            }
        }
        self.value -= red_e * f;
        self.basis[row] = enter;
    }

    /// Dantzig pricing, falling back to Bland's rule after a run of
    /// degenerate pivots.
    fn optimize(&mut self, pivots_left: &mut usize) -> Result<()> {
        let mut degenerate_run = 0usize;
        loop {
            let bland = degenerate_run > 50;
            let mut enter = None;
            let mut best = -PIVOT_EPS;
            for (j, &r) in self.reduced.iter().enumerate() {
                if r < best {
                    enter = Some(j);
                    if bland {
                        break;
                    }
                    best = r;
                }
            }
            let Some(e) = enter else { return Ok(()) };
            let col = &self.cols[e];
            let mut leave: Option<(usize, f64)> = None;
            for (i, &a) in col.iter().enumerate() {
                if a > PIVOT_EPS {
                    let ratio = self.rhs[i] / a;
                    let better = match leave {
                        None => true,
                        Some((li, lr)) => {
                            ratio < lr || (ratio == lr && self.basis[i] < self.basis[li])
                        }
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                }
            }
            let Some((row, ratio)) = leave else {
                return Err(Error::Numerical("cutting-plane master is unbounded".into()));
            };
            if *pivots_left == 0 {
                return Err(Error::NotConverged {
                    iterations: 0,
                    gap: f64::NAN,
                    infeasibility: f64::NAN,
                });
            }
            *pivots_left -= 1;
            degenerate_run = if ratio == 0.0 { degenerate_run + 1 } else { 0 };
            self.pivot(row, e);
        }
    }

    /// Transmit weights from the slack reduced costs.
    fn allocation(&self) -> DVector<f64> {
        let n = self.n();
        let u = DVector::from_fn(n, |t, _| self.reduced[t].max(0.0));
        let s = u.sum();
        u / s
    }
}

pub fn cutting_plane_oracle(gains: &GainMatrix, tol: f64) -> Result<f64> {
    cutting_plane_oracle_with(gains, tol, &OracleOptions::default())
}

pub fn cutting_plane_oracle_with(gains: &GainMatrix, tol: f64, opts: &OracleOptions) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(invalid("oracle tolerance must be positive"));
    }
    let g = gains.entries();
    if g.iter().any(|v| !(*v > 0.0)) {
        return Err(invalid("cutting-plane oracle needs strictly positive gains"));
    }
    let (m, n) = g.shape();
    let mut tab = Tableau::new(n);
    let mut in_master = vec![false; m];
    let mut pivots_left = opts.max_pivots;

    // first cut: worst receiver under uniform power
    let mut p = DVector::repeat(n, 1.0 / n as f64);
    let mut lower = 0.0;
    for _ in 0..opts.max_cuts {
        let recv = g * &p;
        let (worst, low) = recv
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, &v)| if v < bv { (i, v) } else { (bi, bv) });
        lower = low;
        if tab.value > 0.0 {
            let upper = 1.0 / tab.value;
            if upper - low <= tol * upper {
                return Ok(low);
            }
        }
        if in_master[worst] {
            return Err(Error::Numerical(format!(
                "cutting plane stalled: receiver {worst} already in the master"
            )));
        }
        in_master[worst] = true;
        let row: Vec<f64> = g.row(worst).iter().copied().collect();
        tab.add_column(&row);
        tab.optimize(&mut pivots_left)?;
        p = tab.allocation();
    }
    Err(Error::NotConverged {
        iterations: opts.max_cuts,
        gap: if tab.value > 0.0 { 1.0 / tab.value - lower } else { f64::NAN },
        infeasibility: 0.0,
    })
}
