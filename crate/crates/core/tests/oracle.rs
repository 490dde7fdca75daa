use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wpt_core::channel::GainMatrix;
use wpt_core::solver::{cutting_plane_oracle, solve_maxmin, DEFAULT_TOL};

/// Brute-force vertex enumeration of `max m s.t. F p >= m, sum p = 1, p >= 0`.
/// Every vertex makes `c` of the `r + c` inequalities tight.
fn vertex_oracle(f: &DMatrix<f64>) -> f64 {
    let (r, c) = f.shape();
    let total = r + c;
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << total) {
        if mask.count_ones() as usize != c {
            continue;
        }
        // Unknowns (p, m); equations: chosen tight constraints plus sum p = 1.
        let mut a = DMatrix::zeros(c + 1, c + 1);
        let mut b = DVector::zeros(c + 1);
        let mut k = 0;
        for i in 0..total {
            if mask & (1 << i) == 0 {
                continue;
            }
            if i < r {
                for j in 0..c {
                    a[(k, j)] = f[(i, j)];
                }
                a[(k, c)] = -1.0;
            } else {
                a[(k, i - r)] = 1.0;
            }
            k += 1;
        }
        for j in 0..c {
            a[(c, j)] = 1.0;
        }
        b[c] = 1.0;
        let Some(x) = a.lu().solve(&b) else { continue };
        let p = x.rows(0, c);
        if p.iter().any(|v| *v < -1e-12) {
            continue;
        }
        let m = (f * p).min();
        if m >= x[c] - 1e-10 {
            best = best.max(x[c]);
        }
    }
    best
}

#[test]
fn five_by_four_example() {
    let f = DMatrix::from_row_slice(
        5,
        4,
        &[
            0.9, 0.1, 0.3, 0.2, //
            0.2, 0.8, 0.1, 0.3, //
            0.1, 0.3, 0.7, 0.2, //
            0.3, 0.2, 0.2, 0.6, //
            0.4, 0.4, 0.4, 0.4,
        ],
    );
    let expected = vertex_oracle(&f);
    let g = GainMatrix::from_matrix(f).unwrap();
    let ipm = solve_maxmin(&g, DEFAULT_TOL).unwrap().objective_m;
    let simplex = cutting_plane_oracle(&g, 1e-12).unwrap();
    assert!((ipm - expected).abs() <= 1e-9 * expected, "{ipm} vs {expected}");
    assert!((simplex - expected).abs() <= 1e-9 * expected, "{simplex} vs {expected}");
}

#[test]
fn random_instances_agree_with_simplex_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let start = Instant::now();
    for _ in 0..20 {
        let (r, c) = (rng.random_range(1..=50), rng.random_range(1..=50));
        let f = DMatrix::from_fn(r, c, |_, _| rng.random_range(0.01..1.0));
        let g = GainMatrix::from_matrix(f).unwrap();
        let ipm = solve_maxmin(&g, DEFAULT_TOL).unwrap().objective_m;
        let oracle = cutting_plane_oracle(&g, 1e-12).unwrap();
        assert!((ipm - oracle).abs() <= 1e-8 * oracle, "{r}x{c}: {ipm} vs {oracle}");
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "20 oracle comparisons took {elapsed:.1} s");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn small_instances_match_vertex_enumeration(
        f in (1usize..=5, 1usize..=4).prop_flat_map(|(r, c)| {
            prop::collection::vec(0.01f64..1.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
        })
    ) {
        let expected = vertex_oracle(&f);
        let g = GainMatrix::from_matrix(f).unwrap();
        let ipm = solve_maxmin(&g, DEFAULT_TOL).unwrap().objective_m;
        let simplex = cutting_plane_oracle(&g, 1e-12).unwrap();
        prop_assert!((ipm - expected).abs() <= 1e-8 * expected, "ipm {} vs {}", ipm, expected);
        prop_assert!((simplex - expected).abs() <= 1e-8 * expected, "simplex {} vs {}", simplex, expected);
    }
}
