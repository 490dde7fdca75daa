use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use wpt_core::certificate::{verify_optimality, TOL_CERT};
use wpt_core::channel::GainMatrix;
use wpt_core::experiments::Instance;
use wpt_core::geometry::{Dimensionality, Environment};
use wpt_core::solver::*;

fn positive_matrix(max_dim: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.01f64..1.0, r * c).prop_map(move |v| DMatrix::from_vec(r, c, v))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solution_is_feasible_and_certified(f in positive_matrix(12)) {
        let g = GainMatrix::from_matrix(f).unwrap();
        let s = solve_maxmin(&g, DEFAULT_TOL).unwrap();
        let w = s.allocation.weights();
        prop_assert!(w.iter().all(|x| *x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!((g.min_received(w).unwrap() - s.objective_m).abs() <= 1e-14);
        // Weak duality: every allocation is bounded by the dual bound.
        prop_assert!(s.objective_m <= s.stats.dual_bound * (1.0 + 1e-12));
        let uniform = PowerAllocation::uniform(g.n_tx()).unwrap();
        prop_assert!(g.min_received(uniform.weights()).unwrap() <= s.objective_m * (1.0 + 1e-9));
        let cert = verify_optimality(&s, &g, TOL_CERT).unwrap();
        prop_assert!(cert.passed, "{cert:?}");
    }

    #[test]
    fn objective_scales_with_gains(f in positive_matrix(10), c in 0.01f64..100.0) {
        let g = GainMatrix::from_matrix(f).unwrap();
        let a = solve_maxmin(&g, DEFAULT_TOL).unwrap();
        let b = solve_maxmin(&g.scaled(c), DEFAULT_TOL).unwrap();
        prop_assert!((b.objective_m - c * a.objective_m).abs() <= 1e-8 * c * a.objective_m);
        prop_assert_eq!(a.allocation.support(), b.allocation.support());
    }

    #[test]
    fn objective_ignores_orderings(
        (f, rows, cols) in positive_matrix(10).prop_flat_map(|f| {
            let (r, c) = f.shape();
            (Just(f), Just((0..r).collect::<Vec<_>>()).prop_shuffle(), Just((0..c).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let permuted = DMatrix::from_fn(rows.len(), cols.len(), |i, j| f[(rows[i], cols[j])]);
        let a = solve_maxmin(&GainMatrix::from_matrix(f).unwrap(), DEFAULT_TOL).unwrap();
        let b = solve_maxmin(&GainMatrix::from_matrix(permuted).unwrap(), DEFAULT_TOL).unwrap();
        prop_assert!((a.objective_m - b.objective_m).abs() <= 1e-8 * a.objective_m);
    }

    #[test]
    fn threshold_extraction_conserves_mass(w in prop::collection::vec(0.0f64..1.0, 1..40).prop_filter("nonzero", |w| w.iter().sum::<f64>() > 0.0), t in 0.0f64..0.2) {
        let a = PowerAllocation::normalized(w).unwrap();
        prop_assume!(a.weights().iter().any(|x| *x >= t));
        let s = extract_support(&a, t).unwrap();
        prop_assert!((s.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(s.weights().iter().all(|x| *x == 0.0 || *x >= t));
        prop_assert!(s.support().iter().all(|i| a.weights()[*i] >= t));
    }
}

#[test]
fn reference_room_uses_one_centre_antenna() {
    let inst = Instance::new(Environment::Ratio1To1.room(), Dimensionality::TwoD, 81).unwrap();
    let s = solve_symmetric_reduced(&inst.gains, DEFAULT_TOL).unwrap();
    let centre = inst.tx_grid.nearest(0.0, 0.0).unwrap();
    let support: Vec<usize> = s
        .allocation
        .weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| **w >= SUPPORT_THRESHOLD)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(support, [centre]);
    assert!((s.allocation.weights()[centre] - 1.0).abs() <= 1e-6);
    assert_relative_eq!(s.objective_m, 1.0 / 6.0, max_relative = 1e-9);
    // The receiver-weighted average gain peaks at the centre and equals m there.
    let fbar = wpt_core::certificate::weighted_average_gain(&s.duals, &inst.gains).unwrap();
    let argmax = (0..fbar.len()).max_by(|&a, &b| fbar[a].total_cmp(&fbar[b])).unwrap();
    assert_eq!(argmax, centre);
    assert_relative_eq!(fbar[centre], s.objective_m, max_relative = 1e-6);
}

#[test]
fn reduced_and_full_paths_agree() {
    let inst = Instance::new(Environment::Ratio1To3.room(), Dimensionality::TwoD, 81).unwrap();
    let reduced = solve_symmetric_reduced(&inst.gains, DEFAULT_TOL).unwrap();
    let full = solve_maxmin(&inst.gains, DEFAULT_TOL).unwrap();
    assert_eq!(reduced.stats.method, SolveMethod::SymmetricReduced);
    assert_eq!(full.stats.method, SolveMethod::Full);
    assert!((reduced.objective_m - full.objective_m).abs() <= 1e-8 * full.objective_m);
    let count = |s: &MaxMinSolution| s.allocation.weights().iter().filter(|w| **w >= SUPPORT_THRESHOLD).count();
    assert_eq!(count(&reduced), 12);
    assert_eq!(count(&full), 12);
}

#[test]
fn rejects_bad_inputs() {
    let g = GainMatrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
    assert!(solve_maxmin(&g, 0.0).is_err());
    assert!(solve_maxmin(&g, 1.5).is_err());
    assert!(GainMatrix::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    assert!(PowerAllocation::new(vec![0.5, 0.4]).is_err());
    assert!(PowerAllocation::new(vec![1.5, -0.5]).is_err());
}

#[test]
fn dominated_columns_get_nothing() {
    // Column 1 is dominated; columns 0 and 2 cover each other's weak row.
    let g = GainMatrix::from_rows(&[vec![1.0, 0.1, 0.2], vec![0.2, 0.1, 1.0]]).unwrap();
    let s = solve_maxmin(&g, DEFAULT_TOL).unwrap();
    assert!(s.allocation.weights()[1] < 1e-8);
    assert_relative_eq!(s.allocation.weights()[0], 0.5, epsilon = 1e-8);
    assert_relative_eq!(s.objective_m, 0.6, max_relative = 1e-9);
}

// A faded instance whose restricted LPs drive the normal equations past the
// pivot floor; it used to stall just short of tolerance.
#[test]
fn ill_conditioned_faded_instance_converges() {
    use wpt_core::channel::{PhysicalParams, RicianSampler};
    let inst = Instance::new(Environment::Ratio1To5.room(), Dimensionality::TwoD, 41).unwrap();
    let sampler = RicianSampler::new(&inst.gains, &PhysicalParams::reference()).unwrap();
    let faded = sampler.sample(0, 65, true).faded_gains;
    let s = solve_maxmin(&faded, DEFAULT_TOL).unwrap();
    let cert = verify_optimality(&s, &faded, TOL_CERT).unwrap();
    assert!(cert.max_fbar_excess <= 1e-6 && cert.support_deviation <= 1e-6, "{cert:?}");
}
