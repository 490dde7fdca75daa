use wpt_core::certificate::*;
use wpt_core::experiments::{solve_instance, Instance};
use wpt_core::geometry::{Dimensionality, Environment};
use wpt_core::schemes::scheme_uniform;
use wpt_core::solver::SolveOptions;

fn solved(env: Environment, dim: Dimensionality, lod: usize) -> wpt_core::experiments::SolvedInstance {
    solve_instance(Instance::new(env.room(), dim, lod).unwrap(), &SolveOptions::default()).unwrap()
}

#[test]
fn reference_room_optimum_is_certified() {
    let s = solved(Environment::Ratio1To1, Dimensionality::TwoD, 81);
    let c = &s.certificate;
    assert!(c.passed, "{c:?}");
    assert!(c.max_fbar_excess <= 1e-6);
    assert!(c.support_deviation <= 1e-6);
    assert!(c.symmetry_residual <= 1e-6);
    assert!(c.dual_bound >= c.objective_m);
    let st = check_structure(&s.solution, &s.instance.tx_grid).unwrap();
    assert_eq!(st.nonzero_count, 1);
    assert_eq!(st.grid_cells, 6561);
    assert!((st.support_fraction_percent - 100.0 / 6561.0).abs() < 1e-12);
}

#[test]
fn uniform_allocation_is_not_optimal() {
    let s = solved(Environment::Ratio1To3, Dimensionality::TwoD, 41);
    let uniform = scheme_uniform(&s.instance.tx_grid).unwrap();

    // Equal weight on the worst receivers of the uniform allocation.
    let recv = s.instance.gains.received(uniform.weights()).unwrap();
    let m = recv.min();
    let duals: Vec<f64> = recv
        .iter()
        .map(|r| if *r <= m * (1.0 + WORST_ROW_TOL) { 1.0 } else { 0.0 })
        .collect();
    let naive = certify(&uniform, &duals, &s.instance.gains, TOL_CERT, TOL_SYM).unwrap();
    assert!(!naive.passed);
    assert!(naive.max_fbar_excess > 1e-6);

    // The best duals for it still expose the gap.
    let best = verify_allocation(&uniform, &s.instance.gains, TOL_CERT).unwrap();
    assert!(!best.passed);
    assert!(best.max_fbar_excess > 0.1, "{best:?}");
    assert!(best.dual_bound >= s.solution.objective_m * (1.0 - 1e-9));
}

#[test]
fn allocation_without_duals_certifies_when_optimal() {
    let s = solved(Environment::Ratio1To4, Dimensionality::TwoD, 21);
    let c = verify_allocation(&s.solution.allocation, &s.instance.gains, TOL_CERT).unwrap();
    assert!(c.passed, "{c:?}");
}

#[test]
fn structure_of_characteristic_rooms() {
    let s = solved(Environment::Ratio1To3, Dimensionality::TwoD, 81);
    let st = check_structure(&s.solution, &s.instance.tx_grid).unwrap();
    assert_eq!(st.nonzero_count, 12);
    assert!((st.support_fraction_percent - 1200.0 / 6561.0).abs() < 1e-12);
    assert!(st.symmetry_residual <= 1e-6);

    let s = solved(Environment::Ratio1To5, Dimensionality::OneD, 81);
    assert!(s.certificate.passed);
    assert_eq!(check_structure(&s.solution, &s.instance.tx_grid).unwrap().nonzero_count, 4);
}

#[test]
fn mismatched_duals_are_rejected() {
    let s = solved(Environment::Ratio1To1, Dimensionality::TwoD, 5);
    assert!(weighted_average_gain(&[1.0], &s.instance.gains).is_err());
    assert!(weighted_average_gain(&vec![0.0; 25], &s.instance.gains).is_err());
    assert!(weighted_average_gain(&vec![-1.0; 25], &s.instance.gains).is_err());
}
