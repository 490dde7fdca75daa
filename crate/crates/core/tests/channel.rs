use std::f64::consts::PI;

use approx::assert_relative_eq;
use proptest::prelude::*;
use wpt_core::channel::*;
use wpt_core::geometry::*;

fn instance(room: RoomGeometry, lod: usize) -> (LatticeGrid, LatticeGrid, GainMatrix) {
    let tx = build_tx_grid(&ArrayLayout::full_ceiling(&room, Dimensionality::TwoD, lod), &room).unwrap();
    let rx = critical_plane_grid(&room, lod).unwrap();
    let g = gain_matrix(&tx, &rx).unwrap();
    (tx, rx, g)
}

fn direct_gain(tx: &PlanePoint, rx: &Point3) -> f64 {
    let d2 = (tx.x - rx.x).powi(2) + rx.y.powi(2) + (tx.z - rx.z).powi(2);
    1.0 / d2
}

fn textbook_sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

#[test]
fn reference_room_gain_extremes() {
    let (tx, _, g) = instance(Environment::Ratio1To1.room(), 81);
    // Directly below a transmitter: D = 2. Corner to opposite corner: D^2 = 2^2 + 2^2 + 2^2.
    assert_relative_eq!(g.entries().max(), 0.25, max_relative = 1e-15);
    assert_relative_eq!(g.entries().min(), 1.0 / 12.0, max_relative = 1e-12);
    let centre = tx.nearest(0.0, 0.0).unwrap();
    assert_relative_eq!(g.entries().column(centre).min(), 1.0 / 6.0, max_relative = 1e-12);
}

#[test]
fn gain_matrix_matches_direct_distances() {
    let (tx, rx, g) = instance(Environment::Ratio1To3.room(), 9);
    for r in 0..rx.len() {
        for t in 0..tx.len() {
            let expected = direct_gain(&tx.positions()[t], &rx.point3(r));
            assert_relative_eq!(g.get(r, t), expected, max_relative = 1e-14);
        }
    }
}

#[test]
fn calibration_reproduces_reference_power() {
    // 10 W through the free-space calibration, worst receiver at D^2 = 6.
    let p = PhysicalParams::reference();
    let lambda: f64 = 0.0125;
    let watts = 10.0 * (lambda / (4.0 * PI)).powi(2) / 6.0;
    assert_relative_eq!(p.total_tx_power * p.gain_calibration / 6.0, watts, max_relative = 1e-15);
    assert!((watts - 1.649e-6).abs() / 1.649e-6 < 1e-3);
}

#[test]
fn correlation_is_unit_diagonal_sinc() {
    let room = RoomGeometry::new(0.05, 2.0, 0.05).unwrap();
    let tx = build_tx_grid(&ArrayLayout::full_ceiling(&room, Dimensionality::TwoD, 6), &room).unwrap();
    let lambda = 0.0125;
    let r = correlation_matrix(&tx, lambda).unwrap();
    let e = r.entries();
    let pts = tx.positions();
    for i in 0..tx.len() {
        assert_eq!(e[(i, i)], 1.0);
        for j in 0..tx.len() {
            assert_eq!(e[(i, j)], e[(j, i)]);
            let d = ((pts[i].x - pts[j].x).powi(2) + (pts[i].z - pts[j].z).powi(2)).sqrt();
            assert_relative_eq!(e[(i, j)], textbook_sinc(2.0 * d / lambda), epsilon = 1e-14);
        }
    }
    // Half-wavelength neighbours are uncorrelated.
    assert!(sinc(1.0).abs() < 1e-15);
    assert_eq!(sinc(0.0), 1.0);
}

#[test]
fn clipped_factor_reproduces_correlation() {
    let room = RoomGeometry::new(0.03, 2.0, 0.03).unwrap();
    let tx = build_tx_grid(&ArrayLayout::full_ceiling(&room, Dimensionality::TwoD, 9), &room).unwrap();
    let r = correlation_matrix(&tx, 0.0125).unwrap();
    let l = r.psd_factor(EIGEN_CLIP).unwrap();
    assert!(l.ncols() < r.dim(), "closely spaced grid should be rank deficient");
    let diff = (&l * l.transpose() - r.entries()).abs().max();
    assert!(diff < 1e-8, "reconstruction error {diff}");
}

#[test]
fn infinite_k_factor_is_pure_los() {
    let (_, _, g) = instance(Environment::Ratio1To3.room(), 5);
    let g = {
        let room = Environment::Ratio1To3.room();
        let tx = std::sync::Arc::new(
            build_tx_grid(&ArrayLayout::full_ceiling(&room, Dimensionality::TwoD, 5), &room).unwrap(),
        );
        let rx = std::sync::Arc::new(critical_plane_grid(&room, 5).unwrap());
        assert_eq!(gain_matrix_shared(tx, rx).unwrap().entries(), g.entries());
        gain_matrix_shared(
            std::sync::Arc::new(build_tx_grid(&ArrayLayout::full_ceiling(&room, Dimensionality::TwoD, 5), &room).unwrap()),
            std::sync::Arc::new(critical_plane_grid(&room, 5).unwrap()),
        )
        .unwrap()
    };
    let mut p = PhysicalParams::reference();
    p.rician_k = f64::INFINITY;
    let faded = RicianSampler::new(&g, &p).unwrap().sample(3, 1, true).faded_gains;
    assert_eq!(faded.entries(), g.entries());
}

#[test]
fn realizations_are_reproducible_per_stream() {
    let room = Environment::Ratio1To1.room();
    let tx = std::sync::Arc::new(
        build_tx_grid(&ArrayLayout::full_ceiling(&room, Dimensionality::TwoD, 4), &room).unwrap(),
    );
    let rx = std::sync::Arc::new(critical_plane_grid(&room, 4).unwrap());
    let g = gain_matrix_shared(tx, rx).unwrap();
    let s = RicianSampler::new(&g, &PhysicalParams::reference()).unwrap();
    let a = s.sample(11, 5, false).faded_gains;
    let b = s.sample(11, 5, false).faded_gains;
    let c = s.sample(11, 6, false).faded_gains;
    assert_eq!(a.entries(), b.entries());
    assert_ne!(a.entries(), c.entries());
}

/// Closed form: `E|g~|^2 / c = K/(K+1) f + 1/(K+1) A / D~^2`; the cross term
/// has zero mean.
#[test]
fn rician_mean_gain_matches_closed_form() {
    let room = Environment::Ratio1To1.room();
    let tx = std::sync::Arc::new(
        build_tx_grid(&ArrayLayout::full_ceiling(&room, Dimensionality::TwoD, 3), &room).unwrap(),
    );
    let rx = std::sync::Arc::new(critical_plane_grid(&room, 3).unwrap());
    let g = gain_matrix_shared(tx.clone(), rx.clone()).unwrap();
    let params = PhysicalParams::reference();
    let sampler = RicianSampler::new(&g, &params).unwrap();

    let mut dsum = 0.0;
    for r in 0..rx.len() {
        let p = rx.point3(r);
        for t in tx.positions() {
            dsum += ((t.x - p.x).powi(2) + p.y.powi(2) + (t.z - p.z).powi(2)).sqrt();
        }
    }
    let d_avg = dsum / (rx.len() * tx.len()) as f64;
    assert_relative_eq!(sampler.avg_distance(), d_avg, max_relative = 1e-12);

    let k = params.rician_k;
    let nlos = params.element_area / (d_avg * d_avg);
    let draws = 10_000;
    // Centre antenna to centre receiver, and two off-diagonal pairs.
    let pairs = [(4, 4), (0, 8), (2, 5)];
    for shared in [true, false] {
        let mut sum = [0.0; 3];
        let mut sum_sq = [0.0; 3];
        for i in 0..draws {
            let f = sampler.sample(2024, i as u64, shared).faded_gains;
            for (k, &(r, t)) in pairs.iter().enumerate() {
                let v = f.get(r, t);
                sum[k] += v;
                sum_sq[k] += v * v;
            }
        }
        for (j, &(r, t)) in pairs.iter().enumerate() {
            let n = draws as f64;
            let mean = sum[j] / n;
            let var = (sum_sq[j] - n * mean * mean) / (n - 1.0);
            let se = (var / n).sqrt();
            let expected = k / (k + 1.0) * g.get(r, t) + nlos / (k + 1.0);
            assert!(
                (mean - expected).abs() <= 3.0 * se,
                "pair ({r},{t}) shared={shared}: mean {mean}, expected {expected}, se {se}"
            );
        }
    }
}

proptest! {
    #[test]
    fn sinc_identities(x in -50.0f64..50.0) {
        prop_assert!((sinc(x) - sinc(-x)).abs() <= 1e-15);
        prop_assert!((sinc(x) - textbook_sinc(x)).abs() <= 1e-12);
        prop_assert!(sinc(x).abs() <= 1.0);
    }

    #[test]
    fn gains_decrease_with_depth(x in -3.0f64..3.0, z in -3.0f64..3.0, y1 in 0.1f64..5.0, dy in 0.01f64..5.0) {
        let t = PlanePoint { x: 0.0, z: 0.0 };
        let near = los_gain(t, Point3 { x, y: y1, z }).unwrap();
        let far = los_gain(t, Point3 { x, y: y1 + dy, z }).unwrap();
        prop_assert!(far < near);
    }

    #[test]
    fn mirrored_pairs_share_gains(lx in 1.0f64..10.0, lz in 1.0f64..10.0, lod in 2usize..8) {
        let room = RoomGeometry::new(lx, 2.0, lz).unwrap();
        let (tx, rx, g) = instance(room, lod);
        let (mtx, mrx) = (tx.mirror_x().unwrap(), rx.mirror_x().unwrap());
        let (mtz, mrz) = (tx.mirror_z().unwrap(), rx.mirror_z().unwrap());
        for r in 0..rx.len() {
            for t in 0..tx.len() {
                prop_assert!((g.get(r, t) - g.get(mrx[r], mtx[t])).abs() <= 1e-15 * g.get(r, t));
                prop_assert!((g.get(r, t) - g.get(mrz[r], mtz[t])).abs() <= 1e-15 * g.get(r, t));
            }
        }
    }
}
