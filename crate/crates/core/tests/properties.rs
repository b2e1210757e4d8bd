//! Randomized invariants of coefficients, estimators and grids.

use peer_core::mesh::{
    equidistribute, equidistribution_deviation, estimate_errors, snap_to_points, EquidistributionOptions,
    MeshDensity,
};
use peer_core::problem::grid_metrics;
use peer_core::verify::{verify_order_conditions, zero_stability_norm};
use peer_core::{build_triplet, Grid, PeerTriplet, StageBlock};
use proptest::prelude::*;

fn triplet(k: usize) -> PeerTriplet {
    build_triplet(["AP4o33vgi", "AP4o33vsi"][k]).unwrap()
}

fn grid_from(h: &[f64]) -> Grid {
    let total: f64 = h.iter().sum();
    let mut pts = vec![0.0];
    for x in h {
        pts.push(pts.last().unwrap() + x / total);
    }
    *pts.last_mut().unwrap() = 1.0;
    Grid::new(pts).unwrap()
}

fn sample(t: &PeerTriplet, g: &Grid, f: impl Fn(f64) -> f64) -> Vec<StageBlock> {
    (0..g.steps())
        .map(|n| {
            let mut b = StageBlock::zeros(t.s, 1);
            for i in 0..t.s {
                b.stage_mut(i)[0] = f(g.stage_time(n, t.c[i]));
            }
            b
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn order_conditions_hold_inside_sigma_range(k in 0usize..2, x in 0.0f64..1.0) {
        let t = triplet(k);
        let sigma = t.sigma_range.0 + x * (t.sigma_range.1 - t.sigma_range.0);
        let r = verify_order_conditions(&t, sigma).unwrap();
        prop_assert!(r.max() <= 1e-10, "{:?}", r);
    }

    #[test]
    fn zero_stability_norm_is_one_on_vgi_range(x in 0.0f64..1.0) {
        let t = triplet(0);
        let sigma = 0.57 + x * (2.10 - 0.57);
        let v = zero_stability_norm(&t, sigma).unwrap().value();
        prop_assert!((v - 1.0).abs() <= 1e-10, "{v}");
    }

    #[test]
    fn estimator_is_exact_on_cubics_and_blind_to_quadratics(
        k in 0usize..2,
        h in prop::collection::vec(0.5f64..1.5, 6..20),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        delta in 0.0f64..1.0,
    ) {
        let t = triplet(k);
        let g = grid_from(&h);
        let cubic = sample(&t, &g, |x| a * x * x * x + b * x * x - x);
        let quad = sample(&t, &g, |x| b * x * x + a * x + 1.0);
        let e = estimate_errors(&t, &g, &cubic, &cubic, delta).unwrap();
        for n in 0..g.steps() {
            let want = 6.0 * a * g.h(n).powi(3);
            prop_assert!((e.eps_y[n][0] - want).abs() <= 1e-9 * want.abs() + 1e-12 * (1.0 + a.abs() + b.abs()), "{} vs {want}", e.eps_y[n][0]);
        }
        let z = estimate_errors(&t, &g, &quad, &quad, delta).unwrap();
        let scale = 1e-10 * g.points().windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max).powi(3);
        let worst = z.eps_y.iter().chain(&z.eps_p).fold(0.0f64, |m, v| m.max(v[0].abs()));
        prop_assert!(worst <= scale.max(1e-12 * (1.0 + a.abs() + b.abs())), "{worst:e}");
    }

    #[test]
    fn equidistributed_cells_carry_equal_mass(
        values in prop::collection::vec(0.2f64..5.0, 4..12),
        steps in 8usize..40,
    ) {
        let k = values.len();
        let breaks: Vec<f64> = (0..=k).map(|j| j as f64 / k as f64).collect();
        let d = MeshDensity::from_values(breaks, values).unwrap();
        let opts = EquidistributionOptions {
            eta_max: f64::INFINITY,
            ..Default::default()
        };
        let r = equidistribute(&d, steps, &opts).unwrap();
        prop_assert!(r.smoothing_rounds == 0);
        let dev = equidistribution_deviation(&d, &r.grid);
        prop_assert!(dev <= 1e-12, "deviation {dev:e} after {} passes", r.passes);
    }

    #[test]
    fn snapping_keeps_order_and_hits_targets(
        h in prop::collection::vec(0.5f64..1.5, 10..30),
        targets in prop::collection::vec(0.05f64..0.95, 1..4),
    ) {
        let g = grid_from(&h);
        let mut ts = targets.clone();
        ts.sort_by(f64::total_cmp);
        ts.dedup_by(|a, b| (*a - *b).abs() < 0.1);
        let s = snap_to_points(&g, &ts).unwrap();
        prop_assert_eq!(s.steps(), g.steps());
        prop_assert!(s.points().windows(2).all(|w| w[1] > w[0]));
        for t in &ts {
            prop_assert!(s.points().contains(t));
        }
    }
}

#[test]
fn uniform_grid_is_perfectly_smooth() {
    let m = grid_metrics(&Grid::uniform(3.0, 12).unwrap());
    assert!(m.sigma.iter().all(|&s| (s - 1.0).abs() < 1e-14));
    assert!(m.max_abs_eta < 1e-13);
}
