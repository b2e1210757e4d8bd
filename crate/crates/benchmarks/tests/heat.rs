//! Heat benchmark against its closed-form optimum.

use peer_bench::{heat_run, HeatProblem};
use peer_core::integrator::sample_controls;
use peer_core::optimize::{l2_gradient, max_norm, OptimizerOptions, ReducedObjective};
use peer_core::{build_triplet, Grid, SolverOptions};

#[test]
fn exact_optimum_is_nearly_stationary() {
    let problem = HeatProblem::new(40).unwrap();
    for name in ["AP4o33vgi", "AP4o33vsi"] {
        let t = build_triplet(name).unwrap();
        let mut norms = Vec::new();
        for steps in [16, 32, 64] {
            let grid = Grid::uniform(1.0, steps).unwrap();
            let u = sample_controls(&grid, &t, 1, |x| vec![problem.exact.u_star(x)]);
            let obj = ReducedObjective {
                problem: &problem,
                triplet: &t,
                grid: &grid,
                solver: SolverOptions::default(),
            };
            let g = obj.evaluate(&u).unwrap();
            norms.push(max_norm(&l2_gradient(&t, &grid, &g.gradient)));
        }
        for w in norms.windows(2) {
            assert!(w[1] < w[0] / 4.0, "{name}: {norms:?}");
        }
    }
}

#[test]
fn optimized_controls_approach_exact_optimum() {
    let problem = HeatProblem::new(20).unwrap();
    let t = build_triplet("AP4o33vgi").unwrap();
    let opts = OptimizerOptions::default();
    let mut errors = Vec::new();
    for steps in [16, 32, 64] {
        let grid = Grid::uniform(1.0, steps).unwrap();
        let run = heat_run(&problem, &t, &grid, &opts).unwrap();
        assert!(run.report.converged, "{steps} steps");
        errors.push(run.errors);
    }
    for w in errors.windows(2) {
        assert!((w[0].control / w[1].control).log2() > 2.5, "{errors:?}");
        assert!((w[0].state / w[1].state).log2() > 2.5, "{errors:?}");
    }
}
