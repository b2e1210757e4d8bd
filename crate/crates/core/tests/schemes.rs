//! Forward and adjoint schemes against closed-form solutions and each other.

use nalgebra::DMatrix;
use peer_core::integrator::{constant_controls, forward_sweep, sample_controls, solve_kkt};
use peer_core::optimize::{dot, ReducedObjective};
use peer_core::problem::DenseProblem;
use peer_core::{build_triplet, Grid, SolverOptions, KNOWN_TRIPLETS};

/// `y' = Ly` with a fixed 2×2 matrix and the linear cost `wᵀy(T)`.
fn linear(l: [[f64; 2]; 2], y0: [f64; 2], w: [f64; 2]) -> DenseProblem {
    let lm = DMatrix::from_row_slice(2, 2, &[l[0][0], l[0][1], l[1][0], l[1][1]]);
    let jy = lm.clone();
    DenseProblem::new(
        y0.to_vec(),
        1,
        1.0,
        move |_, y, _, out| {
            out[0] = l[0][0] * y[0] + l[0][1] * y[1];
            out[1] = l[1][0] * y[0] + l[1][1] * y[1];
        },
        move |_, _, _| jy.clone(),
        |_, _, _| DMatrix::zeros(2, 1),
        move |y| w[0] * y[0] + w[1] * y[1],
        move |_, g| g.copy_from_slice(&w),
    )
}

fn graded(steps: usize, p: f64) -> Grid {
    Grid::new((0..=steps).map(|k| (k as f64 / steps as f64).powf(p)).collect()).unwrap()
}

/// `exp(Lt)x` for the rotation-damping matrix used below, in closed form.
fn damped_rotation(t: f64, x: [f64; 2], a: f64, b: f64) -> [f64; 2] {
    let e = (a * t).exp();
    let (s, c) = (b * t).sin_cos();
    [e * (c * x[0] - s * x[1]), e * (s * x[0] + c * x[1])]
}

#[test]
fn forward_error_decays_with_third_order() {
    let (a, b) = (-1.0, 3.0);
    let problem = linear([[a, -b], [b, a]], [1.0, 0.5], [1.0, 0.0]);
    let exact = damped_rotation(1.0, [1.0, 0.5], a, b);
    for name in KNOWN_TRIPLETS {
        let t = build_triplet(name).unwrap();
        let mut errors = Vec::new();
        for steps in [20, 40, 80] {
            let grid = Grid::uniform(1.0, steps).unwrap();
            let u = constant_controls(&grid, t.s, &[0.0]);
            let sol = forward_sweep(&problem, &t, &grid, &u, &SolverOptions::default()).unwrap();
            errors.push((sol.y_t[0] - exact[0]).abs().max((sol.y_t[1] - exact[1]).abs()));
        }
        for w in errors.windows(2) {
            let order = (w[0] / w[1]).log2();
            assert!(order > 2.7, "{name}: {errors:?}");
        }
    }
}

#[test]
fn adjoint_start_value_converges_to_exact() {
    // p(0) = exp(Lᵀ)w for the linear cost
    let (a, b) = (-0.5, 2.0);
    let problem = linear([[a, -b], [b, a]], [1.0, 0.0], [0.3, -0.7]);
    let exact = damped_rotation(1.0, [0.3, -0.7], a, -b);
    let t = build_triplet("AP4o33vgi").unwrap();
    let mut errors = Vec::new();
    for steps in [16, 32, 64] {
        let grid = graded(steps, 1.3);
        let u = constant_controls(&grid, t.s, &[0.0]);
        let sol = solve_kkt(&problem, &t, &grid, &u, &SolverOptions::default()).unwrap();
        errors.push((sol.p0[0] - exact[0]).abs().max((sol.p0[1] - exact[1]).abs()));
    }
    assert!(errors[2] < 1e-5, "{errors:?}");
    assert!((errors[1] / errors[2]).log2() > 2.7, "{errors:?}");
}

#[test]
fn adjoint_is_forward_on_flipped_grid_for_symmetric_triplet() {
    // For y' = Ly the adjoint is p' = −Lᵀp, which runs forward in reversed
    // time as z' = Lᵀz. A flip-symmetric triplet gives the same discrete values.
    let l = [[-1.0, 2.0], [-0.5, -3.0]];
    let lt = [[l[0][0], l[1][0]], [l[0][1], l[1][1]]];
    let w = [0.4, -1.1];
    let t = build_triplet("AP4o33vgi").unwrap();
    assert!(t.flip_symmetric);
    let grid = graded(24, 1.4);
    let flipped = grid.flipped();
    let opts = SolverOptions::default();

    let primal = linear(l, [1.0, 2.0], w);
    let u = constant_controls(&grid, t.s, &[0.0]);
    let sol = solve_kkt(&primal, &t, &grid, &u, &opts).unwrap();

    let reversed = linear(lt, w, [1.0, 0.0]);
    let uf = constant_controls(&flipped, t.s, &[0.0]);
    let fwd = forward_sweep(&reversed, &t, &flipped, &uf, &opts).unwrap();

    let last = grid.last();
    let mut worst = 0.0f64;
    for n in 0..=last {
        for i in 0..t.s {
            let p = sol.p[n].stage(i);
            let z = fwd.y[last - n].stage(t.s - 1 - i);
            for k in 0..2 {
                worst = worst.max((p[k] - z[k]).abs());
            }
        }
    }
    for k in 0..2 {
        worst = worst.max((sol.p0[k] - fwd.y_t[k]).abs());
    }
    assert!(worst < 1e-12, "{worst:e}");
}

#[test]
fn gradient_matches_central_differences_on_nonlinear_problem() {
    // y₁' = −y₁³ + u, y₂' = y₁y₂ − u², C = ½|y(T) − (0.2, 1)|²
    let problem = DenseProblem::new(
        vec![1.0, 0.5],
        1,
        1.0,
        |_, y, u, out| {
            out[0] = -y[0].powi(3) + u[0];
            out[1] = y[0] * y[1] - u[0] * u[0];
        },
        |_, y, _| DMatrix::from_row_slice(2, 2, &[-3.0 * y[0] * y[0], 0.0, y[1], y[0]]),
        |_, _, u| DMatrix::from_row_slice(2, 1, &[1.0, -2.0 * u[0]]),
        |y| 0.5 * ((y[0] - 0.2).powi(2) + (y[1] - 1.0).powi(2)),
        |y, g| {
            g[0] = y[0] - 0.2;
            g[1] = y[1] - 1.0;
        },
    );
    for name in KNOWN_TRIPLETS {
        let t = build_triplet(name).unwrap();
        let grid = graded(18, 1.2);
        let u = sample_controls(&grid, &t, 1, |x| vec![0.5 * (4.0 * x).sin()]);
        let dir = sample_controls(&grid, &t, 1, |x| vec![1.0 + x * x]);
        let obj = ReducedObjective {
            problem: &problem,
            triplet: &t,
            grid: &grid,
            solver: SolverOptions::default(),
        };
        let g = obj.evaluate(&u).unwrap();
        let analytic = dot(&g.gradient, &dir);
        let fd = obj.directional_difference(&u, &dir, 1e-4).unwrap();
        assert!((fd - analytic).abs() <= 1e-7 * analytic.abs().max(1.0), "{name}: {analytic} vs {fd}");
    }
}
