//! Boundary control of the semi-discrete 1D heat equation with closed-form
//! optimal state, adjoint and control.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use peer_core::integrator::constant_controls;
use peer_core::linalg::tridiag::{Tridiagonal, TridiagonalLu};
use peer_core::mesh::{adapt_grid, AdaptOptions, Equidistribution};
use peer_core::optimize::{optimize, OptimizationReport, OptimizerOptions};
use peer_core::problem::{ControlBounds, ControlProblem, Linearization, ShiftedSolver};
use peer_core::{Grid, PeerError, PeerTriplet, Result, StageBlock, TrajectorySolution};

/// Eigenpairs of the heat matrix and the closed-form optimal solution.
#[derive(Debug, Clone)]
pub struct HeatExact {
    pub m: usize,
    pub gamma: f64,
    pub delta: f64,
    pub t_end: f64,
    /// `λ_k = −4m² sin²(ω_k/(2m))`, `ω_k = (k − ½)π`, for `k = 1..m`.
    pub lambda: Vec<f64>,
    /// Normalized eigenvectors `v^[k]`.
    pub v: Vec<Vec<f64>>,
    /// Coefficients `η_k(T)` of the optimal final state.
    pub eta_t: Vec<f64>,
    pub y_star_t: Vec<f64>,
    pub y_hat: Vec<f64>,
}

/// `φ₁(z) = (eᶻ − 1)/z` with `φ₁(0) = 1`.
pub fn phi1(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z.exp_m1() / z
    }
}

impl HeatExact {
    pub fn new(m: usize) -> Self {
        let mf = m as f64;
        let gamma = 2.0 * mf * mf;
        let delta = 1.0 / 75.0;
        let t_end = 1.0;
        let omega: Vec<f64> = (1..=m).map(|k| (k as f64 - 0.5) * std::f64::consts::PI).collect();
        let lambda: Vec<f64> = omega
            .iter()
            .map(|w| -4.0 * mf * mf * (w / (2.0 * mf)).sin().powi(2))
            .collect();
        let v: Vec<Vec<f64>> = omega
            .iter()
            .map(|&w| {
                let nu = 2.0 / (2.0 * mf + (2.0 * w).sin() / (w / mf).sin()).sqrt();
                (1..=m)
                    .map(|i| nu * (w * (2.0 * i as f64 - 1.0) / (2.0 * mf)).cos())
                    .collect()
            })
            .collect();
        let eta_t: Vec<f64> = (0..m)
            .map(|k| {
                let eta0: f64 = v[k].iter().sum();
                let coupling: f64 = (0..2)
                    .map(|l| v[l][m - 1] * phi1((lambda[k] + lambda[l]) * t_end))
                    .sum();
                (lambda[k] * t_end).exp() * eta0
                    - gamma * gamma * delta * t_end * v[k][m - 1] * coupling
            })
            .collect();
        let mut y_star_t = vec![0.0; m];
        for k in 0..m {
            for i in 0..m {
                y_star_t[i] += eta_t[k] * v[k][i];
            }
        }
        let y_hat: Vec<f64> = (0..m)
            .map(|i| y_star_t[i] - delta * (v[0][i] + v[1][i]))
            .collect();
        Self {
            m,
            gamma,
            delta,
            t_end,
            lambda,
            v,
            eta_t,
            y_star_t,
            y_hat,
        }
    }

    /// `p*(t) = δ(e^{λ₁(T−t)}v^[1] + e^{λ₂(T−t)}v^[2])`.
    pub fn p_star(&self, t: f64) -> Vec<f64> {
        let e1 = (self.lambda[0] * (self.t_end - t)).exp();
        let e2 = (self.lambda[1] * (self.t_end - t)).exp();
        (0..self.m)
            .map(|i| self.delta * (e1 * self.v[0][i] + e2 * self.v[1][i]))
            .collect()
    }

    /// `u*(t) = −γ p*_m(t)`.
    pub fn u_star(&self, t: f64) -> f64 {
        let e1 = (self.lambda[0] * (self.t_end - t)).exp();
        let e2 = (self.lambda[1] * (self.t_end - t)).exp();
        -self.gamma * self.delta * (e1 * self.v[0][self.m - 1] + e2 * self.v[1][self.m - 1])
    }

    /// `p*′(t)` from the closed form.
    pub fn p_star_derivative(&self, t: f64) -> Vec<f64> {
        let e1 = (self.lambda[0] * (self.t_end - t)).exp();
        let e2 = (self.lambda[1] * (self.t_end - t)).exp();
        (0..self.m)
            .map(|i| -self.delta * (self.lambda[0] * e1 * self.v[0][i] + self.lambda[1] * e2 * self.v[1][i]))
            .collect()
    }
}

/// The heat matrix `(1/Δx²) tridiag(1, (−1, −2, …, −2, −3), 1)`.
pub fn heat_matrix(m: usize) -> Tridiagonal {
    let s = (m * m) as f64;
    let mut diag = vec![-2.0 * s; m];
    diag[0] = -s;
    diag[m - 1] = -3.0 * s;
    let mut lower = vec![s; m];
    lower[0] = 0.0;
    let mut upper = vec![s; m];
    upper[m - 1] = 0.0;
    Tridiagonal::new(lower, diag, upper)
}

/// `y′ = Ay + γe_m u`, `y′_{m+1} = u²`, `C = ½(‖y(1) − ŷ‖² + y_{m+1}(1))`.
#[derive(Debug, Clone)]
pub struct HeatProblem {
    pub exact: Arc<HeatExact>,
    a: Arc<Tridiagonal>,
}

impl HeatProblem {
    pub fn new(m: usize) -> Result<Self> {
        if m < 4 {
            return Err(PeerError::InvalidArgument(format!("heat problem needs m ≥ 4, got {m}")));
        }
        Ok(Self {
            exact: Arc::new(HeatExact::new(m)),
            a: Arc::new(heat_matrix(m)),
        })
    }

    pub fn m(&self) -> usize {
        self.exact.m
    }

    pub fn matrix(&self) -> &Tridiagonal {
        &self.a
    }
}

struct HeatLinearization {
    a: Arc<Tridiagonal>,
    gamma: f64,
    u: f64,
}

struct HeatShifted {
    lu: TridiagonalLu,
    alpha: f64,
}

impl ShiftedSolver for HeatShifted {
    fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let m = b.len() - 1;
        self.lu.solve(&b[..m], &mut x[..m]);
        x[m] = b[m] / self.alpha;
        Ok(())
    }

    fn solve_transpose(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let m = b.len() - 1;
        self.lu.solve_transpose(&b[..m], &mut x[..m]);
        x[m] = b[m] / self.alpha;
        Ok(())
    }
}

impl Linearization for HeatLinearization {
    fn apply_y(&self, v: &[f64], out: &mut [f64]) {
        let m = v.len() - 1;
        self.a.matvec(&v[..m], &mut out[..m]);
        out[m] = 0.0;
    }

    fn apply_y_transpose(&self, v: &[f64], out: &mut [f64]) {
        let m = v.len() - 1;
        self.a.matvec_transpose(&v[..m], &mut out[..m]);
        out[m] = 0.0;
    }

    fn apply_u(&self, du: &[f64], out: &mut [f64]) {
        let m = out.len() - 1;
        out.iter_mut().for_each(|x| *x = 0.0);
        out[m - 1] = self.gamma * du[0];
        out[m] = 2.0 * self.u * du[0];
    }

    fn apply_u_transpose(&self, v: &[f64], out: &mut [f64]) {
        let m = v.len() - 1;
        out[0] = self.gamma * v[m - 1] + 2.0 * self.u * v[m];
    }

    fn shifted(&self, alpha: f64, gamma: f64) -> Result<Box<dyn ShiftedSolver>> {
        if alpha == 0.0 {
            return Err(PeerError::LinearSolver("zero shift".into()));
        }
        Ok(Box::new(HeatShifted {
            lu: self.a.factor_shifted(alpha, gamma)?,
            alpha,
        }))
    }
}

impl ControlProblem for HeatProblem {
    fn state_dim(&self) -> usize {
        self.m() + 1
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> f64 {
        self.exact.t_end
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut y = vec![1.0; self.m() + 1];
        y[self.m()] = 0.0;
        y
    }

    fn rhs(&self, _t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        let m = self.m();
        self.a.matvec(&y[..m], &mut out[..m]);
        out[m - 1] += self.exact.gamma * u[0];
        out[m] = u[0] * u[0];
    }

    fn linearize(&self, _t: f64, _y: &[f64], u: &[f64]) -> Box<dyn Linearization> {
        Box::new(HeatLinearization {
            a: Arc::clone(&self.a),
            gamma: self.exact.gamma,
            u: u[0],
        })
    }

    fn objective(&self, y_t: &[f64]) -> f64 {
        let m = self.m();
        let dev: f64 = (0..m).map(|i| (y_t[i] - self.exact.y_hat[i]).powi(2)).sum();
        0.5 * (dev + y_t[m])
    }

    fn objective_gradient(&self, y_t: &[f64], out: &mut [f64]) {
        let m = self.m();
        for i in 0..m {
            out[i] = y_t[i] - self.exact.y_hat[i];
        }
        out[m] = 0.5;
    }

    fn bounds(&self) -> ControlBounds {
        ControlBounds::unbounded(1)
    }

    /// `H = pᵀ(Ay + γe_m u) + p_{m+1}u²` is minimized by `u = −γp_m/(2p_{m+1})`,
    /// which is `−γp_m` for the exact multiplier `p_{m+1} = ½`.
    fn hamiltonian_argmin(&self, _t: f64, _y: &[f64], p: &[f64]) -> Option<Vec<f64>> {
        let m = self.m();
        (p[m] > 0.0).then(|| vec![-self.exact.gamma * p[m - 1] / (2.0 * p[m])])
    }
}

/// Maximum-norm errors against the closed-form optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatErrors {
    /// `max |U_ni − u*(t_ni)|`
    pub control: f64,
    /// `‖y_h(T) − y*(T)‖∞` over the heat components
    pub state: f64,
    /// `‖p_h(0) − p*(0)‖∞` over the heat components
    pub adjoint: f64,
}

pub fn heat_errors(
    exact: &HeatExact,
    triplet: &PeerTriplet,
    controls: &[StageBlock],
    sol: &TrajectorySolution,
) -> HeatErrors {
    let grid = &sol.grid;
    let mut control = 0.0f64;
    for (n, b) in controls.iter().enumerate() {
        for i in 0..triplet.s {
            let t = grid.stage_time(n, triplet.c[i]);
            control = control.max((b.stage(i)[0] - exact.u_star(t)).abs());
        }
    }
    let m = exact.m;
    let state = (0..m).fold(0.0f64, |a, i| a.max((sol.y_t[i] - exact.y_star_t[i]).abs()));
    let p0 = exact.p_star(0.0);
    let adjoint = if sol.p0.len() > m {
        (0..m).fold(0.0f64, |a, i| a.max((sol.p0[i] - p0[i]).abs()))
    } else {
        f64::NAN
    };
    HeatErrors { control, state, adjoint }
}

/// An optimized heat solution on one grid with its errors.
#[derive(Debug, Clone)]
pub struct HeatRun {
    pub grid: Grid,
    pub report: OptimizationReport,
    pub errors: HeatErrors,
}

/// Optimizes from the zero control on `grid`.
pub fn heat_run(problem: &HeatProblem, triplet: &PeerTriplet, grid: &Grid, opts: &OptimizerOptions) -> Result<HeatRun> {
    let initial = constant_controls(grid, triplet.s, &[0.0]);
    let report = optimize(problem, triplet, grid, &initial, opts, |_| {})?;
    let errors = heat_errors(&problem.exact, triplet, &report.controls, &report.solution);
    Ok(HeatRun {
        grid: grid.clone(),
        report,
        errors,
    })
}

/// Adapts the grid of `base` with the same number of steps and optimizes
/// again from the zero control.
pub fn heat_adapted_run(
    problem: &HeatProblem,
    triplet: &PeerTriplet,
    base: &HeatRun,
    adapt: &AdaptOptions,
    opts: &OptimizerOptions,
) -> Result<(HeatRun, Equidistribution)> {
    let eq = adapt_grid(triplet, &base.report.solution, adapt, &[])?;
    let run = heat_run(problem, triplet, &eq.grid, opts)?;
    Ok((run, eq))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenpairs_and_normalization() {
        let ex = HeatExact::new(250);
        let a = heat_matrix(250);
        let lmax = ex.lambda.iter().fold(0.0f64, |m, l| m.max(l.abs()));
        let mut out = vec![0.0; 250];
        for k in 0..250 {
            a.matvec(&ex.v[k], &mut out);
            let r = out
                .iter()
                .zip(&ex.v[k])
                .fold(0.0f64, |m, (av, v)| m.max((av - ex.lambda[k] * v).abs()));
            assert!(r <= 1e-9 * lmax, "{k}: {r}");
        }
        let dot: f64 = ex.v[0].iter().zip(&ex.v[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-10);
        for k in [0, 1, 100, 249] {
            let n2: f64 = ex.v[k].iter().map(|x| x * x).sum();
            assert!((n2 - 1.0).abs() < 1e-10);
        }
        assert!((ex.lambda[0] + std::f64::consts::PI.powi(2) / 4.0).abs() < 1e-4);
    }

    #[test]
    fn control_formula_at_final_time() {
        let ex = HeatExact::new(40);
        let want = -ex.gamma * ex.delta * (ex.v[0][39] + ex.v[1][39]);
        assert!((ex.u_star(1.0) - want).abs() < 1e-12 * want.abs());
    }

    #[test]
    fn phi1_limit() {
        assert_eq!(phi1(0.0), 1.0);
        assert!((phi1(1e-12) - 1.0).abs() < 1e-11);
        assert!((phi1(-2.0) - (1.0 - (-2.0f64).exp()) / 2.0).abs() < 1e-15);
    }
}
