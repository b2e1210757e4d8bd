//! Forward marching of the discrete state equations and backward marching of
//! the discrete adjoint equations.
//!
//! Standard steps are solved stage by stage (A is lower triangular). The two
//! boundary steps use Gauss-Seidel type sweeps with the triangular
//! approximations `Ã₀`, `Ã_N`, followed by one exact per-stage correction.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{PeerError, Result};
use crate::linalg::{evaluation_row, vandermonde};
use crate::problem::{ControlProblem, Grid, Linearization, ShiftedSolver, StageBlock};
use crate::triplet::{assemble_b, PeerTriplet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative residual tolerance of the stage Newton iterations.
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Relative increment tolerance of the boundary sweeps.
    pub boundary_tol: f64,
    pub boundary_max_sweeps: usize,
    /// Re-evaluate the Jacobian in every Newton iteration.
    pub full_newton: bool,
    /// Exact per-stage correction after the boundary sweeps.
    pub polish: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            newton_max_iter: 25,
            boundary_tol: 1e-13,
            boundary_max_sweeps: 30,
            full_newton: false,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub newton_iterations: usize,
    /// Relative increments `‖ΔY‖∞/‖Y‖∞` of each boundary sweep.
    pub start_history: Vec<f64>,
    pub end_history: Vec<f64>,
    pub adjoint_end_history: Vec<f64>,
    pub adjoint_start_history: Vec<f64>,
    /// Largest relative residual of the discrete state equations.
    pub state_residual: f64,
    /// Largest relative residual of the discrete adjoint equations.
    pub adjoint_residual: f64,
}

impl SweepStats {
    /// Number of sweeps needed to bring the relative increment to `tol`.
    pub fn sweeps_to(history: &[f64], tol: f64) -> Option<usize> {
        history.iter().position(|&r| r <= tol).map(|k| k + 1)
    }
}

#[derive(Debug, Clone)]
pub struct TrajectorySolution {
    pub grid: Grid,
    /// State stage blocks `Y_0, …, Y_N`.
    pub y: Vec<StageBlock>,
    /// Adjoint stage blocks `P_0, …, P_N`; empty after a forward-only sweep.
    pub p: Vec<StageBlock>,
    /// `Y_Nᵀw`, the state at the horizon.
    pub y_t: Vec<f64>,
    pub p_t: Vec<f64>,
    /// `P_0ᵀa`, the derivative of the discrete cost with respect to `y0`; the
    /// mirror image of `y_t` under the flip.
    pub p0: Vec<f64>,
    pub cost: f64,
    pub stats: SweepStats,
}

impl TrajectorySolution {
    pub fn has_adjoint(&self) -> bool {
        !self.p.is_empty()
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    if alpha != 0.0 {
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }
}

/// Controls as `N + 1` stage blocks of dimension `d`.
pub fn constant_controls(grid: &Grid, s: usize, u: &[f64]) -> Vec<StageBlock> {
    (0..grid.steps()).map(|_| StageBlock::constant(s, u)).collect()
}

/// Controls sampled from a function of time at all stage times.
pub fn sample_controls(
    grid: &Grid,
    triplet: &PeerTriplet,
    d: usize,
    f: impl Fn(f64) -> Vec<f64>,
) -> Vec<StageBlock> {
    (0..grid.steps())
        .map(|n| {
            let mut b = StageBlock::zeros(triplet.s, d);
            for (i, &c) in triplet.c.iter().enumerate() {
                b.stage_mut(i).copy_from_slice(&f(grid.stage_time(n, c)));
            }
            b
        })
        .collect()
}

/// Least-squares quadratic extrapolation from stage values at local nodes `c`
/// to local coordinates `x`.
fn extrapolation(c: &[f64], x: &[f64]) -> DMatrix<f64> {
    let v = vandermonde(c, 3);
    let g = (v.transpose() * &v)
        .try_inverse()
        .expect("three distinct nodes")
        * v.transpose();
    vandermonde(x, 3) * g
}

/// Known part `M·X` of a slab equation with the scales `Σ_j |M_ij| ‖X_j‖∞`.
struct SlabRhs {
    base: StageBlock,
    scale: Vec<f64>,
}

impl SlabRhs {
    fn new(mat: &DMatrix<f64>, x: &StageBlock) -> Self {
        let norms: Vec<f64> = (0..x.s).map(|j| inf_norm(x.stage(j))).collect();
        let scale = (0..mat.nrows())
            .map(|i| (0..x.s).map(|j| mat[(i, j)].abs() * norms[j]).sum())
            .collect();
        Self {
            base: x.transform(mat),
            scale,
        }
    }
}

/// `X − 𝟙vᵀ` stage by stage.
fn increments(x: &StageBlock, v: &[f64]) -> StageBlock {
    let mut d = x.clone();
    for j in 0..x.s {
        for (a, r) in d.stage_mut(j).iter_mut().zip(v) {
            *a -= r;
        }
    }
    d
}

fn add_origin(z: &StageBlock, v: &[f64]) -> StageBlock {
    let mut y = z.clone();
    for j in 0..z.s {
        for (a, r) in y.stage_mut(j).iter_mut().zip(v) {
            *a += r;
        }
    }
    y
}

struct Marcher<'a> {
    problem: &'a dyn ControlProblem,
    t: &'a PeerTriplet,
    grid: &'a Grid,
    opts: SolverOptions,
    m: usize,
}

impl<'a> Marcher<'a> {
    fn stage_time(&self, n: usize, i: usize) -> f64 {
        self.grid.stage_time(n, self.t.c[i])
    }

    fn b_matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        assemble_b(self.t, self.grid.sigma(n))
    }

    /// Solves `diag·z − γ f(t, v + z, u) = r` for the increment `z` of one stage
    /// over the reference `v` by (modified) Newton.
    #[allow(clippy::too_many_arguments)]
    fn stage_newton(
        &self,
        n: usize,
        i: usize,
        diag: f64,
        gamma: f64,
        r: &[f64],
        u: &[f64],
        v: &[f64],
        z: &mut [f64],
        stats: &mut SweepStats,
    ) -> Result<()> {
        let m = self.m;
        let time = self.stage_time(n, i);
        let mut y: Vec<f64> = v.iter().zip(z.iter()).map(|(a, b)| a + b).collect();
        let mut solver = self
            .problem
            .linearize(time, &y, u)
            .shifted(diag, gamma)
            .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
        let mut f = vec![0.0; m];
        let mut res = vec![0.0; m];
        let mut delta = vec![0.0; m];
        let mut prev = f64::INFINITY;
        let mut increases = 0;
        let mut last = f64::INFINITY;
        for it in 0..self.opts.newton_max_iter {
            for k in 0..m {
                y[k] = v[k] + z[k];
            }
            self.problem.rhs(time, &y, u, &mut f);
            for k in 0..m {
                res[k] = r[k] - diag * z[k] + gamma * f[k];
            }
            let rn = inf_norm(&res);
            last = rn;
            let scale = inf_norm(r) + diag.abs() * inf_norm(z) + gamma.abs() * inf_norm(&f);
            if !rn.is_finite() {
                return Err(PeerError::NewtonDivergence { slab: n, stage: i, residual: rn });
            }
            // the predictor alone is accepted only at round-off level, so that
            // linear stages are always solved
            let tol = if it == 0 { 4.0 * f64::EPSILON } else { self.opts.newton_tol };
            if rn <= tol * scale {
                return Ok(());
            }
            if rn > prev {
                increases += 1;
                if increases >= 3 {
                    return Err(PeerError::NewtonDivergence { slab: n, stage: i, residual: rn });
                }
            } else {
                increases = 0;
            }
            prev = rn;
            if self.opts.full_newton && it > 0 {
                solver = self
                    .problem
                    .linearize(time, &y, u)
                    .shifted(diag, gamma)
                    .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
            }
            solver
                .solve(&res, &mut delta)
                .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
            axpy(1.0, &delta, z);
            stats.newton_iterations += 1;
            let size = v.iter().zip(z.iter()).fold(0.0f64, |a, (p, q)| a.max((p + q).abs()));
            if inf_norm(&delta) <= self.opts.newton_tol * size {
                return Ok(());
            }
        }
        Err(PeerError::NewtonNoConvergence {
            slab: n,
            stage: i,
            iterations: self.opts.newton_max_iter,
            residual: last,
        })
    }

    /// Residual of `A_b Y − base − hK F(Y)` relative to the size of its terms.
    fn state_residual(
        &self,
        n: usize,
        amat: &DMatrix<f64>,
        rhs: &SlabRhs,
        y: &StageBlock,
        u: &StageBlock,
    ) -> f64 {
        let base = &rhs.base;
        let norms: Vec<f64> = (0..y.s).map(|j| inf_norm(y.stage(j))).collect();
        let s = self.t.s;
        let h = self.grid.h(n);
        let mut f = vec![0.0; self.m];
        let mut worst = 0.0f64;
        for i in 0..s {
            self.problem.rhs(self.stage_time(n, i), y.stage(i), u.stage(i), &mut f);
            let row: Vec<f64> = (0..s).map(|j| amat[(i, j)]).collect();
            let ay = y.combine(&row);
            let g = h * self.t.k[i];
            let mut res = 0.0f64;
            for k in 0..self.m {
                res = res.max((ay[k] - base.stage(i)[k] - g * f[k]).abs());
            }
            let scale = (0..s).map(|j| amat[(i, j)].abs() * norms[j]).sum::<f64>()
                + rhs.scale[i]
                + g * inf_norm(&f);
            if scale > 0.0 {
                worst = worst.max(res / scale);
            }
        }
        worst
    }

    /// Boundary step `A_b Y = base + hK F(Y)` by sweeps with the triangular `Ã`.
    /// The sweeps run on `Z = Y − 𝟙vᵀ` with `A_b Z = inc + hK F(𝟙vᵀ + Z)`,
    /// where `inc = base − A_b𝟙vᵀ` is formed without cancellation by the caller.
    #[allow(clippy::too_many_arguments)]
    fn boundary_forward(
        &self,
        n: usize,
        amat: &DMatrix<f64>,
        tilde: &DMatrix<f64>,
        rhs_known: &SlabRhs,
        inc: &StageBlock,
        v: &[f64],
        u: &StageBlock,
        y: &mut StageBlock,
        frozen: Option<Box<dyn Linearization>>,
        stats: &mut SweepStats,
    ) -> Result<Vec<f64>> {
        let s = self.t.s;
        let m = self.m;
        let h = self.grid.h(n);
        let base = inc;
        let mut z = increments(y, v);
        let mut yi = vec![0.0; m];
        let solvers: Vec<Box<dyn ShiftedSolver>> = (0..s)
            .map(|i| {
                let g = h * self.t.k[i];
                let solver = match &frozen {
                    Some(lin) => lin.shifted(tilde[(i, i)], g),
                    None => self
                        .problem
                        .linearize(self.stage_time(n, i), y.stage(i), u.stage(i))
                        .shifted(tilde[(i, i)], g),
                };
                solver.map_err(|_| PeerError::SingularStage { slab: n, stage: i })
            })
            .collect::<Result<_>>()?;
        let mut history = Vec::new();
        let mut f = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        let mut delta = vec![0.0; m];
        let mut converged = false;
        for _ in 0..self.opts.boundary_max_sweeps {
            let mut change = 0.0f64;
            for i in 0..s {
                let g = h * self.t.k[i];
                for k in 0..m {
                    yi[k] = v[k] + z.stage(i)[k];
                }
                self.problem.rhs(self.stage_time(n, i), &yi, u.stage(i), &mut f);
                rhs.copy_from_slice(base.stage(i));
                axpy(g, &f, &mut rhs);
                for j in 0..s {
                    axpy(-amat[(i, j)], &z.data[j * m..(j + 1) * m], &mut rhs);
                }
                solvers[i]
                    .solve(&rhs, &mut delta)
                    .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
                axpy(1.0, &delta, z.stage_mut(i));
                change = change.max(inf_norm(&delta));
            }
            let scale = add_origin(&z, v).max_abs();
            let rel = if scale > 0.0 { change / scale } else { change };
            history.push(rel);
            if !rel.is_finite() {
                break;
            }
            if rel <= self.opts.boundary_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(PeerError::BoundaryNoConvergence {
                slab: n,
                sweeps: history.len(),
                residual: history.last().copied().unwrap_or(f64::NAN),
            });
        }
        *y = add_origin(&z, v);
        if self.opts.polish {
            let before = self.state_residual(n, amat, rhs_known, y, u);
            let mut trial = z.clone();
            for i in 0..s {
                let mut r = base.stage(i).to_vec();
                for j in 0..s {
                    if j != i {
                        axpy(-amat[(i, j)], trial.stage(j), &mut r);
                    }
                }
                let mut zi = trial.stage(i).to_vec();
                self.stage_newton(n, i, amat[(i, i)], h * self.t.k[i], &r, u.stage(i), v, &mut zi, stats)?;
                trial.stage_mut(i).copy_from_slice(&zi);
            }
            let trial = add_origin(&trial, v);
            if self.state_residual(n, amat, rhs_known, &trial, u) <= before {
                *y = trial;
            }
        }
        Ok(history)
    }

    fn forward(&self, controls: &[StageBlock]) -> Result<(Vec<StageBlock>, SweepStats)> {
        let t = self.t;
        let s = t.s;
        let last = self.grid.last();
        let mut stats = SweepStats::default();
        let mut ys: Vec<StageBlock> = Vec::with_capacity(last + 1);

        // starting step
        let y0 = self.problem.initial_state();
        let rhs = SlabRhs::new(&t.a0, &StageBlock::constant(s, &y0));
        let u_start = controls[0].combine(&evaluation_row(t.v_inv(), 0.0));
        let frozen = self.problem.linearize(0.0, &y0, &u_start);
        let mut y = StageBlock::constant(s, &y0);
        let inc = StageBlock::zeros(s, self.m);
        stats.start_history = self.boundary_forward(
            0,
            &t.a0,
            &t.at0,
            &rhs,
            &inc,
            &y0,
            &controls[0],
            &mut y,
            Some(frozen),
            &mut stats,
        )?;
        let mut worst = self.state_residual(0, &t.a0, &rhs, &y, &controls[0]);
        ys.push(y);

        for n in 1..=last {
            let prev = &ys[n - 1];
            let b = self.b_matrix(n)?;
            let rhs = SlabRhs::new(&b, prev);
            let sigma = self.grid.sigma(n);
            let mut y = if n == 1 {
                StageBlock::constant(s, prev.stage(s - 1))
            } else {
                let x: Vec<f64> = t.c.iter().map(|c| 1.0 + sigma * c).collect();
                prev.transform(&extrapolation(&t.c, &x))
            };
            let u = &controls[n];
            // increment form relative to the last stage of the previous slab;
            // with A𝟙 = B𝟙 constants are reproduced exactly
            let v = prev.stage(s - 1).to_vec();
            let bd = increments(prev, &v).transform(&b);
            if n == last {
                stats.end_history =
                    self.boundary_forward(n, &t.an, &t.atn, &rhs, &bd, &v, u, &mut y, None, &mut stats)?;
                worst = worst.max(self.state_residual(n, &t.an, &rhs, &y, u));
            } else {
                let h = self.grid.h(n);
                let mut z = StageBlock::zeros(s, self.m);
                for i in 0..s {
                    let mut r = bd.stage(i).to_vec();
                    for j in 0..i {
                        axpy(-t.a[(i, j)], z.stage(j), &mut r);
                    }
                    let mut zi: Vec<f64> = y.stage(i).iter().zip(&v).map(|(a, b)| a - b).collect();
                    self.stage_newton(n, i, t.a[(i, i)], h * t.k[i], &r, u.stage(i), &v, &mut zi, &mut stats)?;
                    z.stage_mut(i).copy_from_slice(&zi);
                    for ((x, a), b) in y.stage_mut(i).iter_mut().zip(&zi).zip(&v) {
                        *x = b + a;
                    }
                }
                worst = worst.max(self.state_residual(n, &t.a, &rhs, &y, u));
            }
            ys.push(y);
        }
        stats.state_residual = worst;
        Ok((ys, stats))
    }

    fn linearizations(&self, n: usize, y: &StageBlock, u: &StageBlock) -> Vec<Box<dyn Linearization>> {
        (0..self.t.s)
            .map(|i| self.problem.linearize(self.stage_time(n, i), y.stage(i), u.stage(i)))
            .collect()
    }

    /// Residual of `A_bᵀP − base − hK JᵀP` relative to the size of its terms.
    fn adjoint_residual(
        &self,
        n: usize,
        amat: &DMatrix<f64>,
        rhs: &SlabRhs,
        p: &StageBlock,
        lins: &[Box<dyn Linearization>],
    ) -> f64 {
        let base = &rhs.base;
        let norms: Vec<f64> = (0..p.s).map(|j| inf_norm(p.stage(j))).collect();
        let s = self.t.s;
        let h = self.grid.h(n);
        let mut jtp = vec![0.0; self.m];
        let mut worst = 0.0f64;
        for i in 0..s {
            lins[i].apply_y_transpose(p.stage(i), &mut jtp);
            let col: Vec<f64> = (0..s).map(|j| amat[(j, i)]).collect();
            let ap = p.combine(&col);
            let g = h * self.t.k[i];
            let mut res = 0.0f64;
            for k in 0..self.m {
                res = res.max((ap[k] - base.stage(i)[k] - g * jtp[k]).abs());
            }
            let scale = (0..s).map(|j| amat[(j, i)].abs() * norms[j]).sum::<f64>()
                + rhs.scale[i]
                + g * inf_norm(&jtp);
            if scale > 0.0 {
                worst = worst.max(res / scale);
            }
        }
        worst
    }

    /// Boundary adjoint step `A_bᵀP = base + hK JᵀP` by reverse sweeps with `Ãᵀ`,
    /// run on `Z = P − 𝟙vᵀ` with the increment right-hand side `inc`.
    #[allow(clippy::too_many_arguments)]
    fn boundary_adjoint(
        &self,
        n: usize,
        amat: &DMatrix<f64>,
        tilde: &DMatrix<f64>,
        rhs_known: &SlabRhs,
        inc: &StageBlock,
        v: &[f64],
        lins: &[Box<dyn Linearization>],
        p: &mut StageBlock,
    ) -> Result<Vec<f64>> {
        let s = self.t.s;
        let m = self.m;
        let h = self.grid.h(n);
        let base = inc;
        let mut z = increments(p, v);
        let jtv: Vec<Vec<f64>> = (0..s)
            .map(|i| {
                let mut out = vec![0.0; m];
                lins[i].apply_y_transpose(v, &mut out);
                out
            })
            .collect();
        let solvers: Vec<Box<dyn ShiftedSolver>> = (0..s)
            .map(|i| {
                lins[i]
                    .shifted(tilde[(i, i)], h * self.t.k[i])
                    .map_err(|_| PeerError::SingularStage { slab: n, stage: i })
            })
            .collect::<Result<_>>()?;
        let mut history = Vec::new();
        let mut jtp = vec![0.0; m];
        let mut rhs = vec![0.0; m];
        let mut delta = vec![0.0; m];
        let mut converged = false;
        for _ in 0..self.opts.boundary_max_sweeps {
            let mut change = 0.0f64;
            for i in (0..s).rev() {
                let g = h * self.t.k[i];
                lins[i].apply_y_transpose(z.stage(i), &mut jtp);
                rhs.copy_from_slice(base.stage(i));
                axpy(g, &jtp, &mut rhs);
                axpy(g, &jtv[i], &mut rhs);
                for j in 0..s {
                    axpy(-amat[(j, i)], &z.data[j * m..(j + 1) * m], &mut rhs);
                }
                solvers[i]
                    .solve_transpose(&rhs, &mut delta)
                    .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
                axpy(1.0, &delta, z.stage_mut(i));
                change = change.max(inf_norm(&delta));
            }
            let scale = add_origin(&z, v).max_abs();
            let rel = if scale > 0.0 { change / scale } else { change };
            history.push(rel);
            if !rel.is_finite() {
                break;
            }
            if rel <= self.opts.boundary_tol {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(PeerError::BoundaryNoConvergence {
                slab: n,
                sweeps: history.len(),
                residual: history.last().copied().unwrap_or(f64::NAN),
            });
        }
        *p = add_origin(&z, v);
        if self.opts.polish {
            let before = self.adjoint_residual(n, amat, rhs_known, p, lins);
            let mut trial = z.clone();
            for i in (0..s).rev() {
                let mut r = base.stage(i).to_vec();
                axpy(h * self.t.k[i], &jtv[i], &mut r);
                for j in 0..s {
                    if j != i {
                        axpy(-amat[(j, i)], trial.stage(j), &mut r);
                    }
                }
                let solver = lins[i]
                    .shifted(amat[(i, i)], h * self.t.k[i])
                    .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
                let mut pi = vec![0.0; m];
                solver
                    .solve_transpose(&r, &mut pi)
                    .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
                trial.stage_mut(i).copy_from_slice(&pi);
            }
            let trial = add_origin(&trial, v);
            if self.adjoint_residual(n, amat, rhs_known, &trial, lins) <= before {
                *p = trial;
            }
        }
        Ok(history)
    }

    fn adjoint(
        &self,
        ys: &[StageBlock],
        controls: &[StageBlock],
        p_t: &[f64],
        stats: &mut SweepStats,
    ) -> Result<Vec<StageBlock>> {
        let t = self.t;
        let s = t.s;
        let m = self.m;
        let last = self.grid.last();
        let mut ps: Vec<StageBlock> = vec![StageBlock::zeros(s, m); last + 1];

        // terminal block
        let rhs = SlabRhs::new(&t.an.transpose(), &StageBlock::constant(s, p_t));
        let lins = self.linearizations(last, &ys[last], &controls[last]);
        let mut p = StageBlock::constant(s, p_t);
        let inc = StageBlock::zeros(s, m);
        stats.adjoint_end_history =
            self.boundary_adjoint(last, &t.an, &t.atn, &rhs, &inc, p_t, &lins, &mut p)?;
        let mut worst = self.adjoint_residual(last, &t.an, &rhs, &p, &lins);
        ps[last] = p;

        for n in (0..last).rev() {
            let bt = self.b_matrix(n + 1)?.transpose();
            let rhs = SlabRhs::new(&bt, &ps[n + 1]);
            let lins = self.linearizations(n, &ys[n], &controls[n]);
            let h = self.grid.h(n);
            if n == 0 {
                let sigma = self.grid.sigma(1);
                let x: Vec<f64> = t.c.iter().map(|c| (c - 1.0) / sigma).collect();
                let mut p = ps[1].transform(&extrapolation(&t.c, &x));
                let v = ps[1].stage(0).to_vec();
                let bd = increments(&ps[1], &v).transform(&bt);
                stats.adjoint_start_history =
                    self.boundary_adjoint(0, &t.a0, &t.at0, &rhs, &bd, &v, &lins, &mut p)?;
                worst = worst.max(self.adjoint_residual(0, &t.a0, &rhs, &p, &lins));
                ps[0] = p;
            } else {
                // increment form relative to the first stage of the next slab;
                // with 𝟙ᵀA = 𝟙ᵀB constants are reproduced exactly
                let v = ps[n + 1].stage(0).to_vec();
                let bd = increments(&ps[n + 1], &v).transform(&bt);
                let mut z = StageBlock::zeros(s, m);
                let mut p = StageBlock::zeros(s, m);
                let mut jtv = vec![0.0; m];
                for i in (0..s).rev() {
                    let mut r = bd.stage(i).to_vec();
                    for j in i + 1..s {
                        axpy(-t.a[(j, i)], z.stage(j), &mut r);
                    }
                    lins[i].apply_y_transpose(&v, &mut jtv);
                    axpy(h * t.k[i], &jtv, &mut r);
                    let solver = lins[i]
                        .shifted(t.a[(i, i)], h * t.k[i])
                        .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
                    let mut zi = vec![0.0; m];
                    solver
                        .solve_transpose(&r, &mut zi)
                        .map_err(|_| PeerError::SingularStage { slab: n, stage: i })?;
                    z.stage_mut(i).copy_from_slice(&zi);
                    for ((x, a), b) in p.stage_mut(i).iter_mut().zip(&zi).zip(&v) {
                        *x = b + a;
                    }
                }
                worst = worst.max(self.adjoint_residual(n, &t.a, &rhs, &p, &lins));
                ps[n] = p;
            }
        }
        stats.adjoint_residual = worst;
        Ok(ps)
    }
}

fn check_controls(problem: &dyn ControlProblem, t: &PeerTriplet, grid: &Grid, controls: &[StageBlock]) -> Result<()> {
    if controls.len() != grid.steps() {
        return Err(PeerError::InvalidArgument(format!(
            "expected {} control blocks, got {}",
            grid.steps(),
            controls.len()
        )));
    }
    let d = problem.control_dim();
    if controls.iter().any(|b| b.s != t.s || b.m != d) {
        return Err(PeerError::InvalidArgument(format!(
            "control blocks must hold {} stages of dimension {}",
            t.s, d
        )));
    }
    Ok(())
}

/// Forward sweep: all state blocks, `y_h(T)` and the objective.
pub fn forward_sweep(
    problem: &dyn ControlProblem,
    triplet: &PeerTriplet,
    grid: &Grid,
    controls: &[StageBlock],
    opts: &SolverOptions,
) -> Result<TrajectorySolution> {
    check_controls(problem, triplet, grid, controls)?;
    let marcher = Marcher {
        problem,
        t: triplet,
        grid,
        opts: *opts,
        m: problem.state_dim(),
    };
    let (y, stats) = marcher.forward(controls)?;
    let y_t = y[grid.last()].combine(&triplet.w);
    let cost = problem.objective(&y_t);
    let mut p_t = vec![0.0; problem.state_dim()];
    problem.objective_gradient(&y_t, &mut p_t);
    Ok(TrajectorySolution {
        grid: grid.clone(),
        y,
        p: Vec::new(),
        y_t,
        p_t,
        p0: Vec::new(),
        cost,
        stats,
    })
}

/// Backward sweep on top of a forward solution.
pub fn adjoint_sweep(
    problem: &dyn ControlProblem,
    triplet: &PeerTriplet,
    controls: &[StageBlock],
    sol: &mut TrajectorySolution,
    opts: &SolverOptions,
) -> Result<()> {
    check_controls(problem, triplet, &sol.grid, controls)?;
    let grid = sol.grid.clone();
    let marcher = Marcher {
        problem,
        t: triplet,
        grid: &grid,
        opts: *opts,
        m: problem.state_dim(),
    };
    let mut stats = std::mem::take(&mut sol.stats);
    let p = marcher.adjoint(&sol.y, controls, &sol.p_t, &mut stats);
    sol.stats = stats;
    sol.p = p?;
    sol.p0 = sol.p[0].combine(&triplet.a_start);
    Ok(())
}

/// Forward sweep followed by the adjoint sweep.
pub fn solve_kkt(
    problem: &dyn ControlProblem,
    triplet: &PeerTriplet,
    grid: &Grid,
    controls: &[StageBlock],
    opts: &SolverOptions,
) -> Result<TrajectorySolution> {
    let mut sol = forward_sweep(problem, triplet, grid, controls, opts)?;
    adjoint_sweep(problem, triplet, controls, &mut sol, opts)?;
    Ok(sol)
}

/// Value of the stage interpolant of block `n` at local coordinate `x`
/// (`x = 0` is `t_n`).
pub fn interpolate(triplet: &PeerTriplet, block: &StageBlock, x: f64) -> Vec<f64> {
    block.combine(&evaluation_row(triplet.v_inv(), x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DenseProblem;
    use crate::triplet::build_triplet;

    fn decay(lambda: f64) -> DenseProblem {
        DenseProblem::new(
            vec![1.0],
            0,
            1.0,
            move |_, y, _, out| out[0] = lambda * y[0],
            move |_, _, _| DMatrix::from_element(1, 1, lambda),
            |_, _, _| DMatrix::zeros(1, 0),
            |y| y[0],
            |_, g| g[0] = 1.0,
        )
    }

    #[test]
    fn extrapolation_is_exact_on_quadratics() {
        let c = [0.1, 0.4, 0.7, 1.0];
        let x = [1.2, 1.5, 1.9, 2.3];
        let e = extrapolation(&c, &x);
        let f = |t: f64| 1.0 - 2.0 * t + 0.5 * t * t;
        for i in 0..4 {
            let v: f64 = (0..4).map(|j| e[(i, j)] * f(c[j])).sum();
            assert!((v - f(x[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_preserves_constants() {
        for name in crate::KNOWN_TRIPLETS {
            let t = build_triplet(name).unwrap();
            let p = decay(0.0);
            let g = Grid::new(vec![0.0, 0.1, 0.22, 0.3, 0.45, 0.7, 1.0]).unwrap();
            let u = constant_controls(&g, 4, &[]);
            let sol = solve_kkt(&p, &t, &g, &u, &SolverOptions::default()).unwrap();
            for b in sol.y.iter().chain(sol.p.iter()) {
                for v in &b.data {
                    assert!((v - 1.0).abs() < 1e-12, "{name}: {v}");
                }
            }
            assert!((sol.y_t[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_certificates_are_small() {
        let t = build_triplet("AP4o33vgi").unwrap();
        let p = decay(-3.0);
        let g = Grid::uniform(1.0, 20).unwrap();
        let u = constant_controls(&g, 4, &[]);
        let sol = solve_kkt(&p, &t, &g, &u, &SolverOptions::default()).unwrap();
        assert!(sol.stats.state_residual < 1e-11, "{:?}", sol.stats);
        assert!(sol.stats.adjoint_residual < 1e-11, "{:?}", sol.stats);
        assert!(!sol.stats.start_history.is_empty() && !sol.stats.adjoint_end_history.is_empty());
    }

    #[test]
    fn rejects_mismatched_controls() {
        let t = build_triplet("AP4o33vgi").unwrap();
        let p = decay(-1.0);
        let g = Grid::uniform(1.0, 4).unwrap();
        let u = constant_controls(&g, 4, &[1.0]);
        assert!(matches!(
            forward_sweep(&p, &t, &g, &u, &SolverOptions::default()),
            Err(PeerError::InvalidArgument(_))
        ));
    }
}
