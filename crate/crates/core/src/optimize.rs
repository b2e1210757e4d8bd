//! Reduced gradients, projected-gradient optimization over the stacked stage
//! controls, and Hamiltonian post-processing.

use serde::{Deserialize, Serialize};

use crate::error::{PeerError, Result};
use crate::integrator::{adjoint_sweep, forward_sweep, SolverOptions, TrajectorySolution};
use crate::problem::{ControlProblem, Grid, StageBlock};
use crate::triplet::PeerTriplet;

/// `∇_{U_ni} C = h_n κ_ii ∇_u f(Y_ni, U_ni)ᵀ P_ni`.
pub fn reduced_gradient(
    problem: &dyn ControlProblem,
    triplet: &PeerTriplet,
    controls: &[StageBlock],
    sol: &TrajectorySolution,
) -> Result<Vec<StageBlock>> {
    if !sol.has_adjoint() {
        return Err(PeerError::InvalidArgument(
            "reduced gradient needs the adjoint blocks".into(),
        ));
    }
    let d = problem.control_dim();
    let grid = &sol.grid;
    Ok((0..grid.steps())
        .map(|n| {
            let mut g = StageBlock::zeros(triplet.s, d);
            for i in 0..triplet.s {
                let lin = problem.linearize(
                    grid.stage_time(n, triplet.c[i]),
                    sol.y[n].stage(i),
                    controls[n].stage(i),
                );
                let gi = g.stage_mut(i);
                lin.apply_u_transpose(sol.p[n].stage(i), gi);
                let w = grid.h(n) * triplet.k[i];
                gi.iter_mut().for_each(|v| *v *= w);
            }
            g
        })
        .collect())
}

/// Inner product of two stacked control vectors.
pub fn dot(a: &[StageBlock], b: &[StageBlock]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.data.iter().zip(&y.data).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

pub fn max_norm(a: &[StageBlock]) -> f64 {
    a.iter().fold(0.0, |m, b| m.max(b.max_abs()))
}

/// `a + alpha·b`
pub fn axpy(a: &[StageBlock], alpha: f64, b: &[StageBlock]) -> Vec<StageBlock> {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let mut z = x.clone();
            z.data.iter_mut().zip(&y.data).for_each(|(p, q)| *p += alpha * q);
            z
        })
        .collect()
}

pub fn project_controls(problem: &dyn ControlProblem, controls: &mut [StageBlock]) {
    for b in controls.iter_mut() {
        for i in 0..b.s {
            problem.project(b.stage_mut(i));
        }
    }
}

/// Scales the gradient by `1/(h_n κ_ii)`: the gradient with respect to the
/// quadrature inner product `Σ h_n κ_ii ⟨U_ni, V_ni⟩`.
pub fn l2_gradient(triplet: &PeerTriplet, grid: &Grid, g: &[StageBlock]) -> Vec<StageBlock> {
    g.iter()
        .enumerate()
        .map(|(n, b)| {
            let mut z = b.clone();
            for i in 0..b.s {
                let w = 1.0 / (grid.h(n) * triplet.k[i]);
                z.stage_mut(i).iter_mut().for_each(|v| *v *= w);
            }
            z
        })
        .collect()
}

/// Objective and gradient as a function of the stacked controls, for use by
/// external optimizers.
pub struct ReducedObjective<'a> {
    pub problem: &'a dyn ControlProblem,
    pub triplet: &'a PeerTriplet,
    pub grid: &'a Grid,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    pub gradient: Vec<StageBlock>,
    pub solution: TrajectorySolution,
}

impl<'a> ReducedObjective<'a> {
    pub fn cost(&self, controls: &[StageBlock]) -> Result<(f64, TrajectorySolution)> {
        let sol = forward_sweep(self.problem, self.triplet, self.grid, controls, &self.solver)?;
        Ok((sol.cost, sol))
    }

    /// Adds the adjoint sweep and the gradient to a forward solution.
    pub fn complete(&self, controls: &[StageBlock], mut sol: TrajectorySolution) -> Result<Evaluation> {
        adjoint_sweep(self.problem, self.triplet, controls, &mut sol, &self.solver)?;
        let gradient = reduced_gradient(self.problem, self.triplet, controls, &sol)?;
        Ok(Evaluation {
            cost: sol.cost,
            gradient,
            solution: sol,
        })
    }

    pub fn evaluate(&self, controls: &[StageBlock]) -> Result<Evaluation> {
        let (_, sol) = self.cost(controls)?;
        self.complete(controls, sol)
    }

    /// Central difference `(C(U + εδU) − C(U − εδU))/(2ε)`, both sides evaluated
    /// concurrently.
    pub fn directional_difference(
        &self,
        controls: &[StageBlock],
        direction: &[StageBlock],
        eps: f64,
    ) -> Result<f64> {
        let plus = axpy(controls, eps, direction);
        let minus = axpy(controls, -eps, direction);
        let (cp, cm) = std::thread::scope(|scope| {
            let hp = scope.spawn(|| self.cost(&plus).map(|r| r.0));
            let cm = self.cost(&minus).map(|r| r.0);
            (hp.join().expect("cost evaluation panicked"), cm)
        });
        Ok((cp? - cm?) / (2.0 * eps))
    }
}

/// Search directions of [`optimize`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescentMethod {
    /// Scaled negative gradient with Barzilai-Borwein initial steps.
    ProjectedGradient,
    /// Limited-memory BFGS direction on the free components, falling back to
    /// the scaled gradient when it is not a descent direction.
    ProjectedLbfgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    /// Stop when `‖P(U − ∇_{L²}C) − U‖_∞ ≤ tol`.
    pub tol: f64,
    pub max_iters: usize,
    /// Sufficient-decrease constant of the Armijo rule.
    pub armijo: f64,
    pub max_halvings: usize,
    pub method: DescentMethod,
    /// Number of stored correction pairs for the quasi-Newton direction.
    pub memory: usize,
    /// Relative resolution of the objective. Once the predicted decrease falls
    /// below `resolution·|C|`, a step is accepted on the approximate Wolfe
    /// conditions: `C(U + d) ≤ C(U) + resolution·|C(U)|` and
    /// `∇C(U + d)ᵀd ≤ 0.8·|∇C(U)ᵀd|`.
    pub resolution: f64,
    /// Stop after this many consecutive iterations in which the objective
    /// moved by at most `resolution·|C|` and the stationarity measure set no
    /// new minimum; 0 disables the rule.
    pub stall_iters: usize,
    pub solver: SolverOptions,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iters: 500,
            armijo: 1e-4,
            max_halvings: 40,
            method: DescentMethod::ProjectedLbfgs,
            memory: 20,
            resolution: 1e-13,
            stall_iters: 0,
            solver: SolverOptions::default(),
        }
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub gradient_norm: f64,
    pub step_length: f64,
    pub sweeps_total: usize,
    /// The step was accepted on the approximate Wolfe conditions.
    pub approximate: bool,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub iterations: usize,
    pub converged: bool,
    /// The line search exhausted its halvings; the best iterate is returned.
    pub line_search_failed: bool,
    /// Progress stalled at the resolution of the objective.
    pub stalled: bool,
    pub trace: Vec<TraceRow>,
    pub controls: Vec<StageBlock>,
    pub gradient: Vec<StageBlock>,
    pub solution: TrajectorySolution,
}

impl OptimizationReport {
    pub fn objective_history(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }

    pub fn gradient_norm_history(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.gradient_norm).collect()
    }

    pub fn sweeps_total(&self) -> usize {
        self.trace.last().map_or(0, |r| r.sweeps_total)
    }
}

fn stationarity(
    problem: &dyn ControlProblem,
    controls: &[StageBlock],
    l2: &[StageBlock],
) -> f64 {
    let mut trial = axpy(controls, -1.0, l2);
    project_controls(problem, &mut trial);
    max_norm(&axpy(&trial, -1.0, controls))
}

/// Components held at a bound because the scaled gradient pushes outwards.
fn binding_mask(problem: &dyn ControlProblem, controls: &[StageBlock], l2: &[StageBlock]) -> Vec<Vec<bool>> {
    let bounds = problem.bounds();
    controls
        .iter()
        .zip(l2)
        .map(|(ub, gb)| {
            ub.data
                .iter()
                .zip(&gb.data)
                .enumerate()
                .map(|(k, (&u, &g))| {
                    let comp = k % ub.m;
                    (bounds.at_lower(comp, u) && g > 0.0) || (bounds.at_upper(comp, u) && g < 0.0)
                })
                .collect()
        })
        .collect()
}

fn apply_mask(v: &mut [StageBlock], mask: &[Vec<bool>]) {
    for (b, m) in v.iter_mut().zip(mask) {
        for (x, &fixed) in b.data.iter_mut().zip(m) {
            if fixed {
                *x = 0.0;
            }
        }
    }
}

/// Two-loop recursion with initial matrix `θD`, `D = diag(1/(h_n κ_ii))`.
fn lbfgs_direction(
    triplet: &PeerTriplet,
    grid: &Grid,
    gradient: &[StageBlock],
    pairs: &[(Vec<StageBlock>, Vec<StageBlock>)],
    mask: &[Vec<bool>],
) -> Vec<StageBlock> {
    let mut q = gradient.to_vec();
    apply_mask(&mut q, mask);
    let masked: Vec<(Vec<StageBlock>, Vec<StageBlock>)> = pairs
        .iter()
        .map(|(s, y)| {
            let (mut s, mut y) = (s.clone(), y.clone());
            apply_mask(&mut s, mask);
            apply_mask(&mut y, mask);
            (s, y)
        })
        .filter(|(s, y)| dot(s, y) > 0.0)
        .collect();
    let mut alphas = Vec::with_capacity(masked.len());
    for (s, y) in masked.iter().rev() {
        let rho = 1.0 / dot(s, y);
        let a = rho * dot(s, &q);
        q = axpy(&q, -a, y);
        alphas.push((a, rho));
    }
    let mut r = l2_gradient(triplet, grid, &q);
    if let Some((s, y)) = masked.last() {
        let dy = l2_gradient(triplet, grid, y);
        let theta = dot(s, y) / dot(y, &dy);
        r.iter_mut().for_each(|b| b.data.iter_mut().for_each(|x| *x *= theta));
    }
    for ((s, y), (a, rho)) in masked.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &r);
        r = axpy(&r, a - b, s);
    }
    apply_mask(&mut r, mask);
    r.iter_mut().for_each(|b| b.data.iter_mut().for_each(|x| *x = -*x));
    r
}

/// Projected descent with Armijo backtracking along `P(U + αd)`. The search
/// direction is the quasi-Newton or the scaled gradient direction; gradient
/// steps start from a Barzilai-Borwein length.
pub fn optimize(
    problem: &dyn ControlProblem,
    triplet: &PeerTriplet,
    grid: &Grid,
    initial: &[StageBlock],
    opts: &OptimizerOptions,
    mut hook: impl FnMut(&TraceRow),
) -> Result<OptimizationReport> {
    let objective = ReducedObjective {
        problem,
        triplet,
        grid,
        solver: opts.solver,
    };
    let mut u: Vec<StageBlock> = initial.to_vec();
    project_controls(problem, &mut u);
    let mut eval = objective.evaluate(&u)?;
    let mut sweeps = 2;
    let mut l2 = l2_gradient(triplet, grid, &eval.gradient);
    let mut measure = stationarity(problem, &u, &l2);
    let mut trace = vec![TraceRow {
        iter: 0,
        objective: eval.cost,
        gradient_norm: measure,
        step_length: 0.0,
        sweeps_total: sweeps,
        approximate: false,
    }];
    hook(&trace[0]);
    let mut bb = 1.0;
    let mut pairs: Vec<(Vec<StageBlock>, Vec<StageBlock>)> = Vec::new();
    let mut converged = measure <= opts.tol;
    let mut line_search_failed = false;
    let mut stalled = false;
    let mut stall_count = 0;
    let mut best_measure = measure;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iters {
        let gradient_step: Vec<StageBlock> = l2.iter().map(|b| {
            let mut z = b.clone();
            z.data.iter_mut().for_each(|x| *x = -*x);
            z
        }).collect();
        let mut candidates: Vec<(Vec<StageBlock>, f64)> = Vec::with_capacity(2);
        if opts.method == DescentMethod::ProjectedLbfgs && !pairs.is_empty() {
            let mask = binding_mask(problem, &u, &l2);
            let d = lbfgs_direction(triplet, grid, &eval.gradient, &pairs, &mask);
            if dot(&eval.gradient, &d) < 0.0 {
                candidates.push((d, 1.0));
            }
        }
        candidates.push((gradient_step, bb));
        let mut accepted = None;
        for (direction, first) in candidates {
            let mut step = first;
            for _ in 0..=opts.max_halvings {
                let mut trial = axpy(&u, step, &direction);
                project_controls(problem, &mut trial);
                let diff = axpy(&trial, -1.0, &u);
                let decrease = dot(&eval.gradient, &diff);
                if !(decrease < 0.0) {
                    break;
                }
                let (cost, sol) = objective.cost(&trial)?;
                sweeps += 1;
                if cost.is_finite() && cost <= eval.cost + opts.armijo * decrease {
                    accepted = Some((trial, diff, Err(sol), step));
                    break;
                }
                let slack = opts.resolution * eval.cost.abs();
                if cost.is_finite() && -decrease <= slack && cost <= eval.cost + slack {
                    let next = objective.complete(&trial, sol)?;
                    sweeps += 1;
                    if dot(&next.gradient, &diff) <= -0.8 * decrease {
                        accepted = Some((trial, diff, Ok(next), step));
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
            pairs.clear();
        }
        let Some((trial, diff, outcome, step)) = accepted else {
            line_search_failed = true;
            break;
        };
        let approximate = outcome.is_ok();
        let next = match outcome {
            Ok(next) => next,
            Err(sol) => {
                sweeps += 1;
                objective.complete(&trial, sol)?
            }
        };
        let dg = axpy(&next.gradient, -1.0, &eval.gradient);
        let sy = dot(&diff, &dg);
        let ss = dot(&diff, &l2_gradient_inverse(triplet, grid, &diff));
        bb = if sy > 0.0 { (ss / sy).clamp(1e-12, 1e12) } else { (2.0 * bb).min(1e12) };
        if sy > 1e-14 * ss.max(f64::MIN_POSITIVE) {
            pairs.push((diff, dg));
            if pairs.len() > opts.memory.max(1) {
                pairs.remove(0);
            }
        }
        let flat = (eval.cost - next.cost).abs() <= opts.resolution * eval.cost.abs();
        u = trial;
        eval = next;
        l2 = l2_gradient(triplet, grid, &eval.gradient);
        iterations += 1;
        measure = stationarity(problem, &u, &l2);
        converged = measure <= opts.tol;
        stall_count = if flat && measure >= best_measure { stall_count + 1 } else { 0 };
        best_measure = best_measure.min(measure);
        stalled = !converged && opts.stall_iters > 0 && stall_count >= opts.stall_iters;
        let row = TraceRow {
            iter: iterations,
            objective: eval.cost,
            gradient_norm: measure,
            step_length: step,
            sweeps_total: sweeps,
            approximate,
        };
        hook(&row);
        trace.push(row);
        if stalled {
            break;
        }
    }
    Ok(OptimizationReport {
        iterations,
        converged,
        line_search_failed,
        stalled,
        trace,
        controls: u,
        gradient: eval.gradient,
        solution: eval.solution,
    })
}

/// Multiplies by `h_n κ_ii`, the inverse of [`l2_gradient`].
fn l2_gradient_inverse(triplet: &PeerTriplet, grid: &Grid, v: &[StageBlock]) -> Vec<StageBlock> {
    v.iter()
        .enumerate()
        .map(|(n, b)| {
            let mut z = b.clone();
            for i in 0..b.s {
                let w = grid.h(n) * triplet.k[i];
                z.stage_mut(i).iter_mut().for_each(|x| *x *= w);
            }
            z
        })
        .collect()
}

/// `U‡_ni = argmin_{U ∈ U_ad} H(Y_ni, U, P_ni)`.
pub fn postprocess_controls(
    problem: &dyn ControlProblem,
    triplet: &PeerTriplet,
    sol: &TrajectorySolution,
) -> Result<Vec<StageBlock>> {
    if !sol.has_adjoint() {
        return Err(PeerError::InvalidArgument(
            "post-processing needs the adjoint blocks".into(),
        ));
    }
    let d = problem.control_dim();
    let grid = &sol.grid;
    (0..grid.steps())
        .map(|n| {
            let mut b = StageBlock::zeros(triplet.s, d);
            for i in 0..triplet.s {
                let t = grid.stage_time(n, triplet.c[i]);
                let mut u = problem
                    .hamiltonian_argmin(t, sol.y[n].stage(i), sol.p[n].stage(i))
                    .ok_or_else(|| {
                        PeerError::Unsupported("problem has no closed-form Hamiltonian minimizer".into())
                    })?;
                problem.project(&mut u);
                b.stage_mut(i).copy_from_slice(&u);
            }
            Ok(b)
        })
        .collect()
}

/// Sign check of the discrete control condition: on free components the
/// scaled gradient vanishes, at a lower bound it is nonnegative and at an upper
/// bound nonpositive. Returns the largest violation of the scaled gradient.
pub fn kkt_violation(problem: &dyn ControlProblem, controls: &[StageBlock], l2: &[StageBlock]) -> f64 {
    let bounds = problem.bounds();
    let mut worst = 0.0f64;
    for (ub, gb) in controls.iter().zip(l2) {
        for (k, (&u, &g)) in ub.data.iter().zip(&gb.data).enumerate() {
            let comp = k % ub.m;
            let v = if bounds.at_lower(comp, u) {
                (-g).max(0.0)
            } else if bounds.at_upper(comp, u) {
                g.max(0.0)
            } else {
                g.abs()
            };
            worst = worst.max(v);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrator::{constant_controls, solve_kkt};
    use crate::problem::{ControlBounds, DenseProblem};
    use crate::triplet::build_triplet;
    use nalgebra::DMatrix;

    fn integrator_problem() -> DenseProblem {
        // y' = u, C = y(T)
        DenseProblem::new(
            vec![0.0],
            1,
            1.0,
            |_, _, u, out| out[0] = u[0],
            |_, _, _| DMatrix::zeros(1, 1),
            |_, _, _| DMatrix::from_element(1, 1, 1.0),
            |y| y[0],
            |_, g| g[0] = 1.0,
        )
    }

    #[test]
    fn zero_control_jacobian_gives_zero_gradient() {
        let p = DenseProblem::new(
            vec![1.0],
            1,
            1.0,
            |_, y, _, out| out[0] = -y[0],
            |_, _, _| DMatrix::from_element(1, 1, -1.0),
            |_, _, _| DMatrix::zeros(1, 1),
            |y| y[0] * y[0],
            |y, g| g[0] = 2.0 * y[0],
        );
        let t = build_triplet("AP4o33vgi").unwrap();
        let g = Grid::uniform(1.0, 6).unwrap();
        let u = constant_controls(&g, 4, &[0.3]);
        let sol = solve_kkt(&p, &t, &g, &u, &SolverOptions::default()).unwrap();
        let grad = reduced_gradient(&p, &t, &u, &sol).unwrap();
        assert_eq!(max_norm(&grad), 0.0);
    }

    #[test]
    fn integrator_gradient_is_quadrature_weights() {
        let p = integrator_problem();
        let t = build_triplet("AP4o33vsi").unwrap();
        let g = Grid::new(vec![0.0, 0.1, 0.25, 0.4, 0.6, 0.75, 1.0]).unwrap();
        let u = constant_controls(&g, 4, &[0.5]);
        let sol = solve_kkt(&p, &t, &g, &u, &SolverOptions::default()).unwrap();
        let grad = reduced_gradient(&p, &t, &u, &sol).unwrap();
        // C is linear in U, so one-sided unit differences are exact
        let obj = ReducedObjective {
            problem: &p,
            triplet: &t,
            grid: &g,
            solver: SolverOptions::default(),
        };
        let base = obj.cost(&u).unwrap().0;
        for n in [0, 3, 5] {
            for i in 0..4 {
                let mut e = constant_controls(&g, 4, &[0.0]);
                e[n].stage_mut(i)[0] = 1.0;
                let fd = obj.cost(&axpy(&u, 1.0, &e)).unwrap().0 - base;
                let an = grad[n].stage(i)[0];
                assert!((fd - an).abs() <= 1e-6 * an.abs(), "{n} {i}: {fd} vs {an}");
            }
        }
    }

    #[test]
    fn stationary_start_returns_immediately() {
        // C = y(T)² with y' = u, y(0) = 0: U = 0 is optimal
        let p = DenseProblem::new(
            vec![0.0],
            1,
            1.0,
            |_, _, u, out| out[0] = u[0],
            |_, _, _| DMatrix::zeros(1, 1),
            |_, _, _| DMatrix::from_element(1, 1, 1.0),
            |y| y[0] * y[0],
            |y, g| g[0] = 2.0 * y[0],
        );
        let t = build_triplet("AP4o33vgi").unwrap();
        let g = Grid::uniform(1.0, 5).unwrap();
        let u = constant_controls(&g, 4, &[0.0]);
        let rep = optimize(&p, &t, &g, &u, &OptimizerOptions::default(), |_| {}).unwrap();
        assert_eq!(rep.iterations, 0);
        assert!(rep.converged);
    }

    #[test]
    fn box_constrained_linear_cost_hits_bound() {
        let p = integrator_problem().with_bounds(ControlBounds::uniform(1, -1.0, 2.0));
        let t = build_triplet("AP4o33vgi").unwrap();
        let g = Grid::uniform(1.0, 5).unwrap();
        let u = constant_controls(&g, 4, &[0.5]);
        let rep = optimize(&p, &t, &g, &u, &OptimizerOptions::default(), |_| {}).unwrap();
        assert!(rep.converged);
        for b in &rep.controls {
            assert!(b.data.iter().all(|&v| v == -1.0));
        }
        let l2 = l2_gradient(&t, &g, &rep.gradient);
        assert!(kkt_violation(&p, &rep.controls, &l2) < 1e-12);
        let h = rep.objective_history();
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn postprocess_requires_argmin() {
        let p = integrator_problem();
        let t = build_triplet("AP4o33vgi").unwrap();
        let g = Grid::uniform(1.0, 4).unwrap();
        let u = constant_controls(&g, 4, &[0.0]);
        let sol = solve_kkt(&p, &t, &g, &u, &SolverOptions::default()).unwrap();
        assert!(matches!(postprocess_controls(&p, &t, &sol), Err(PeerError::Unsupported(_))));
    }
}
