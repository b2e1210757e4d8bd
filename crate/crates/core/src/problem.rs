//! Optimal control problem abstraction, time grids, and the Lagrange-to-Mayer
//! augmentation.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{PeerError, Result};

/// Solver for `(αI − γJ)x = b` and its transpose.
pub trait ShiftedSolver: Send + Sync {
    fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<()>;
    fn solve_transpose(&self, b: &[f64], x: &mut [f64]) -> Result<()>;
}

/// Jacobians of `f` at a fixed point `(t, y, u)`.
pub trait Linearization: Send + Sync {
    /// `out = ∇_y f · v`
    fn apply_y(&self, v: &[f64], out: &mut [f64]);
    /// `out = ∇_y fᵀ · v`
    fn apply_y_transpose(&self, v: &[f64], out: &mut [f64]);
    /// `out = ∇_u f · du`, `out ∈ ℝ^m`
    fn apply_u(&self, du: &[f64], out: &mut [f64]);
    /// `out = ∇_u fᵀ · v`, `out ∈ ℝ^d`
    fn apply_u_transpose(&self, v: &[f64], out: &mut [f64]);
    /// Factorization of `αI − γ∇_y f`.
    fn shifted(&self, alpha: f64, gamma: f64) -> Result<Box<dyn ShiftedSolver>>;
}

/// Componentwise box `[lo, hi]` for each control component; infinite bounds allowed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ControlBounds {
    pub fn unbounded(d: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; d],
            upper: vec![f64::INFINITY; d],
        }
    }

    pub fn uniform(d: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; d],
            upper: vec![hi; d],
        }
    }

    pub fn clamp(&self, u: &mut [f64]) {
        for (k, x) in u.iter_mut().enumerate() {
            *x = x.max(self.lower[k]).min(self.upper[k]);
        }
    }

    pub fn at_lower(&self, k: usize, x: f64) -> bool {
        x <= self.lower[k]
    }

    pub fn at_upper(&self, k: usize, x: f64) -> bool {
        x >= self.upper[k]
    }
}

/// Problem `min C(y(T))` subject to `y' = f(t, y, u)`, `y(0) = y₀`, `u ∈ U_ad`.
///
/// `f` may depend on time (stage times are passed in); all solver modules only
/// read from the problem.
pub trait ControlProblem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn initial_state(&self) -> Vec<f64>;
    fn rhs(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]);
    fn linearize(&self, t: f64, y: &[f64], u: &[f64]) -> Box<dyn Linearization>;
    fn objective(&self, y_t: &[f64]) -> f64;
    fn objective_gradient(&self, y_t: &[f64], out: &mut [f64]);
    fn bounds(&self) -> ControlBounds;

    /// Metric projection onto the admissible box.
    fn project(&self, u: &mut [f64]) {
        self.bounds().clamp(u);
    }

    /// Pointwise minimizer of `pᵀf(t, y, ·)` over the admissible set, if known in closed form.
    fn hamiltonian_argmin(&self, _t: f64, _y: &[f64], _p: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

impl<P: ControlProblem + ?Sized> ControlProblem for Arc<P> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn control_dim(&self) -> usize {
        (**self).control_dim()
    }
    fn horizon(&self) -> f64 {
        (**self).horizon()
    }
    fn initial_state(&self) -> Vec<f64> {
        (**self).initial_state()
    }
    fn rhs(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        (**self).rhs(t, y, u, out)
    }
    fn linearize(&self, t: f64, y: &[f64], u: &[f64]) -> Box<dyn Linearization> {
        (**self).linearize(t, y, u)
    }
    fn objective(&self, y_t: &[f64]) -> f64 {
        (**self).objective(y_t)
    }
    fn objective_gradient(&self, y_t: &[f64], out: &mut [f64]) {
        (**self).objective_gradient(y_t, out)
    }
    fn bounds(&self) -> ControlBounds {
        (**self).bounds()
    }
    fn project(&self, u: &mut [f64]) {
        (**self).project(u)
    }
    fn hamiltonian_argmin(&self, t: f64, y: &[f64], p: &[f64]) -> Option<Vec<f64>> {
        (**self).hamiltonian_argmin(t, y, p)
    }
}

/// Running cost `l(t, y, u)` with its gradients.
pub trait RunningCost: Send + Sync {
    fn value(&self, t: f64, y: &[f64], u: &[f64]) -> f64;
    fn grad_y(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]);
    fn grad_u(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]);
}

type ArgminFn = dyn Fn(f64, &[f64], &[f64]) -> Option<Vec<f64>> + Send + Sync;

/// Mayer form of `C(y(T)) + ∫ l dt`: the state gains a last component
/// `y_{m+1}' = l`, `y_{m+1}(0) = 0`, and the objective becomes `C + y_{m+1}(T)`.
pub struct LagrangeAugmented<P, L> {
    pub inner: P,
    pub cost: L,
    argmin: Option<Box<ArgminFn>>,
}

impl<P: ControlProblem, L: RunningCost> LagrangeAugmented<P, L> {
    pub fn new(inner: P, cost: L) -> Self {
        Self {
            inner,
            cost,
            argmin: None,
        }
    }

    /// Closed-form Hamiltonian minimizer on the augmented state and adjoint.
    pub fn with_argmin(
        mut self,
        f: impl Fn(f64, &[f64], &[f64]) -> Option<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.argmin = Some(Box::new(f));
        self
    }
}

struct AugmentedLinearization {
    inner: Box<dyn Linearization>,
    m: usize,
    ly: Vec<f64>,
    lu: Vec<f64>,
}

struct AugmentedSolver {
    inner: Box<dyn ShiftedSolver>,
    m: usize,
    ly: Vec<f64>,
    alpha: f64,
    gamma: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl ShiftedSolver for AugmentedSolver {
    // (αI − γJ_aug) = [[αI − γJ, 0], [−γ l_yᵀ, α]]
    fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let m = self.m;
        self.inner.solve(&b[..m], &mut x[..m])?;
        x[m] = (b[m] + self.gamma * dot(&self.ly, &x[..m])) / self.alpha;
        Ok(())
    }

    fn solve_transpose(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let m = self.m;
        x[m] = b[m] / self.alpha;
        let rhs: Vec<f64> = (0..m).map(|i| b[i] + self.gamma * self.ly[i] * x[m]).collect();
        self.inner.solve_transpose(&rhs, &mut x[..m])
    }
}

impl Linearization for AugmentedLinearization {
    fn apply_y(&self, v: &[f64], out: &mut [f64]) {
        let m = self.m;
        self.inner.apply_y(&v[..m], &mut out[..m]);
        out[m] = dot(&self.ly, &v[..m]);
    }

    fn apply_y_transpose(&self, v: &[f64], out: &mut [f64]) {
        let m = self.m;
        self.inner.apply_y_transpose(&v[..m], &mut out[..m]);
        for i in 0..m {
            out[i] += self.ly[i] * v[m];
        }
        out[m] = 0.0;
    }

    fn apply_u(&self, du: &[f64], out: &mut [f64]) {
        let m = self.m;
        self.inner.apply_u(du, &mut out[..m]);
        out[m] = dot(&self.lu, du);
    }

    fn apply_u_transpose(&self, v: &[f64], out: &mut [f64]) {
        let m = self.m;
        self.inner.apply_u_transpose(&v[..m], out);
        for (k, o) in out.iter_mut().enumerate() {
            *o += self.lu[k] * v[m];
        }
    }

    fn shifted(&self, alpha: f64, gamma: f64) -> Result<Box<dyn ShiftedSolver>> {
        if alpha == 0.0 {
            return Err(PeerError::LinearSolver("zero shift in bordered system".into()));
        }
        Ok(Box::new(AugmentedSolver {
            inner: self.inner.shifted(alpha, gamma)?,
            m: self.m,
            ly: self.ly.clone(),
            alpha,
            gamma,
        }))
    }
}

impl<P: ControlProblem, L: RunningCost> ControlProblem for LagrangeAugmented<P, L> {
    fn state_dim(&self) -> usize {
        self.inner.state_dim() + 1
    }

    fn control_dim(&self) -> usize {
        self.inner.control_dim()
    }

    fn horizon(&self) -> f64 {
        self.inner.horizon()
    }

    fn initial_state(&self) -> Vec<f64> {
        let mut y = self.inner.initial_state();
        y.push(0.0);
        y
    }

    fn rhs(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        let m = self.inner.state_dim();
        self.inner.rhs(t, &y[..m], u, &mut out[..m]);
        out[m] = self.cost.value(t, &y[..m], u);
    }

    fn linearize(&self, t: f64, y: &[f64], u: &[f64]) -> Box<dyn Linearization> {
        let m = self.inner.state_dim();
        let mut ly = vec![0.0; m];
        let mut lu = vec![0.0; self.inner.control_dim()];
        self.cost.grad_y(t, &y[..m], u, &mut ly);
        self.cost.grad_u(t, &y[..m], u, &mut lu);
        Box::new(AugmentedLinearization {
            inner: self.inner.linearize(t, &y[..m], u),
            m,
            ly,
            lu,
        })
    }

    fn objective(&self, y_t: &[f64]) -> f64 {
        let m = self.inner.state_dim();
        self.inner.objective(&y_t[..m]) + y_t[m]
    }

    fn objective_gradient(&self, y_t: &[f64], out: &mut [f64]) {
        let m = self.inner.state_dim();
        self.inner.objective_gradient(&y_t[..m], &mut out[..m]);
        out[m] = 1.0;
    }

    fn bounds(&self) -> ControlBounds {
        self.inner.bounds()
    }

    fn project(&self, u: &mut [f64]) {
        self.inner.project(u)
    }

    fn hamiltonian_argmin(&self, t: f64, y: &[f64], p: &[f64]) -> Option<Vec<f64>> {
        self.argmin.as_ref().and_then(|f| f(t, y, p))
    }
}

/// Running cost given by closures.
pub struct FnRunningCost<V, GY, GU> {
    pub value: V,
    pub grad_y: GY,
    pub grad_u: GU,
}

impl<V, GY, GU> RunningCost for FnRunningCost<V, GY, GU>
where
    V: Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync,
    GY: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync,
    GU: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync,
{
    fn value(&self, t: f64, y: &[f64], u: &[f64]) -> f64 {
        (self.value)(t, y, u)
    }
    fn grad_y(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        (self.grad_y)(t, y, u, out)
    }
    fn grad_u(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        (self.grad_u)(t, y, u, out)
    }
}

/// Dense Jacobians; shifted systems are solved by LU.
#[derive(Debug, Clone)]
pub struct DenseLinearization {
    pub jy: DMatrix<f64>,
    pub ju: DMatrix<f64>,
}

struct DenseShifted {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    lut: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ShiftedSolver for DenseShifted {
    fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let sol = self
            .lu
            .solve(&DVector::from_column_slice(b))
            .ok_or_else(|| PeerError::LinearSolver("singular dense stage matrix".into()))?;
        x.copy_from_slice(sol.as_slice());
        Ok(())
    }

    fn solve_transpose(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        let sol = self
            .lut
            .solve(&DVector::from_column_slice(b))
            .ok_or_else(|| PeerError::LinearSolver("singular dense stage matrix".into()))?;
        x.copy_from_slice(sol.as_slice());
        Ok(())
    }
}

impl Linearization for DenseLinearization {
    fn apply_y(&self, v: &[f64], out: &mut [f64]) {
        let r = &self.jy * DVector::from_column_slice(v);
        out.copy_from_slice(r.as_slice());
    }
    fn apply_y_transpose(&self, v: &[f64], out: &mut [f64]) {
        let r = self.jy.tr_mul(&DVector::from_column_slice(v));
        out.copy_from_slice(r.as_slice());
    }
    fn apply_u(&self, du: &[f64], out: &mut [f64]) {
        let r = &self.ju * DVector::from_column_slice(du);
        out.copy_from_slice(r.as_slice());
    }
    fn apply_u_transpose(&self, v: &[f64], out: &mut [f64]) {
        let r = self.ju.tr_mul(&DVector::from_column_slice(v));
        out.copy_from_slice(r.as_slice());
    }
    fn shifted(&self, alpha: f64, gamma: f64) -> Result<Box<dyn ShiftedSolver>> {
        let m = self.jy.nrows();
        let mat = DMatrix::identity(m, m) * alpha - &self.jy * gamma;
        let lu = mat.clone().lu();
        if !lu.is_invertible() {
            return Err(PeerError::LinearSolver("singular dense stage matrix".into()));
        }
        Ok(Box::new(DenseShifted {
            lu,
            lut: mat.transpose().lu(),
        }))
    }
}

type RhsFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;
type JacFn = dyn Fn(f64, &[f64], &[f64]) -> DMatrix<f64> + Send + Sync;
type CostFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type CostGradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// Small problems described by closures with dense Jacobians.
pub struct DenseProblem {
    pub m: usize,
    pub d: usize,
    pub t_end: f64,
    pub y0: Vec<f64>,
    pub bounds: ControlBounds,
    f: Box<RhsFn>,
    jy: Box<JacFn>,
    ju: Box<JacFn>,
    cost: Box<CostFn>,
    cost_grad: Box<CostGradFn>,
    argmin: Option<Box<ArgminFn>>,
}

impl DenseProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        y0: Vec<f64>,
        d: usize,
        t_end: f64,
        f: impl Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        jy: impl Fn(f64, &[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        ju: impl Fn(f64, &[f64], &[f64]) -> DMatrix<f64> + Send + Sync + 'static,
        cost: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        cost_grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            m: y0.len(),
            d,
            t_end,
            y0,
            bounds: ControlBounds::unbounded(d),
            f: Box::new(f),
            jy: Box::new(jy),
            ju: Box::new(ju),
            cost: Box::new(cost),
            cost_grad: Box::new(cost_grad),
            argmin: None,
        }
    }

    pub fn with_bounds(mut self, bounds: ControlBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn with_argmin(
        mut self,
        f: impl Fn(f64, &[f64], &[f64]) -> Option<Vec<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.argmin = Some(Box::new(f));
        self
    }
}

impl ControlProblem for DenseProblem {
    fn state_dim(&self) -> usize {
        self.m
    }
    fn control_dim(&self) -> usize {
        self.d
    }
    fn horizon(&self) -> f64 {
        self.t_end
    }
    fn initial_state(&self) -> Vec<f64> {
        self.y0.clone()
    }
    fn rhs(&self, t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        (self.f)(t, y, u, out)
    }
    fn linearize(&self, t: f64, y: &[f64], u: &[f64]) -> Box<dyn Linearization> {
        Box::new(DenseLinearization {
            jy: (self.jy)(t, y, u),
            ju: (self.ju)(t, y, u),
        })
    }
    fn objective(&self, y_t: &[f64]) -> f64 {
        (self.cost)(y_t)
    }
    fn objective_gradient(&self, y_t: &[f64], out: &mut [f64]) {
        (self.cost_grad)(y_t, out)
    }
    fn bounds(&self) -> ControlBounds {
        self.bounds.clone()
    }
    fn hamiltonian_argmin(&self, t: f64, y: &[f64], p: &[f64]) -> Option<Vec<f64>> {
        self.argmin.as_ref().and_then(|f| f(t, y, p))
    }
}

/// Time points `0 = t₀ < t₁ < … < t_{N+1} = T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
}

impl Grid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 3 {
            return Err(PeerError::InvalidGrid(
                "need at least two steps (start and end methods)".into(),
            ));
        }
        if points[0] != 0.0 {
            return Err(PeerError::InvalidGrid(format!("grid must start at 0, got {}", points[0])));
        }
        for (n, w) in points.windows(2).enumerate() {
            if !(w[1] > w[0]) || !w[1].is_finite() {
                return Err(PeerError::InvalidGrid(format!(
                    "points must be strictly increasing (t_{} = {}, t_{} = {})",
                    n,
                    w[0],
                    n + 1,
                    w[1]
                )));
            }
        }
        Ok(Self { points })
    }

    /// `steps` equal intervals on `[0, t_end]`.
    pub fn uniform(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(PeerError::InvalidGrid(format!("horizon must be positive, got {t_end}")));
        }
        let mut pts: Vec<f64> = (0..=steps).map(|n| t_end * n as f64 / steps as f64).collect();
        if let Some(last) = pts.last_mut() {
            *last = t_end;
        }
        Self::new(pts)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Number of steps `N + 1`.
    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Index `N` of the last step.
    pub fn last(&self) -> usize {
        self.points.len() - 2
    }

    pub fn t(&self, n: usize) -> f64 {
        self.points[n]
    }

    pub fn h(&self, n: usize) -> f64 {
        self.points[n + 1] - self.points[n]
    }

    /// `σ_n = h_n / h_{n−1}` for `n ≥ 1`.
    pub fn sigma(&self, n: usize) -> f64 {
        self.h(n) / self.h(n - 1)
    }

    pub fn horizon(&self) -> f64 {
        *self.points.last().unwrap()
    }

    pub fn stage_time(&self, n: usize, c: f64) -> f64 {
        self.points[n] + c * self.h(n)
    }

    /// Grid reversed in time, `t'_n = T − t_{N+1−n}`.
    pub fn flipped(&self) -> Self {
        let t_end = self.horizon();
        let mut pts: Vec<f64> = self.points.iter().rev().map(|t| t_end - t).collect();
        pts[0] = 0.0;
        Self { points: pts }
    }
}

/// Step ratios and smoothness indicators of a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMetrics {
    /// `σ_n` for `n = 1..=N`.
    pub sigma: Vec<f64>,
    /// `η_n = (σ_n − 1)/h_n` for `n = 1..=N`.
    pub eta: Vec<f64>,
    pub max_abs_eta: f64,
    pub min_sigma: f64,
    pub max_sigma: f64,
}

pub fn grid_metrics(grid: &Grid) -> GridMetrics {
    let sigma: Vec<f64> = (1..=grid.last()).map(|n| grid.sigma(n)).collect();
    let eta: Vec<f64> = sigma
        .iter()
        .enumerate()
        .map(|(k, s)| (s - 1.0) / grid.h(k + 1))
        .collect();
    GridMetrics {
        max_abs_eta: eta.iter().fold(0.0, |a, x| a.max(x.abs())),
        min_sigma: sigma.iter().copied().fold(f64::INFINITY, f64::min),
        max_sigma: sigma.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        sigma,
        eta,
    }
}

/// The `s` stage vectors of one time slab, stored stage after stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageBlock {
    pub s: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl StageBlock {
    pub fn zeros(s: usize, m: usize) -> Self {
        Self {
            s,
            m,
            data: vec![0.0; s * m],
        }
    }

    /// Every stage equal to `v`.
    pub fn constant(s: usize, v: &[f64]) -> Self {
        let mut data = Vec::with_capacity(s * v.len());
        for _ in 0..s {
            data.extend_from_slice(v);
        }
        Self { s, m: v.len(), data }
    }

    pub fn stage(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn stage_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.m..(i + 1) * self.m]
    }

    /// `Σ_j coef_j · stage_j`.
    pub fn combine(&self, coef: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (j, &cj) in coef.iter().enumerate() {
            if cj != 0.0 {
                for (o, y) in out.iter_mut().zip(self.stage(j)) {
                    *o += cj * y;
                }
            }
        }
        out
    }

    /// `(M ⊗ I) · self` for an `s × s` matrix `M`.
    pub fn transform(&self, mat: &DMatrix<f64>) -> Self {
        let mut out = Self::zeros(mat.nrows(), self.m);
        for i in 0..mat.nrows() {
            let row: Vec<f64> = (0..mat.ncols()).map(|j| mat[(i, j)]).collect();
            out.stage_mut(i).copy_from_slice(&self.combine(&row));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, x| a.max(x.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_identity_problem() -> DenseProblem {
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
    fn box_projection_is_idempotent() {
        let b = ControlBounds::uniform(3, 0.0, 0.12);
        let mut u = vec![-1.0, 0.05, 3.0];
        b.clamp(&mut u);
        let once = u.clone();
        b.clamp(&mut u);
        assert_eq!(u, once);
        assert_eq!(once, vec![0.0, 0.05, 0.12]);
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(vec![0.0, 0.5]).is_err());
        assert!(Grid::new(vec![0.0, 0.5, 0.5, 1.0]).is_err());
        assert!(Grid::new(vec![0.1, 0.5, 1.0]).is_err());
        let g = Grid::uniform(2.0, 8).unwrap();
        assert_eq!(g.steps(), 8);
        assert_eq!(g.last(), 7);
        assert_eq!(g.horizon(), 2.0);
    }

    #[test]
    fn metrics_uniform_and_geometric() {
        let g = Grid::uniform(1.0, 10).unwrap();
        let m = grid_metrics(&g);
        assert!(m.sigma.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(m.max_abs_eta < 1e-9);

        let r: f64 = 1.1;
        let mut pts = vec![0.0];
        let mut h = 0.01;
        for _ in 0..12 {
            pts.push(pts.last().unwrap() + h);
            h *= r;
        }
        let g = Grid::new(pts).unwrap();
        let m = grid_metrics(&g);
        for (k, s) in m.sigma.iter().enumerate() {
            assert!((s - r).abs() < 1e-12);
            assert!((m.eta[k] - (r - 1.0) / g.h(k + 1)).abs() < 1e-9);
        }
    }

    #[test]
    fn augmented_bordered_solves() {
        let inner = DenseProblem::new(
            vec![1.0, 2.0],
            1,
            1.0,
            |_, y, u, out| {
                out[0] = -2.0 * y[0] + y[1];
                out[1] = y[0] - 3.0 * y[1] + u[0];
            },
            |_, _, _| DMatrix::from_row_slice(2, 2, &[-2.0, 1.0, 1.0, -3.0]),
            |_, _, _| DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            |y| y[0],
            |_, g| {
                g[0] = 1.0;
                g[1] = 0.0
            },
        );
        let cost = FnRunningCost {
            value: |_: f64, y: &[f64], u: &[f64]| y[0] * y[1] + u[0] * u[0],
            grad_y: |_: f64, y: &[f64], _: &[f64], g: &mut [f64]| {
                g[0] = y[1];
                g[1] = y[0]
            },
            grad_u: |_: f64, _: &[f64], u: &[f64], g: &mut [f64]| g[0] = 2.0 * u[0],
        };
        let aug = LagrangeAugmented::new(inner, cost);
        let y = [0.3, -0.7, 5.0];
        let lin = aug.linearize(0.0, &y, &[0.4]);
        let solver = lin.shifted(1.5, 0.2).unwrap();
        let b = [1.0, -2.0, 0.5];
        let mut x = [0.0; 3];
        let mut jx = [0.0; 3];
        solver.solve(&b, &mut x).unwrap();
        lin.apply_y(&x, &mut jx);
        for i in 0..3 {
            assert!((1.5 * x[i] - 0.2 * jx[i] - b[i]).abs() < 1e-13);
        }
        solver.solve_transpose(&b, &mut x).unwrap();
        lin.apply_y_transpose(&x, &mut jx);
        for i in 0..3 {
            assert!((1.5 * x[i] - 0.2 * jx[i] - b[i]).abs() < 1e-13);
        }
        let mut gu = [0.0];
        lin.apply_u_transpose(&[1.0, 1.0, 1.0], &mut gu);
        assert!((gu[0] - (1.0 + 0.8)).abs() < 1e-15);
        assert_eq!(aug.state_dim(), 3);
        assert_eq!(aug.initial_state(), vec![1.0, 2.0, 0.0]);
        assert_eq!(aug.objective(&y), 0.3 + 5.0);
    }

    #[test]
    fn stage_block_combination() {
        let mut b = StageBlock::zeros(2, 2);
        b.stage_mut(0).copy_from_slice(&[1.0, 2.0]);
        b.stage_mut(1).copy_from_slice(&[3.0, 4.0]);
        assert_eq!(b.combine(&[0.5, 1.0]), vec![3.5, 5.0]);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(b.transform(&m).data, vec![3.0, 4.0, 1.0, 2.0]);
        let p = scalar_identity_problem();
        assert_eq!(p.state_dim(), 1);
    }
}
