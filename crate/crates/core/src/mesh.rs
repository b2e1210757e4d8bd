//! A-posteriori global-error estimators, balanced mesh densities and
//! equidistributing grids.

use serde::{Deserialize, Serialize};

use crate::error::{PeerError, Result};
use crate::linalg::{evaluation_row, pascal_inverse, vandermonde};
use crate::integrator::TrajectorySolution;
use crate::problem::{grid_metrics, Grid, GridMetrics, StageBlock};
use crate::triplet::PeerTriplet;

/// Weights of the third-difference estimators: `v₁ᵀ = 6e₄ᵀV⁻¹` acting on the
/// current slab and `v₂` acting on the previous slab. The shift to the previous
/// slab is applied in coefficient space before evaluation, `v₂ᵀ = 6e₄ᵀ𝒫⁻¹V⁻¹`,
/// which leaves the leading coefficient unchanged, so `v₂ = v₁`.
pub fn difference_vectors(c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let s = c.len();
    if s == 0 {
        return Err(PeerError::InvalidArgument("empty node vector".into()));
    }
    let v_inv = vandermonde(c, s)
        .try_inverse()
        .ok_or_else(|| PeerError::InvalidArgument("nodes are not distinct".into()))?;
    let scale = (1..s).product::<usize>() as f64;
    let last = v_inv.row(s - 1) * scale;
    let v1: Vec<f64> = last.iter().copied().collect();
    let shifted = (pascal_inverse(s).row(s - 1) * &v_inv) * scale;
    let v2: Vec<f64> = shifted.iter().copied().collect();
    Ok((v1, v2))
}

/// The product `6e₄ᵀV⁻¹𝒫⁻¹` taken literally; it does not annihilate constants
/// and is kept only for comparison.
pub fn literal_v2(c: &[f64]) -> Result<Vec<f64>> {
    let s = c.len();
    let v_inv = vandermonde(c, s)
        .try_inverse()
        .ok_or_else(|| PeerError::InvalidArgument("nodes are not distinct".into()))?;
    let scale = (1..s).product::<usize>() as f64;
    Ok((v_inv.row(s - 1) * pascal_inverse(s) * scale).iter().copied().collect())
}

/// Approximations `h_n³ y‴` and `h_n³ p‴` per slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimate {
    pub delta: f64,
    pub eps_y: Vec<Vec<f64>>,
    pub eps_p: Vec<Vec<f64>>,
}

pub fn estimate_errors(
    triplet: &PeerTriplet,
    grid: &Grid,
    ys: &[StageBlock],
    ps: &[StageBlock],
    delta: f64,
) -> Result<ErrorEstimate> {
    if !(0.0..=1.0).contains(&delta) {
        return Err(PeerError::InvalidArgument(format!("δ must lie in [0, 1], got {delta}")));
    }
    let steps = grid.steps();
    if ys.len() != steps || ps.len() != steps {
        return Err(PeerError::InvalidArgument(format!(
            "expected {steps} state and adjoint blocks, got {} and {}",
            ys.len(),
            ps.len()
        )));
    }
    let (v1, v2) = difference_vectors(&triplet.c)?;
    let q = (triplet.s - 1) as i32;
    let last = grid.last();
    let mut eps_y = Vec::with_capacity(steps);
    eps_y.push(ys[0].combine(&v1));
    for n in 1..=last {
        let sig = grid.sigma(n).powi(q);
        let a = ys[n].combine(&v1);
        let b = ys[n - 1].combine(&v2);
        eps_y.push(a.iter().zip(&b).map(|(x, z)| delta * x + (1.0 - delta) * sig * z).collect());
    }
    let mut eps_p = vec![Vec::new(); steps];
    eps_p[last] = ps[last].combine(&v1);
    for n in (1..=last).rev() {
        let sig = grid.sigma(n).powi(q);
        let a = ps[n].combine(&v1);
        let b = ps[n - 1].combine(&v2);
        eps_p[n - 1] = a.iter().zip(&b).map(|(x, z)| (1.0 - delta) * x + delta * sig * z).collect();
    }
    Ok(ErrorEstimate { delta, eps_y, eps_p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityTolerances {
    pub atol_y: f64,
    pub rtol_y: f64,
    pub atol_p: f64,
    pub rtol_p: f64,
}

impl Default for DensityTolerances {
    fn default() -> Self {
        Self {
            atol_y: 1e-8,
            rtol_y: 1.0,
            atol_p: 1e-8,
            rtol_p: 1.0,
        }
    }
}

/// How the state and adjoint measures were combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    /// `θ_n = (θ^Y_n, ωθ^P_n)` with `ω = ‖θ^Y‖∞/‖θ^P‖∞`.
    Balanced,
    /// The adjoint measure is at round-off level; only `θ^Y` is used.
    StateOnly,
    /// The state measure is at round-off level; only `θ^P` is used.
    AdjointOnly,
    /// Both measures vanish; the density is uniform.
    Uniform,
}

/// Piecewise constant density `ψ(t) = values[n]` on `[breaks[n], breaks[n+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshDensity {
    pub breaks: Vec<f64>,
    pub values: Vec<f64>,
    pub theta_y: Vec<f64>,
    pub theta_p: Vec<f64>,
    pub omega: f64,
    pub balance: Balance,
}

/// Relative size below which a measure counts as round-off.
const NEGLIGIBLE: f64 = 1e-12;
/// Floor of the density relative to its maximum.
const DENSITY_FLOOR: f64 = 1e-12;

fn boundary_constant(triplet: &PeerTriplet, n: usize, last: usize, adjoint: bool) -> f64 {
    let e = &triplet.error_constants;
    match (n == 0, n == last, adjoint) {
        (true, _, false) => e.err3_start,
        (true, _, true) => e.err3_start_adj,
        (_, true, false) => e.err3_end,
        (_, true, true) => e.err3_end_adj,
        (_, _, false) => e.err3,
        (_, _, true) => e.err3_adj,
    }
}

pub fn weighted_density(
    estimate: &ErrorEstimate,
    triplet: &PeerTriplet,
    grid: &Grid,
    ys: &[StageBlock],
    ps: &[StageBlock],
    tol: &DensityTolerances,
) -> Result<MeshDensity> {
    let positive = [tol.atol_y, tol.rtol_y, tol.atol_p, tol.rtol_p];
    if positive.iter().any(|&v| !(v >= 0.0)) || tol.atol_y <= 0.0 || tol.atol_p <= 0.0 {
        return Err(PeerError::InvalidArgument(
            "absolute tolerances must be positive and relative ones nonnegative".into(),
        ));
    }
    let delta = estimate.delta;
    let last = grid.last();
    let e1 = evaluation_row(triplet.v_inv(), 0.0);
    let y_at: Vec<Vec<f64>> = ys.iter().map(|b| b.combine(&e1)).collect();
    let p_at: Vec<Vec<f64>> = ps.iter().map(|b| b.combine(&e1)).collect();
    let blend = |a: &[f64], b: &[f64], wa: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(x, z)| wa * x.abs() + (1.0 - wa) * z.abs()).collect()
    };
    let measure = |eps: &[f64], hat: &[f64], atol: f64, rtol: f64| -> f64 {
        eps.iter()
            .zip(hat)
            .fold(0.0f64, |m, (e, y)| m.max(e.abs() / (atol + rtol * y)))
    };
    let mut theta_y = Vec::with_capacity(last + 1);
    let mut theta_p = Vec::with_capacity(last + 1);
    for n in 0..=last {
        let y_hat = if n == 0 {
            blend(&y_at[0], &y_at[0], 1.0)
        } else {
            blend(&y_at[n], &y_at[n - 1], delta)
        };
        let p_hat = if n == last {
            blend(&p_at[last], &p_at[last], 1.0)
        } else {
            blend(&p_at[n], &p_at[n + 1], delta)
        };
        theta_y.push(
            boundary_constant(triplet, n, last, false)
                * measure(&estimate.eps_y[n], &y_hat, tol.atol_y, tol.rtol_y),
        );
        theta_p.push(
            boundary_constant(triplet, n, last, true)
                * measure(&estimate.eps_p[n], &p_hat, tol.atol_p, tol.rtol_p),
        );
    }
    let max_y = theta_y.iter().fold(0.0f64, |a, &b| a.max(b));
    let max_p = theta_p.iter().fold(0.0f64, |a, &b| a.max(b));
    let (omega, wy, wp, balance) = if max_y == 0.0 && max_p == 0.0 {
        (0.0, 0.0, 0.0, Balance::Uniform)
    } else if max_p <= NEGLIGIBLE * max_y {
        (0.0, 1.0, 0.0, Balance::StateOnly)
    } else if max_y <= NEGLIGIBLE * max_p {
        (0.0, 0.0, 1.0, Balance::AdjointOnly)
    } else {
        let w = max_y / max_p;
        (w, 1.0, w, Balance::Balanced)
    };
    let mut values: Vec<f64> = (0..=last)
        .map(|n| {
            let a = wy * theta_y[n];
            let b = wp * theta_p[n];
            ((a * a + b * b).sqrt() / grid.h(n).powi(3)).cbrt()
        })
        .collect();
    let peak = values.iter().fold(0.0f64, |a, &b| a.max(b));
    if balance == Balance::Uniform || peak == 0.0 {
        values.iter_mut().for_each(|v| *v = 1.0);
    } else {
        values.iter_mut().for_each(|v| *v = v.max(DENSITY_FLOOR * peak));
    }
    Ok(MeshDensity {
        breaks: grid.points().to_vec(),
        values,
        theta_y,
        theta_p,
        omega,
        balance,
    })
}

/// A positive density on `[0, T]` that can be integrated over subintervals.
pub trait Density {
    fn horizon(&self) -> f64;
    fn integral(&self, a: f64, b: f64) -> f64;
}

impl MeshDensity {
    /// Constant density on `[0, t_end]`.
    pub fn uniform(t_end: f64) -> Self {
        Self {
            breaks: vec![0.0, t_end],
            values: vec![1.0],
            theta_y: Vec::new(),
            theta_p: Vec::new(),
            omega: 0.0,
            balance: Balance::Uniform,
        }
    }

    pub fn from_values(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breaks.len() != values.len() + 1 || values.is_empty() {
            return Err(PeerError::InvalidArgument("need one value per interval".into()));
        }
        if values.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(PeerError::InvalidArgument("density must be positive".into()));
        }
        if breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(PeerError::InvalidArgument("breaks must increase".into()));
        }
        Ok(Self {
            breaks,
            values,
            theta_y: Vec::new(),
            theta_p: Vec::new(),
            omega: 0.0,
            balance: Balance::Balanced,
        })
    }

    fn cumulative(&self, t: f64) -> f64 {
        let k = match self.breaks.partition_point(|&b| b <= t) {
            0 => return 0.0,
            k => k - 1,
        };
        let k = k.min(self.values.len() - 1);
        let full: f64 = (0..k)
            .map(|j| self.values[j] * (self.breaks[j + 1] - self.breaks[j]))
            .sum();
        full + self.values[k] * (t.min(self.breaks[k + 1]) - self.breaks[k])
    }

    /// Three passes of `(1/4, 1/2, 1/4)` averaging over neighbouring intervals.
    pub fn smoothed(&self) -> Self {
        let mut v = self.values.clone();
        let n = v.len();
        for _ in 0..3 {
            if n < 2 {
                break;
            }
            let old = v.clone();
            for k in 0..n {
                let left = old[k.saturating_sub(1)];
                let right = old[(k + 1).min(n - 1)];
                v[k] = 0.25 * left + 0.5 * old[k] + 0.25 * right;
            }
        }
        Self {
            values: v,
            ..self.clone()
        }
    }
}

impl Density for MeshDensity {
    fn horizon(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        self.cumulative(b) - self.cumulative(a)
    }
}

/// Density given by a function, integrated by composite Gauss-Legendre rules.
pub struct FnDensity<F> {
    pub f: F,
    pub t_end: f64,
}

const GAUSS5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

impl<F: Fn(f64) -> f64> Density for FnDensity<F> {
    fn horizon(&self) -> f64 {
        self.t_end
    }

    fn integral(&self, a: f64, b: f64) -> f64 {
        let pieces = ((256.0 * (b - a) / self.t_end).ceil() as usize).max(1);
        let w = (b - a) / pieces as f64;
        (0..pieces)
            .map(|k| {
                let mid = a + (k as f64 + 0.5) * w;
                GAUSS5
                    .iter()
                    .map(|&(x, g)| g * (self.f)(mid + 0.5 * w * x))
                    .sum::<f64>()
                    * 0.5
                    * w
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquidistributionOptions {
    pub max_passes: usize,
    /// Fixed-point tolerance relative to the horizon.
    pub fixed_point_tol: f64,
    pub eta_max: f64,
    /// Admissible step ratios; `None` leaves them unconstrained.
    pub sigma_range: Option<(f64, f64)>,
    /// Each round applies three averaging passes.
    pub max_smoothing_rounds: usize,
}

impl Default for EquidistributionOptions {
    fn default() -> Self {
        Self {
            max_passes: 30,
            fixed_point_tol: 1e-10,
            eta_max: 15.0,
            sigma_range: None,
            max_smoothing_rounds: 1000,
        }
    }
}

/// Grid `t'_n = x(n/(N+1))` solving `(ψ(x)x_ξ)_ξ = 0` by de Boor's fixed-point
/// iteration: the density is averaged over the cells of the current grid and
/// its cumulative integral is inverted. Returns the grid and the number of passes.
pub fn mesh_from_density(density: &dyn Density, steps: usize, opts: &EquidistributionOptions) -> Result<(Grid, usize)> {
    if steps < 2 {
        return Err(PeerError::InvalidArgument("need at least two steps".into()));
    }
    let t_end = density.horizon();
    let mut x: Vec<f64> = (0..=steps).map(|j| t_end * j as f64 / steps as f64).collect();
    let mut passes = 0;
    // relaxation, halved whenever a pass fails to shrink the update; this breaks
    // the two-cycles that coarse grids over jumps in ψ can fall into
    let mut omega: f64 = 1.0;
    let mut last_change = f64::INFINITY;
    for _ in 0..opts.max_passes {
        passes += 1;
        let cells: Vec<f64> = x.windows(2).map(|w| density.integral(w[0], w[1])).collect();
        if cells.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
            return Err(PeerError::InvalidArgument("density must be positive and integrable".into()));
        }
        let mut cum = Vec::with_capacity(steps + 1);
        cum.push(0.0);
        for c in &cells {
            cum.push(cum.last().unwrap() + c);
        }
        let total = cum[steps];
        let mut next = x.clone();
        let mut k = 0;
        for (j, xj) in next.iter_mut().enumerate().take(steps).skip(1) {
            let target = total * j as f64 / steps as f64;
            while k + 1 < steps && cum[k + 1] <= target {
                k += 1;
            }
            *xj = x[k] + (target - cum[k]) / cells[k] * (x[k + 1] - x[k]);
        }
        next[steps] = t_end;
        let change = x.iter().zip(&next).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        if change <= opts.fixed_point_tol * t_end {
            x = next;
            break;
        }
        if change >= last_change && omega > 1.0 / 64.0 {
            omega *= 0.5;
        }
        last_change = change;
        for (xi, ni) in x.iter_mut().zip(&next) {
            *xi += omega * (ni - *xi);
        }
    }
    Ok((Grid::new(invert_cumulative(density, &x)?)?, passes))
}

/// Places every interior point where the exact cumulative integral of `ψ` hits
/// its target, searching the cell of `x` that brackets it. The passes above only
/// locate the cells; near jumps of `ψ` their linear update stagnates like
/// regula falsi, so the final position comes from an Illinois solve.
fn invert_cumulative(density: &dyn Density, x: &[f64]) -> Result<Vec<f64>> {
    let steps = x.len() - 1;
    let cells: Vec<f64> = x.windows(2).map(|w| density.integral(w[0], w[1])).collect();
    if cells.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(PeerError::InvalidArgument("density must be positive and integrable".into()));
    }
    let mut cum = vec![0.0];
    for c in &cells {
        cum.push(cum.last().unwrap() + c);
    }
    let total = cum[steps];
    let tol = 4.0 * f64::EPSILON * x[steps].abs();
    let mut out = x.to_vec();
    let mut k = 0;
    for j in 1..steps {
        let target = total * j as f64 / steps as f64;
        while k + 1 < steps && cum[k + 1] <= target {
            k += 1;
        }
        let rest = target - cum[k];
        let (mut a, mut b) = (x[k], x[k + 1]);
        let (mut fa, mut fb) = (-rest, cells[k] - rest);
        let mut side = 0i8;
        let mut c = a;
        for _ in 0..200 {
            if fa == 0.0 || fb == 0.0 || b - a <= tol {
                break;
            }
            c = (a * fb - b * fa) / (fb - fa);
            if !(c > a && c < b) {
                c = 0.5 * (a + b);
            }
            let fc = density.integral(x[k], c) - rest;
            if fc == 0.0 {
                break;
            }
            if (fc < 0.0) == (fa < 0.0) {
                a = c;
                fa = fc;
                if side == -1 {
                    fb *= 0.5;
                }
                side = -1;
            } else {
                b = c;
                fb = fc;
                if side == 1 {
                    fa *= 0.5;
                }
                side = 1;
            }
        }
        out[j] = if fa == 0.0 {
            a
        } else if fb == 0.0 {
            b
        } else {
            c
        };
    }
    Ok(out)
}

/// Largest relative deviation of the slab integrals `∫ψ` from their mean.
pub fn equidistribution_deviation(density: &dyn Density, grid: &Grid) -> f64 {
    let cells: Vec<f64> = grid.points().windows(2).map(|w| density.integral(w[0], w[1])).collect();
    let mean = cells.iter().sum::<f64>() / cells.len() as f64;
    cells.iter().fold(0.0f64, |m, c| m.max((c - mean).abs() / mean))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintViolation {
    pub min_sigma: f64,
    pub max_sigma: f64,
    pub max_abs_eta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equidistribution {
    pub grid: Grid,
    pub metrics: GridMetrics,
    /// The density after smoothing; equal to the input when no smoothing was needed.
    pub density: MeshDensity,
    pub passes: usize,
    pub smoothing_rounds: usize,
    /// Deviation of slab integrals of the unsmoothed density on the unsmoothed grid.
    pub deviation_unsmoothed: f64,
    /// Deviation of slab integrals of the unsmoothed density on the returned grid.
    pub deviation: f64,
    /// Set when the constraints could not be met; the grid is the last attempt.
    pub violation: Option<ConstraintViolation>,
}

fn satisfies(m: &GridMetrics, opts: &EquidistributionOptions) -> bool {
    let sigma_ok = match opts.sigma_range {
        Some((lo, hi)) => m.sigma.iter().all(|&s| s >= lo && s <= hi),
        None => true,
    };
    sigma_ok && m.max_abs_eta <= opts.eta_max
}

/// Equidistributes a piecewise constant density onto `steps` intervals,
/// smoothing it until the step-ratio and `|η|` constraints hold.
pub fn equidistribute(density: &MeshDensity, steps: usize, opts: &EquidistributionOptions) -> Result<Equidistribution> {
    if steps < 5 {
        return Err(PeerError::InvalidArgument(format!("need at least 5 steps, got {steps}")));
    }
    let (grid, passes) = mesh_from_density(density, steps, opts)?;
    let deviation_unsmoothed = equidistribution_deviation(density, &grid);
    let mut current = density.clone();
    let mut grid = grid;
    let mut passes = passes;
    let mut rounds = 0;
    loop {
        let metrics = grid_metrics(&grid);
        let ok = satisfies(&metrics, opts);
        if ok || rounds >= opts.max_smoothing_rounds {
            let violation = (!ok).then(|| ConstraintViolation {
                min_sigma: metrics.min_sigma,
                max_sigma: metrics.max_sigma,
                max_abs_eta: metrics.max_abs_eta,
            });
            return Ok(Equidistribution {
                deviation: equidistribution_deviation(density, &grid),
                grid,
                metrics,
                density: current,
                passes,
                smoothing_rounds: rounds,
                deviation_unsmoothed,
                violation,
            });
        }
        current = current.smoothed();
        rounds += 1;
        let (g, p) = mesh_from_density(&current, steps, opts)?;
        grid = g;
        passes = p;
    }
}

/// Comparison of `η'_n` with `−(ln ψ)'(t'_n)` on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaReport {
    pub eta: Vec<f64>,
    pub predicted: Vec<f64>,
    pub max_deviation: f64,
}

pub fn eta_consistency_check(grid: &Grid, psi: impl Fn(f64) -> f64) -> EtaReport {
    let metrics = grid_metrics(grid);
    let eps = 1e-6 * grid.horizon();
    let predicted: Vec<f64> = (1..=grid.last())
        .map(|n| {
            let t = grid.t(n);
            -((psi(t + eps)).ln() - (psi(t - eps)).ln()) / (2.0 * eps)
        })
        .collect();
    let max_deviation = metrics
        .eta
        .iter()
        .zip(&predicted)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    EtaReport {
        eta: metrics.eta,
        predicted,
        max_deviation,
    }
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Maximal `η` deviations for grids with `N + 1 = steps` equidistributing `ψ`,
/// and the fitted decay slope in `N`.
pub fn eta_refinement_study(
    psi: impl Fn(f64) -> f64 + Copy,
    t_end: f64,
    steps: &[usize],
) -> Result<(Vec<f64>, f64)> {
    let opts = EquidistributionOptions {
        max_passes: 200,
        fixed_point_tol: 1e-15,
        ..Default::default()
    };
    let density = FnDensity { f: psi, t_end };
    let mut dev = Vec::with_capacity(steps.len());
    for &s in steps {
        let (grid, _) = mesh_from_density(&density, s, &opts)?;
        dev.push(eta_consistency_check(&grid, psi).max_deviation);
    }
    let ns: Vec<f64> = steps.iter().map(|&s| s as f64).collect();
    let slope = loglog_slope(&ns, &dev);
    Ok((dev, slope))
}

/// Moves the nearest interior grid point onto each target time, keeping the
/// number of steps. Targets outside `(0, T)` are ignored; each grid point moves
/// at most once, and ordering is preserved.
pub fn snap_to_points(grid: &Grid, targets: &[f64]) -> Result<Grid> {
    let mut pts = grid.points().to_vec();
    let last = pts.len() - 1;
    let mut moved = vec![false; pts.len()];
    let mut sorted: Vec<f64> = targets
        .iter()
        .copied()
        .filter(|&t| t > 0.0 && t < pts[last])
        .collect();
    sorted.sort_by(f64::total_cmp);
    for t in sorted {
        let mut order: Vec<usize> = (1..last).collect();
        order.sort_by(|&a, &b| (pts[a] - t).abs().total_cmp(&(pts[b] - t).abs()));
        let k = order
            .into_iter()
            .find(|&k| !moved[k] && pts[k - 1] < t && t < pts[k + 1])
            .or_else(|| pts.iter().position(|&x| x == t))
            .ok_or_else(|| {
                PeerError::InvalidArgument(format!("cannot place a grid point at {t} without reordering"))
            })?;
        pts[k] = t;
        moved[k] = true;
    }
    Grid::new(pts)
}

/// Settings of one solve → estimate → equidistribute step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptOptions {
    /// Blend between the two estimator variants, in `[0, 1]`.
    pub delta: f64,
    pub tolerances: DensityTolerances,
    /// When `sigma_range` is unset, the triplet's admissible ratios are used.
    pub equidistribution: EquidistributionOptions,
    /// Number of steps `N + 1` of the new grid; defaults to the current one.
    pub steps: Option<usize>,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self {
            delta: 0.0,
            tolerances: DensityTolerances::default(),
            equidistribution: EquidistributionOptions::default(),
            steps: None,
        }
    }
}

/// Builds the balanced density from a state and adjoint solution and
/// equidistributes it; afterwards the grid points nearest to `breakpoints`
/// are moved onto them.
pub fn adapt_grid(
    triplet: &PeerTriplet,
    sol: &TrajectorySolution,
    opts: &AdaptOptions,
    breakpoints: &[f64],
) -> Result<Equidistribution> {
    if !sol.has_adjoint() {
        return Err(PeerError::InvalidArgument("adaptation needs the adjoint blocks".into()));
    }
    let grid = &sol.grid;
    let estimate = estimate_errors(triplet, grid, &sol.y, &sol.p, opts.delta)?;
    let density = weighted_density(&estimate, triplet, grid, &sol.y, &sol.p, &opts.tolerances)?;
    let mut eq_opts = opts.equidistribution;
    if eq_opts.sigma_range.is_none() {
        eq_opts.sigma_range = Some(triplet.sigma_range);
    }
    let mut result = equidistribute(&density, opts.steps.unwrap_or(grid.steps()), &eq_opts)?;
    if !breakpoints.is_empty() {
        result.grid = snap_to_points(&result.grid, breakpoints)?;
        result.metrics = grid_metrics(&result.grid);
        result.deviation = equidistribution_deviation(&density, &result.grid);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet::build_triplet;

    #[test]
    fn v1_for_equidistant_nodes() {
        let (v1, v2) = difference_vectors(&[0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]).unwrap();
        let expect = [-27.0, 81.0, -81.0, 27.0];
        for k in 0..4 {
            assert!((v1[k] - expect[k]).abs() < 1e-10);
            assert!((v2[k] - v1[k]).abs() < 1e-10);
        }
        assert!(difference_vectors(&[0.0, 0.5, 0.5, 1.0]).is_err());
    }

    #[test]
    fn estimator_is_exact_on_cubics() {
        let t = build_triplet("AP4o33vsi").unwrap();
        let g = Grid::new(vec![0.0, 0.1, 0.18, 0.3, 0.5, 0.62, 1.0]).unwrap();
        let sample = |f: &dyn Fn(f64) -> f64| -> Vec<StageBlock> {
            (0..g.steps())
                .map(|n| {
                    let mut b = StageBlock::zeros(4, 1);
                    for i in 0..4 {
                        b.stage_mut(i)[0] = f(g.stage_time(n, t.c[i]));
                    }
                    b
                })
                .collect()
        };
        let cubic = sample(&|x| x * x * x - x);
        let quad = sample(&|x| 2.0 * x * x - x + 3.0);
        for delta in [0.0, 0.3, 1.0] {
            let e = estimate_errors(&t, &g, &cubic, &cubic, delta).unwrap();
            for n in 0..g.steps() {
                let want = 6.0 * g.h(n).powi(3);
                assert!((e.eps_y[n][0] - want).abs() < 1e-10 * want.max(1e-3), "{n}");
            }
            let z = estimate_errors(&t, &g, &quad, &quad, delta).unwrap();
            assert!(z.eps_y.iter().chain(&z.eps_p).all(|v| v[0].abs() < 1e-11));
        }
    }

    #[test]
    fn constant_density_gives_uniform_grid() {
        let d = MeshDensity::uniform(2.0);
        let r = equidistribute(&d, 16, &EquidistributionOptions::default()).unwrap();
        for (n, &t) in r.grid.points().iter().enumerate() {
            assert!((t - 2.0 * n as f64 / 16.0).abs() < 1e-14);
        }
        assert!(r.violation.is_none());
    }

    #[test]
    fn exponential_density_matches_closed_form() {
        let density = FnDensity {
            f: |t: f64| (-t).exp(),
            t_end: 1.0,
        };
        let (g, passes) = mesh_from_density(&density, 20, &EquidistributionOptions::default()).unwrap();
        assert!(passes <= 30);
        let a = 1.0 - (-1.0f64).exp();
        for (n, &t) in g.points().iter().enumerate() {
            let xi = n as f64 / 20.0;
            assert!((t + (1.0 - xi * a).ln()).abs() < 1e-8);
        }
    }

    #[test]
    fn piecewise_density_is_equidistributed() {
        let d = MeshDensity::from_values(vec![0.0, 0.2, 0.5, 0.7, 1.0], vec![3.0, 1.0, 0.5, 2.0]).unwrap();
        let opts = EquidistributionOptions {
            eta_max: f64::INFINITY,
            ..Default::default()
        };
        let r = equidistribute(&d, 12, &opts).unwrap();
        assert!(r.deviation_unsmoothed < 1e-8);
        assert_eq!(r.smoothing_rounds, 0);
    }

    #[test]
    fn smoothing_enforces_constraints() {
        let d = MeshDensity::from_values(vec![0.0, 0.5, 1.0], vec![50.0, 1.0]).unwrap();
        let opts = EquidistributionOptions {
            sigma_range: Some((0.7, 1.4)),
            ..Default::default()
        };
        let r = equidistribute(&d, 16, &opts).unwrap();
        assert!(r.violation.is_none(), "{:?}", r.metrics);
        assert!(r.smoothing_rounds > 0);
        assert!(r.metrics.min_sigma >= 0.7 && r.metrics.max_sigma <= 1.4);
    }

    #[test]
    fn snapping_moves_nearest_points() {
        let g = Grid::uniform(1.0, 10).unwrap();
        let s = snap_to_points(&g, &[0.33, 0.36, 2.0, 0.0]).unwrap();
        assert_eq!(s.steps(), 10);
        assert_eq!(s.t(3), 0.33);
        assert_eq!(s.t(4), 0.36);
        assert_eq!(s.t(5), 0.5);
        assert!(snap_to_points(&Grid::uniform(1.0, 2).unwrap(), &[0.3, 0.4]).is_err());
    }

    #[test]
    fn eta_follows_log_derivative() {
        let rep = eta_consistency_check(&Grid::uniform(1.0, 10).unwrap(), |_| 2.0);
        assert!(rep.max_deviation < 1e-12);
        let (dev, slope) = eta_refinement_study(|t| (-t).exp(), 1.0, &[32, 64, 128]).unwrap();
        assert!(dev.iter().all(|&d| d < 1e-2), "{dev:?}");
        assert!(slope < -1.5, "{slope}");
    }
}
