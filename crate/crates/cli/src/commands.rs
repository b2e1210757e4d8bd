//! The five verbs. Each returns plain data; writing artifacts is separate so
//! the acceptance suite can inspect results directly.

use std::sync::Arc;

use peer_bench::{
    heat_errors, pca_observables, HeatErrors, HeatProblem, PcaBenchmark, PcaObservation, PcaProblem,
};
use peer_core::integrator::{constant_controls, forward_sweep};
use peer_core::mesh::{adapt_grid, loglog_slope, Equidistribution};
use peer_core::optimize::{optimize, OptimizationReport, TraceRow};
use peer_core::problem::{grid_metrics, GridMetrics};
use peer_core::triplet::ErrorConstants;
use peer_core::verify::{
    contraction_factors, eigenvalue_margin, error_constants, product_bound, stability_scan, verify_order_conditions,
    verify_structure, zero_stability_norm, ContractionFactors, ScanResult, SectorSampling, StructureReport,
    STRUCTURE_SIGMAS,
};
use peer_core::{Boundary, ControlProblem, GridClass, Grid, PeerError, PeerTriplet, StageBlock};
use serde::{Deserialize, Serialize};

use crate::config::{Artifact, GridSpec, InitialControl, ProblemKind, RunConfig};
use crate::output::{num, ArtifactWriter, Table};
use crate::CliError;

fn solver_error(e: PeerError) -> CliError {
    CliError::Solver(e.to_string())
}

// ---------------------------------------------------------------- verify

/// Tolerance of the order-condition and structure residuals.
pub const ORDER_TOL: f64 = 1e-10;
/// Samples of the zero-stability interval.
pub const ZERO_STABILITY_SAMPLES: usize = 41;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Human-readable acceptance rule.
    pub rule: String,
    pub passed: bool,
}

fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Check {
    Check {
        name: name.into(),
        value,
        rule: format!("<= {limit:e}"),
        passed: value <= limit,
    }
}

fn holds(name: impl Into<String>, flag: bool) -> Check {
    Check {
        name: name.into(),
        value: if flag { 1.0 } else { 0.0 },
        rule: "true".into(),
        passed: flag,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub start: ContractionFactors,
    pub end: ContractionFactors,
    pub margin_start: f64,
    pub margin_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub triplet: String,
    pub grid_class: GridClass,
    pub alpha_deg: f64,
    pub sigma_range: (f64, f64),
    pub error_constants: ErrorConstants,
    pub max_zero_stability: f64,
    pub product_bound: f64,
    pub stability: ScanResult,
    pub boundary: BoundaryReport,
    pub structure: StructureReport,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl VerifyReport {
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }
}

/// Runs every coefficient check of one triplet.
pub fn run_verify(t: &PeerTriplet, seed: u64) -> Result<VerifyReport, CliError> {
    let mut checks = Vec::new();
    let mut worst = [0.0f64; 5];
    for sigma in STRUCTURE_SIGMAS {
        let r = verify_order_conditions(t, sigma).map_err(solver_error)?;
        for (w, v) in worst.iter_mut().zip([r.forward, r.adjoint, r.start, r.end, r.rank_one]) {
            *w = w.max(v);
        }
    }
    for (name, v) in ["forward", "adjoint", "start", "end", "rank_one"].iter().zip(worst) {
        checks.push(at_most(format!("order_conditions.{name}"), v, ORDER_TOL));
    }

    let s = verify_structure(t).map_err(solver_error)?;
    checks.push(at_most("structure.q33", s.q33_deviation, ORDER_TOL));
    checks.push(at_most("structure.eigenvector", s.eigenvector_residual, ORDER_TOL));
    checks.push(holds("structure.lsrk", s.lsrk));
    checks.push(holds("structure.rank_a0", s.rank_a0 == 1));
    checks.push(holds("structure.rank_an", s.rank_an == 1));
    checks.push(at_most("structure.phi0", s.phi0_constraint, ORDER_TOL));
    checks.push(at_most("structure.phin", s.phin_constraint, ORDER_TOL));
    checks.push(holds("structure.triangular_approximations", s.tilde_structure));
    if t.flip_symmetric {
        checks.push(holds("structure.adjoint_lsrk", s.adjoint_lsrk));
        checks.push(at_most("structure.flip", s.flip.max(), 1e-12));
    }

    let (lo, hi) = t.sigma_range;
    let mut max_zero = 0.0f64;
    for k in 0..ZERO_STABILITY_SAMPLES {
        let sigma = lo + (hi - lo) * k as f64 / (ZERO_STABILITY_SAMPLES - 1) as f64;
        max_zero = max_zero.max(zero_stability_norm(t, sigma).map_err(solver_error)?.value());
    }
    checks.push(at_most("zero_stability", max_zero, 1.0 + ORDER_TOL));
    let bound = product_bound(t, seed, 50, 100).map_err(solver_error)?;
    checks.push(at_most("zero_stability.products", bound, 1e2));

    let stability = stability_scan(t, t.alpha_deg, &SectorSampling::STABILITY).map_err(solver_error)?;
    checks.push(holds(format!("stability.alpha_{:.2}", t.alpha_deg), stability.passed));

    let start = contraction_factors(t, Boundary::Start, t.alpha_deg, &SectorSampling::CONTRACTION);
    let end = contraction_factors(t, Boundary::End, t.alpha_deg, &SectorSampling::CONTRACTION);
    let margin_start = eigenvalue_margin(t, Boundary::Start);
    let margin_end = eigenvalue_margin(t, Boundary::End);
    checks.push(at_most("boundary.start.contraction", start.rho_sector, 1.0 - 1e-3));
    checks.push(at_most("boundary.end.contraction", end.rho_sector, 1.0 - 1e-3));
    checks.push(holds("boundary.start.margin", margin_start > 0.0));
    checks.push(holds("boundary.end.margin", margin_end > 0.0));

    let passed = checks.iter().all(|c| c.passed);
    Ok(VerifyReport {
        triplet: t.name.clone(),
        grid_class: t.grid_class,
        alpha_deg: t.alpha_deg,
        sigma_range: t.sigma_range,
        error_constants: error_constants(t).map_err(solver_error)?,
        max_zero_stability: max_zero,
        product_bound: bound,
        stability,
        boundary: BoundaryReport {
            start,
            end,
            margin_start,
            margin_end,
        },
        structure: s,
        checks,
        passed,
    })
}

// ---------------------------------------------------------- benchmarks

/// A configured benchmark problem.
pub enum Bench {
    Heat(HeatProblem),
    Pca { bench: Box<PcaBenchmark>, problem: Arc<PcaProblem> },
}

impl Bench {
    pub fn build(cfg: &RunConfig, triplet: &PeerTriplet) -> Result<Self, CliError> {
        match cfg.problem {
            ProblemKind::Heat1d => Ok(Bench::Heat(HeatProblem::new(cfg.heat_m()).map_err(solver_error)?)),
            ProblemKind::Pca2d => {
                let bench = PcaBenchmark::new(cfg.pca_config(), triplet, &cfg.solver).map_err(solver_error)?;
                let problem = Arc::new(bench.problem());
                Ok(Bench::Pca {
                    bench: Box::new(bench),
                    problem,
                })
            }
        }
    }

    pub fn problem(&self) -> &dyn ControlProblem {
        match self {
            Bench::Heat(p) => p,
            Bench::Pca { problem, .. } => problem.as_ref(),
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match self {
            Bench::Heat(_) => Vec::new(),
            Bench::Pca { bench, .. } => bench.config.protocol.breakpoints(),
        }
    }

    fn initial(&self, cfg: &RunConfig, triplet: &PeerTriplet, grid: &Grid) -> Vec<StageBlock> {
        match (self, cfg.initial) {
            (Bench::Pca { bench, .. }, InitialControl::Standard) => bench.standard_controls(triplet, grid),
            _ => constant_controls(grid, triplet.s, &vec![0.0; self.problem().control_dim()]),
        }
    }

    fn time_unit(&self) -> &'static str {
        match self {
            Bench::Heat(_) => "1",
            Bench::Pca { .. } => "day",
        }
    }
}

// ----------------------------------------------------------- convergence

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// Number of steps `N + 1`.
    pub steps: usize,
    /// `uniform`, `adapt` or `file`.
    pub grid: String,
    pub errors: Option<HeatErrors>,
    pub iterations: usize,
    pub converged: bool,
    pub metrics: Option<GridMetrics>,
    /// Solver failure that aborted this row.
    pub failure: Option<String>,
}

/// Least-squares orders per grid kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedOrders {
    pub grid: String,
    pub control: f64,
    pub state: f64,
    pub adjoint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceResult {
    pub rows: Vec<ConvergenceRow>,
    pub fitted: Vec<FittedOrders>,
}

impl ConvergenceResult {
    pub fn row(&self, grid: &str, steps: usize) -> Option<&ConvergenceRow> {
        self.rows.iter().find(|r| r.grid == grid && r.steps == steps)
    }

    pub fn fitted(&self, grid: &str) -> Option<&FittedOrders> {
        self.fitted.iter().find(|f| f.grid == grid)
    }
}

fn heat_row(
    problem: &HeatProblem,
    triplet: &PeerTriplet,
    grid: &Grid,
    cfg: &RunConfig,
    kind: &str,
) -> (ConvergenceRow, Option<OptimizationReport>) {
    let steps = grid.steps();
    let initial = constant_controls(grid, triplet.s, &[0.0]);
    match optimize(problem, triplet, grid, &initial, &cfg.optimizer, |_| {}) {
        Ok(report) => {
            let errors = heat_errors(&problem.exact, triplet, &report.controls, &report.solution);
            let row = ConvergenceRow {
                steps,
                grid: kind.into(),
                errors: Some(errors),
                iterations: report.iterations,
                converged: report.converged,
                metrics: Some(grid_metrics(grid)),
                failure: None,
            };
            (row, Some(report))
        }
        Err(e) => (failed_row(steps, kind, e.to_string()), None),
    }
}

fn failed_row(steps: usize, kind: &str, failure: String) -> ConvergenceRow {
    ConvergenceRow {
        steps,
        grid: kind.into(),
        errors: None,
        iterations: 0,
        converged: false,
        metrics: None,
        failure: Some(failure),
    }
}

/// Rows for one `N`: the base grid, and for `grid: adapt` the re-solve on the
/// adapted grid.
fn convergence_rows(problem: &HeatProblem, triplet: &PeerTriplet, cfg: &RunConfig, n: usize) -> Vec<ConvergenceRow> {
    let kind = match cfg.grid {
        GridSpec::File(_) => "file",
        _ => "uniform",
    };
    let grid = match cfg.base_grid(n) {
        Ok(g) => g,
        Err(e) => return vec![failed_row(n + 1, kind, e.to_string())],
    };
    let (row, report) = heat_row(problem, triplet, &grid, cfg, kind);
    let mut rows = vec![row];
    if cfg.grid == GridSpec::Adapt {
        let adapted = match report {
            Some(r) => adapt_grid(triplet, &r.solution, &cfg.adapt, &[]).map_err(|e| e.to_string()),
            None => Err("base solve failed".into()),
        };
        rows.push(match adapted {
            Ok(eq) => heat_row(problem, triplet, &eq.grid, cfg, "adapt").0,
            Err(e) => failed_row(n + 1, "adapt", e),
        });
    }
    rows
}

/// Observed order between consecutive rows of the same grid kind.
pub fn pairwise_order(e0: f64, e1: f64, n0: usize, n1: usize) -> f64 {
    (e0 / e1).ln() / (n1 as f64 / n0 as f64).ln()
}

fn fit(rows: &[&ConvergenceRow], pick: impl Fn(&HeatErrors) -> f64) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|r| r.errors.as_ref().map(|e| (r.steps as f64, pick(e))))
        .filter(|(_, e)| *e > 0.0)
        .unzip();
    if x.len() < 2 {
        return f64::NAN;
    }
    -loglog_slope(&x, &y)
}

/// Solves the heat problem for every configured `N`, rows concurrently.
pub fn run_convergence(cfg: &RunConfig) -> Result<ConvergenceResult, CliError> {
    if cfg.problem != ProblemKind::Heat1d {
        return Err(CliError::Config("convergence needs the exact optimum; use problem heat1d".into()));
    }
    let triplet = cfg.triplet()?;
    let problem = HeatProblem::new(cfg.heat_m()).map_err(solver_error)?;
    let ns = cfg.n.values();
    let mut rows: Vec<ConvergenceRow> = std::thread::scope(|scope| {
        let handles: Vec<_> = ns
            .iter()
            .map(|&n| {
                let (problem, triplet) = (&problem, &triplet);
                scope.spawn(move || convergence_rows(problem, triplet, cfg, n))
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("convergence worker panicked"))
            .collect()
    });
    rows.sort_by(|a, b| a.grid.cmp(&b.grid).then(a.steps.cmp(&b.steps)));
    let mut kinds: Vec<String> = rows.iter().map(|r| r.grid.clone()).collect();
    kinds.dedup();
    let fitted = kinds
        .into_iter()
        .map(|grid| {
            let sel: Vec<&ConvergenceRow> = rows.iter().filter(|r| r.grid == grid).collect();
            FittedOrders {
                control: fit(&sel, |e| e.control),
                state: fit(&sel, |e| e.state),
                adjoint: fit(&sel, |e| e.adjoint),
                grid,
            }
        })
        .collect();
    Ok(ConvergenceResult { rows, fitted })
}

pub fn convergence_table(result: &ConvergenceResult) -> Table {
    let mut t = Table::new(&[
        "grid",
        "steps [N+1]",
        "err_control [1]",
        "err_state [1]",
        "err_adjoint [1]",
        "order_control [1]",
        "order_state [1]",
        "order_adjoint [1]",
        "iterations [1]",
        "converged",
        "min_sigma [1]",
        "max_sigma [1]",
        "max_abs_eta [1]",
        "failure",
    ]);
    let nan = f64::NAN;
    let mut prev: Option<&ConvergenceRow> = None;
    for r in &result.rows {
        let e = r.errors.map_or([nan; 3], |e| [e.control, e.state, e.adjoint]);
        let orders = match (prev, r.errors) {
            (Some(p), Some(_)) if p.grid == r.grid && p.errors.is_some() => {
                let pe = p.errors.unwrap();
                let pe = [pe.control, pe.state, pe.adjoint];
                [0, 1, 2].map(|k| pairwise_order(pe[k], e[k], p.steps, r.steps))
            }
            _ => [nan; 3],
        };
        let m = r.metrics.as_ref();
        t.push(vec![
            r.grid.clone(),
            r.steps.to_string(),
            num(e[0]),
            num(e[1]),
            num(e[2]),
            num(orders[0]),
            num(orders[1]),
            num(orders[2]),
            r.iterations.to_string(),
            r.converged.to_string(),
            num(m.map_or(nan, |m| m.min_sigma)),
            num(m.map_or(nan, |m| m.max_sigma)),
            num(m.map_or(nan, |m| m.max_abs_eta)),
            r.failure.clone().unwrap_or_default(),
        ]);
        prev = Some(r);
    }
    t
}

// ----------------------------------------------------------------- solve

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub pre_therapy_volume: (f64, f64),
    pub treated_volume_end: f64,
    pub untreated_volume_end: f64,
    /// `V_φ` at the grid points of the untreated run.
    pub untreated_volume_strictly_increasing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptSummary {
    /// Optimizer iterations on the base grid.
    pub base_iterations: usize,
    pub passes: usize,
    pub smoothing_rounds: usize,
    pub deviation_unsmoothed: f64,
    pub deviation: f64,
    pub constraints_met: bool,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub problem: ProblemKind,
    pub triplet: String,
    pub steps: usize,
    pub iterations: usize,
    pub converged: bool,
    pub line_search_failed: bool,
    pub stalled: bool,
    pub objective_initial: f64,
    pub objective_final: f64,
    /// Every iterate has an objective no larger than the one before.
    pub objective_monotone: bool,
    /// Largest increase between consecutive iterates relative to `|C|`;
    /// approximate Wolfe steps may raise the objective by round-off.
    pub objective_max_rise: f64,
    pub stationarity: f64,
    pub grid: GridMetrics,
    pub heat_errors: Option<HeatErrors>,
    pub pca: Option<PcaSummary>,
    pub adapt: Option<AdaptSummary>,
}

/// Everything produced by one `solve` run.
pub struct SolveBundle {
    pub summary: SolveSummary,
    pub report: OptimizationReport,
    pub grid: Grid,
    pub base_grid: Grid,
    pub adaptation: Option<Equidistribution>,
    pub observables: Vec<PcaObservation>,
    pub untreated: Vec<PcaObservation>,
    pub time_unit: &'static str,
}

fn monotone(history: &[f64]) -> bool {
    history.windows(2).all(|w| w[1] <= w[0])
}

fn max_rise(history: &[f64]) -> f64 {
    history
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs())
        .fold(0.0, f64::max)
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0])
}

/// Full optimization run; with `grid: adapt` the grid is adapted once from a
/// solve on the uniform grid and the problem is solved again.
pub fn run_solve(cfg: &RunConfig, progress: &mut dyn FnMut(&TraceRow)) -> Result<SolveBundle, CliError> {
    let ns = cfg.n.values();
    let [n] = ns[..] else {
        return Err(CliError::Config("solve takes a single value of `N`".into()));
    };
    let triplet = cfg.triplet()?;
    let bench = Bench::build(cfg, &triplet)?;
    let problem = bench.problem();
    let base_grid = cfg.base_grid(n)?;
    let initial = bench.initial(cfg, &triplet, &base_grid);
    let mut report = optimize(problem, &triplet, &base_grid, &initial, &cfg.optimizer, &mut *progress)
        .map_err(solver_error)?;
    let mut grid = base_grid.clone();
    let mut adaptation = None;
    let mut adapt = None;
    if cfg.grid == GridSpec::Adapt {
        let eq = adapt_grid(&triplet, &report.solution, &cfg.adapt, &bench.breakpoints()).map_err(solver_error)?;
        adapt = Some(AdaptSummary {
            base_iterations: report.iterations,
            passes: eq.passes,
            smoothing_rounds: eq.smoothing_rounds,
            deviation_unsmoothed: eq.deviation_unsmoothed,
            deviation: eq.deviation,
            constraints_met: eq.violation.is_none(),
            omega: eq.density.omega,
        });
        grid = eq.grid.clone();
        let initial = bench.initial(cfg, &triplet, &grid);
        report = optimize(problem, &triplet, &grid, &initial, &cfg.optimizer, &mut *progress).map_err(solver_error)?;
        adaptation = Some(eq);
    }
    let history = report.objective_history();
    let (mut heat, mut pca, mut observables, mut untreated) = (None, None, Vec::new(), Vec::new());
    match &bench {
        Bench::Heat(p) => heat = Some(heat_errors(&p.exact, &triplet, &report.controls, &report.solution)),
        Bench::Pca { bench: b, problem } => {
            observables = pca_observables(&b.model, &triplet, &report.solution);
            let zero = constant_controls(&grid, triplet.s, &[0.0]);
            let free = forward_sweep(problem.as_ref(), &triplet, &grid, &zero, &cfg.solver).map_err(solver_error)?;
            untreated = pca_observables(&b.model, &triplet, &free);
            let volumes: Vec<f64> = untreated.iter().map(|o| o.v_phi).collect();
            pca = Some(PcaSummary {
                pre_therapy_volume: b.pre_therapy_volume,
                treated_volume_end: observables.last().map_or(f64::NAN, |o| o.v_phi),
                untreated_volume_end: volumes.last().copied().unwrap_or(f64::NAN),
                untreated_volume_strictly_increasing: strictly_increasing(&volumes),
            });
        }
    }
    let summary = SolveSummary {
        problem: cfg.problem,
        triplet: triplet.name.clone(),
        steps: grid.steps(),
        iterations: report.iterations,
        converged: report.converged,
        line_search_failed: report.line_search_failed,
        stalled: report.stalled,
        objective_initial: history[0],
        objective_final: *history.last().unwrap(),
        objective_monotone: monotone(&history),
        objective_max_rise: max_rise(&history),
        stationarity: report.trace.last().map_or(f64::NAN, |r| r.gradient_norm),
        grid: grid_metrics(&grid),
        heat_errors: heat,
        pca,
        adapt,
    };
    Ok(SolveBundle {
        summary,
        report,
        grid,
        base_grid,
        adaptation,
        observables,
        untreated,
        time_unit: bench.time_unit(),
    })
}

pub fn trace_table(report: &OptimizationReport) -> Table {
    let mut t = Table::new(&[
        "iter [1]",
        "objective [1]",
        "stationarity [control unit]",
        "step_length [1]",
        "sweeps_total [1]",
        "approximate",
    ]);
    for r in &report.trace {
        t.push(vec![
            r.iter.to_string(),
            num(r.objective),
            num(r.gradient_norm),
            num(r.step_length),
            r.sweeps_total.to_string(),
            r.approximate.to_string(),
        ]);
    }
    t
}

/// Stage values of blocks with the stage times; at most `limit` components.
fn stage_table(
    triplet: &PeerTriplet,
    grid: &Grid,
    blocks: &[StageBlock],
    label: &str,
    unit: &str,
    time_unit: &str,
    limit: usize,
) -> Table {
    let width = blocks.first().map_or(0, |b| b.m.min(limit));
    let mut header = vec![format!("t_stage [{time_unit}]"), "n [1]".into(), "stage [1]".into()];
    header.extend((0..width).map(|k| format!("{label}{k} [{unit}]")));
    let mut t = Table::new(&header);
    for (n, b) in blocks.iter().enumerate() {
        for (i, &c) in triplet.c.iter().enumerate() {
            let mut row = vec![num(grid.stage_time(n, c)), n.to_string(), i.to_string()];
            row.extend(b.stage(i)[..width].iter().map(|&x| num(x)));
            t.push(row);
        }
    }
    t
}

pub fn grid_table(grid: &Grid, time_unit: &str) -> Table {
    let mut t = Table::new(&[format!("t [{time_unit}]")]);
    for &x in grid.points() {
        t.push(vec![num(x)]);
    }
    t
}

pub fn steps_table(grid: &Grid, time_unit: &str) -> Table {
    let m = grid_metrics(grid);
    let mut t = Table::new(&[
        "n [1]".to_string(),
        format!("t_n [{time_unit}]"),
        format!("h_n [{time_unit}]"),
        "sigma_n [1]".into(),
        format!("eta_n [1/{time_unit}]"),
    ]);
    for n in 0..grid.steps() {
        let (s, e) = if n == 0 { (f64::NAN, f64::NAN) } else { (m.sigma[n - 1], m.eta[n - 1]) };
        t.push(vec![n.to_string(), num(grid.t(n)), num(grid.h(n)), num(s), num(e)]);
    }
    t
}

/// Piecewise constant density as `(t, ψ)` pairs at both ends of every cell.
pub fn density_table(eq: &Equidistribution, time_unit: &str) -> Table {
    let d = &eq.density;
    let mut t = Table::new(&[format!("t [{time_unit}]"), format!("psi [1/{time_unit}]")]);
    for (k, &v) in d.values.iter().enumerate() {
        t.push(vec![num(d.breaks[k]), num(v)]);
        t.push(vec![num(d.breaks[k + 1]), num(v)]);
    }
    t
}

fn observables_table(obs: &[PcaObservation], untreated: &[PcaObservation]) -> Table {
    let mut t = Table::new(&[
        "t [day]",
        "V_phi [um^2]",
        "P_s [ng/mL um^2]",
        "phi_sq [um^2]",
        "psa_excess [ng/mL um^2]",
        "V_phi_untreated [um^2]",
    ]);
    for (o, u) in obs.iter().zip(untreated) {
        t.push(vec![
            num(o.t),
            num(o.v_phi),
            num(o.p_s),
            num(o.phi_sq),
            num(o.psa_excess),
            num(u.v_phi),
        ]);
    }
    t
}

/// Writes the artifacts selected in the config.
pub fn write_solve(
    cfg: &RunConfig,
    bundle: &SolveBundle,
    out: &mut ArtifactWriter,
    dump_limit: usize,
) -> Result<(), CliError> {
    let triplet = cfg.triplet()?;
    let tu = bundle.time_unit;
    let control_unit = if cfg.problem == ProblemKind::Pca2d { "1/day" } else { "1" };
    if cfg.wants(Artifact::Trace) {
        out.table("trace", &trace_table(&bundle.report))?;
    }
    if cfg.wants(Artifact::Controls) {
        let t = stage_table(&triplet, &bundle.grid, &bundle.report.controls, "U", control_unit, tu, usize::MAX);
        out.table("controls", &t)?;
    }
    if cfg.wants(Artifact::Trajectory) {
        let t = stage_table(&triplet, &bundle.grid, &bundle.report.solution.y, "y", "state", tu, dump_limit);
        out.table("trajectory", &t)?;
    }
    if cfg.wants(Artifact::Observables) && !bundle.observables.is_empty() {
        out.table("observables", &observables_table(&bundle.observables, &bundle.untreated))?;
    }
    if cfg.wants(Artifact::Grid) {
        out.table("grid", &grid_table(&bundle.grid, tu))?;
        out.table("steps", &steps_table(&bundle.grid, tu))?;
    }
    if cfg.wants(Artifact::Density) {
        if let Some(eq) = &bundle.adaptation {
            out.table("density", &density_table(eq, tu))?;
        }
    }
    if cfg.wants(Artifact::Summary) {
        out.json("summary", &bundle.summary)?;
    }
    Ok(())
}

// ------------------------------------------------------------ adapt-demo

/// One adaptation step shown in isolation: base grid, density and adapted grid.
pub fn write_adapt_demo(cfg: &RunConfig, bundle: &SolveBundle, out: &mut ArtifactWriter) -> Result<(), CliError> {
    let tu = bundle.time_unit;
    let eq = bundle
        .adaptation
        .as_ref()
        .ok_or_else(|| CliError::Config("adapt-demo needs an adapted grid".into()))?;
    out.table("grid_base", &grid_table(&bundle.base_grid, tu))?;
    out.table("grid_adapted", &grid_table(&bundle.grid, tu))?;
    out.table("steps_adapted", &steps_table(&bundle.grid, tu))?;
    out.table("density", &density_table(eq, tu))?;
    let mut theta = Table::new(&[
        format!("t_left [{tu}]"),
        format!("t_right [{tu}]"),
        "theta_y [1]".to_string(),
        "theta_p [1]".to_string(),
    ]);
    for k in 0..eq.density.theta_y.len() {
        theta.push(vec![
            num(eq.density.breaks[k]),
            num(eq.density.breaks[k + 1]),
            num(eq.density.theta_y[k]),
            num(eq.density.theta_p[k]),
        ]);
    }
    out.table("measures", &theta)?;
    if cfg.wants(Artifact::Summary) {
        out.json("summary", &bundle.summary)?;
    }
    Ok(())
}
