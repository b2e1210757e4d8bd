//! Phase-field model of prostate cancer growth under cytotoxic therapy,
//! discretized by cell-centred central differences on a square.
//!
//! Units are days, µm, g/L and ng/mL/cm³ throughout.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use peer_core::integrator::{constant_controls, forward_sweep, interpolate};
use peer_core::linalg::sparse::{CsrMatrix, GmresOptions, SparseSolver};
use peer_core::problem::{ControlBounds, ControlProblem, LagrangeAugmented, Linearization, RunningCost, ShiftedSolver};
use peer_core::{Grid, PeerError, PeerTriplet, Result, SolverOptions, StageBlock, TrajectorySolution};

/// Model and therapy constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaParams {
    /// Diffusivity of the tumour phase field `λ` (µm²/day).
    pub lambda: f64,
    /// Tumour mobility `M` (1/day).
    pub mobility: f64,
    /// Net proliferation scaling `m_ref` (1/day).
    pub m_ref: f64,
    pub k_rho_ref: f64,
    pub k_rho: f64,
    pub k_a_ref: f64,
    pub k_a: f64,
    /// Nutrient diffusivity `η` (µm²/day).
    pub eta: f64,
    pub s_h: f64,
    pub s_c: f64,
    pub gamma_h: f64,
    pub gamma_c: f64,
    pub sigma_l: f64,
    pub sigma_r: f64,
    /// Tissue PSA diffusivity `D` (µm²/day).
    pub diff_p: f64,
    pub alpha_h: f64,
    pub alpha_c: f64,
    pub gamma_p: f64,
    /// Edge length of the square domain (µm).
    pub l_d: f64,
    /// Semi-axes of the initial tumour (µm).
    pub a1: f64,
    pub a2: f64,
    pub c_sigma0: f64,
    pub c_sigma1: f64,
    pub c_p0: f64,
    pub c_p1: f64,
    /// Drug sensitivity `β_c` (m²/mg).
    pub beta_c: f64,
    /// Drug decay time `τ_c` (days).
    pub tau_c: f64,
    /// Standard docetaxel dose `d_c` (mg/m²).
    pub d_c: f64,
    /// Upper control bound (1/day).
    pub u_max: f64,
}

impl Default for PcaParams {
    fn default() -> Self {
        let alpha_h = 1.712e-2;
        Self {
            lambda: 640.0,
            mobility: 2.5,
            m_ref: 7.55e-2,
            k_rho_ref: 1.50e-2,
            k_rho: 1.50e-2,
            k_a_ref: 2.10e-2,
            k_a: 1.37e-2,
            eta: 6.4e4,
            s_h: 2.0,
            s_c: 2.75,
            gamma_h: 2.0,
            gamma_c: 17.0,
            sigma_l: 0.4,
            sigma_r: 6.67e-2,
            diff_p: 640.0,
            alpha_h,
            alpha_c: 15.0 * alpha_h,
            gamma_p: 0.274,
            l_d: 3000.0,
            a1: 150.0,
            a2: 200.0,
            c_sigma0: 1.0,
            c_sigma1: -0.8,
            c_p0: 0.0625,
            c_p1: 0.7975,
            beta_c: 1.59e-2,
            tau_c: 5.0,
            d_c: 75.0,
            u_max: 0.12,
        }
    }
}

impl PcaParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lambda", self.lambda),
            ("mobility", self.mobility),
            ("m_ref", self.m_ref),
            ("k_rho_ref", self.k_rho_ref),
            ("k_rho", self.k_rho),
            ("k_a_ref", self.k_a_ref),
            ("k_a", self.k_a),
            ("eta", self.eta),
            ("s_h", self.s_h),
            ("s_c", self.s_c),
            ("gamma_h", self.gamma_h),
            ("gamma_c", self.gamma_c),
            ("sigma_l", self.sigma_l),
            ("sigma_r", self.sigma_r),
            ("diff_p", self.diff_p),
            ("alpha_h", self.alpha_h),
            ("alpha_c", self.alpha_c),
            ("gamma_p", self.gamma_p),
            ("l_d", self.l_d),
            ("a1", self.a1),
            ("a2", self.a2),
            ("c_sigma0", self.c_sigma0),
            ("c_p0", self.c_p0),
            ("beta_c", self.beta_c),
            ("tau_c", self.tau_c),
            ("d_c", self.d_c),
            ("u_max", self.u_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PeerError::InvalidArgument(format!("parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `ρ = K_ρ/K̄_ρ`
    pub fn rho(&self) -> f64 {
        self.k_rho / self.k_rho_ref
    }

    /// `A = −K_A/K̄_A`
    pub fn a_const(&self) -> f64 {
        -self.k_a / self.k_a_ref
    }

    /// Net proliferation `m(σ)` and its derivative.
    pub fn proliferation(&self, sigma: f64) -> (f64, f64) {
        let (rho, a) = (self.rho(), self.a_const());
        let x = (sigma - self.sigma_l) / self.sigma_r;
        let value = self.m_ref * (0.5 * (rho + a) + (rho - a) / PI * x.atan());
        let slope = self.m_ref * (rho - a) / PI / (self.sigma_r * (1.0 + x * x));
        (value, slope)
    }

    /// Steady tissue PSA level of healthy tissue, `α_h/γ_p`.
    pub fn psa_baseline(&self) -> f64 {
        self.alpha_h / self.gamma_p
    }

    /// Standard protocol `U₀(t) = m_ref β_c d_c e^{−t/τ_c}`.
    pub fn standard_protocol(&self, t: f64) -> f64 {
        self.m_ref * self.beta_c * self.d_c * (-t / self.tau_c).exp()
    }

    /// Three-dose protocol `U_d3(t) = Σ m_ref β_c d_{c,i} e^{−(t−t_{c,i})/τ_c} H(t − t_{c,i})`
    /// with `H(0) = 1`.
    pub fn three_dose_protocol(&self, t: f64) -> f64 {
        THREE_DOSE_AMOUNTS
            .iter()
            .zip(THREE_DOSE_TIMES)
            .filter(|(_, tc)| t >= *tc)
            .map(|(d, tc)| self.m_ref * self.beta_c * d * (-(t - tc) / self.tau_c).exp())
            .sum()
    }
}

/// Doses of the three-dose design (mg/m²).
pub const THREE_DOSE_AMOUNTS: [f64; 3] = [58.49, 9.20, 5.03];
/// Delivery times of the three-dose design (days).
pub const THREE_DOSE_TIMES: [f64; 3] = [2.85, 7.90, 9.16];

/// `F(φ) = Mφ²(1−φ)²`: returns `(F′, F″)`.
fn double_well(m: f64, phi: f64) -> (f64, f64) {
    (
        2.0 * m * phi * (1.0 - phi) * (1.0 - 2.0 * phi),
        2.0 * m * (1.0 - 6.0 * phi + 6.0 * phi * phi),
    )
}

/// `h(φ) = Mφ²(3−2φ)`: returns `(h′, h″)`.
fn interpolation(m: f64, phi: f64) -> (f64, f64) {
    (6.0 * m * phi * (1.0 - phi), 6.0 * m * (1.0 - 2.0 * phi))
}

/// Objective weights `k₁..k₄`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaWeights {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

/// Target drug profile `U_d` of the control penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    /// `U_d = 0`, penalty `k₄ = 6`.
    D1Target,
    /// `U_d = U_d3`, penalty `k₄ = 60`.
    D3Target,
}

impl Protocol {
    pub fn default_weights(self) -> PcaWeights {
        let k4 = match self {
            Protocol::D1Target => 6.0,
            Protocol::D3Target => 60.0,
        };
        PcaWeights {
            k1: 1.0,
            k2: 1.0,
            k3: 1.0,
            k4,
        }
    }

    pub fn target(self, params: &PcaParams, t: f64) -> f64 {
        match self {
            Protocol::D1Target => 0.0,
            Protocol::D3Target => params.three_dose_protocol(t),
        }
    }

    /// Discontinuities of the target profile.
    pub fn breakpoints(self) -> Vec<f64> {
        match self {
            Protocol::D1Target => Vec::new(),
            Protocol::D3Target => THREE_DOSE_TIMES.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcaConfig {
    /// Grid points per side.
    pub m_side: usize,
    pub params: PcaParams,
    pub protocol: Protocol,
    /// Defaults to the protocol's weights.
    pub weights: Option<PcaWeights>,
    pub therapy_days: f64,
    pub pre_therapy_days: f64,
    pub pre_therapy_steps: usize,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            m_side: 64,
            params: PcaParams::default(),
            protocol: Protocol::D1Target,
            weights: None,
            therapy_days: 21.0,
            pre_therapy_days: 60.0,
            pre_therapy_steps: 240,
        }
    }
}

impl PcaConfig {
    pub fn weights(&self) -> PcaWeights {
        self.weights.unwrap_or_else(|| self.protocol.default_weights())
    }
}

/// Spatial discretization: fields `φ`, `σ`, `p` on the cell centres
/// `x_i = (i − ½)Δx`, stacked as `(Φ, Σ, P)` with row-wise numbering.
#[derive(Debug, Clone)]
pub struct PcaModel {
    pub params: PcaParams,
    pub m: usize,
    pub dx: f64,
    /// Trapezoidal weights `W_tp`.
    pub w_tp: Vec<f64>,
    /// `W_tp𝟙`
    pub w_sum: f64,
}

impl PcaModel {
    pub fn new(m: usize, params: PcaParams) -> Result<Self> {
        if m < 16 {
            return Err(PeerError::InvalidArgument(format!("need m_side ≥ 16, got {m}")));
        }
        params.validate()?;
        let dx = params.l_d / m as f64;
        let edge: Vec<f64> = (0..m).map(|i| if i == 0 || i == m - 1 { 1.0 } else { 2.0 }).collect();
        let mut w_tp = Vec::with_capacity(m * m);
        for r in 0..m {
            for c in 0..m {
                w_tp.push(0.25 * dx * dx * edge[r] * edge[c]);
            }
        }
        let w_sum = w_tp.iter().sum();
        Ok(Self {
            params,
            m,
            dx,
            w_tp,
            w_sum,
        })
    }

    /// Cells per field.
    pub fn cells(&self) -> usize {
        self.m * self.m
    }

    pub fn state_dim(&self) -> usize {
        3 * self.cells()
    }

    pub fn centre(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx
    }

    /// `(φ₀, σ₀, p₀)` stacked.
    pub fn initial_fields(&self) -> Vec<f64> {
        let p = &self.params;
        let n = self.cells();
        let mut y = vec![0.0; 3 * n];
        let half = 0.5 * p.l_d;
        for r in 0..self.m {
            for c in 0..self.m {
                let k = r * self.m + c;
                let x1 = (self.centre(c) - half) / p.a1;
                let x2 = (self.centre(r) - half) / p.a2;
                let phi = 0.5 - 0.5 * (10.0 * ((x1 * x1 + x2 * x2).sqrt() - 1.0)).tanh();
                y[k] = phi;
                y[n + k] = p.c_sigma0 + p.c_sigma1 * phi;
                y[2 * n + k] = p.c_p0 + p.c_p1 * phi;
            }
        }
        y
    }

    /// Diagonal of the unscaled 5-point stencil: `−4` plus `−1` per Dirichlet
    /// side (ghost `−u`) and `+1` per Neumann side (ghost `u`).
    fn stencil_diag(&self, r: usize, c: usize, dirichlet: bool) -> f64 {
        let sides = [r == 0, r + 1 == self.m, c == 0, c + 1 == self.m]
            .iter()
            .filter(|&&b| b)
            .count() as f64;
        -4.0 + if dirichlet { -sides } else { sides }
    }

    /// `out += coef·Δ_h u` with the given boundary condition.
    fn add_laplacian(&self, u: &[f64], coef: f64, dirichlet: bool, out: &mut [f64]) {
        let m = self.m;
        let s = coef / (self.dx * self.dx);
        for r in 0..m {
            for c in 0..m {
                let k = r * m + c;
                let mut acc = self.stencil_diag(r, c, dirichlet) * u[k];
                if r > 0 {
                    acc += u[k - m];
                }
                if r + 1 < m {
                    acc += u[k + m];
                }
                if c > 0 {
                    acc += u[k - 1];
                }
                if c + 1 < m {
                    acc += u[k + 1];
                }
                out[k] += s * acc;
            }
        }
    }

    pub fn rhs(&self, y: &[f64], u: f64, out: &mut [f64]) {
        let p = &self.params;
        let n = self.cells();
        let (phi, rest) = y.split_at(n);
        let (sig, psa) = rest.split_at(n);
        let (o_phi, o_rest) = out.split_at_mut(n);
        let (o_sig, o_psa) = o_rest.split_at_mut(n);
        for k in 0..n {
            let (f1, _) = double_well(p.mobility, phi[k]);
            let (h1, _) = interpolation(p.mobility, phi[k]);
            let (mp, _) = p.proliferation(sig[k]);
            o_phi[k] = -f1 + (mp - u) * h1;
            o_sig[k] = -p.gamma_h * sig[k] - (p.gamma_c - p.gamma_h) * sig[k] * phi[k]
                + p.s_h * (1.0 - phi[k])
                + p.s_c * phi[k];
            o_psa[k] = -p.gamma_p * psa[k] + p.alpha_h + (p.alpha_c - p.alpha_h) * phi[k];
        }
        self.add_laplacian(phi, p.lambda, true, o_phi);
        self.add_laplacian(sig, p.eta, false, o_sig);
        self.add_laplacian(psa, p.diff_p, false, o_psa);
    }

    pub fn linearize(self: &Arc<Self>, y: &[f64], u: f64) -> PcaLinearization {
        let p = &self.params;
        let n = self.cells();
        let mut lin = PcaLinearization {
            model: Arc::clone(self),
            phi_phi: vec![0.0; n],
            phi_sig: vec![0.0; n],
            sig_sig: vec![0.0; n],
            sig_phi: vec![0.0; n],
            phi_u: vec![0.0; n],
        };
        for k in 0..n {
            let (phi, sig) = (y[k], y[n + k]);
            let (_, f2) = double_well(p.mobility, phi);
            let (h1, h2) = interpolation(p.mobility, phi);
            let (mp, dmp) = p.proliferation(sig);
            lin.phi_phi[k] = -f2 + (mp - u) * h2;
            lin.phi_sig[k] = dmp * h1;
            lin.sig_sig[k] = -p.gamma_h - (p.gamma_c - p.gamma_h) * phi;
            lin.sig_phi[k] = -(p.gamma_c - p.gamma_h) * sig - p.s_h + p.s_c;
            lin.phi_u[k] = -h1;
        }
        lin
    }

    /// `W_tp v` over one field.
    pub fn quadrature(&self, v: &[f64]) -> f64 {
        self.w_tp.iter().zip(v).map(|(w, x)| w * x).sum()
    }
}

/// Jacobians of the discrete model at a point. Couplings are diagonal; the
/// diffusion operators are symmetric.
pub struct PcaLinearization {
    model: Arc<PcaModel>,
    phi_phi: Vec<f64>,
    phi_sig: Vec<f64>,
    sig_sig: Vec<f64>,
    sig_phi: Vec<f64>,
    phi_u: Vec<f64>,
}

impl PcaLinearization {
    fn apply(&self, v: &[f64], out: &mut [f64], transpose: bool) {
        let model = &self.model;
        let p = &model.params;
        let n = model.cells();
        let (v_phi, rest) = v.split_at(n);
        let (v_sig, v_psa) = rest.split_at(n);
        let (o_phi, o_rest) = out.split_at_mut(n);
        let (o_sig, o_psa) = o_rest.split_at_mut(n);
        let psa_phi = p.alpha_c - p.alpha_h;
        for k in 0..n {
            if transpose {
                o_phi[k] = self.phi_phi[k] * v_phi[k] + self.sig_phi[k] * v_sig[k] + psa_phi * v_psa[k];
                o_sig[k] = self.sig_sig[k] * v_sig[k] + self.phi_sig[k] * v_phi[k];
            } else {
                o_phi[k] = self.phi_phi[k] * v_phi[k] + self.phi_sig[k] * v_sig[k];
                o_sig[k] = self.sig_sig[k] * v_sig[k] + self.sig_phi[k] * v_phi[k];
            }
            o_psa[k] = -p.gamma_p * v_psa[k] + if transpose { 0.0 } else { psa_phi * v_phi[k] };
        }
        model.add_laplacian(v_phi, p.lambda, true, o_phi);
        model.add_laplacian(v_sig, p.eta, false, o_sig);
        model.add_laplacian(v_psa, p.diff_p, false, o_psa);
    }

    /// `αI − γJ` in compressed-row form.
    pub fn shifted_matrix(&self, alpha: f64, gamma: f64) -> CsrMatrix {
        let model = &self.model;
        let p = &model.params;
        let m = model.m;
        let n = model.cells();
        let inv = 1.0 / (model.dx * model.dx);
        let mut entries = Vec::with_capacity(3 * 6 * n + 2 * n);
        let fields = [(0, p.lambda, true), (1, p.eta, false), (2, p.diff_p, false)];
        for (field, coef, dirichlet) in fields {
            let off = field * n;
            let s = -gamma * coef * inv;
            for r in 0..m {
                for c in 0..m {
                    let k = r * m + c;
                    let local = match field {
                        0 => self.phi_phi[k],
                        1 => self.sig_sig[k],
                        _ => -p.gamma_p,
                    };
                    entries.push((off + k, off + k, alpha + s * model.stencil_diag(r, c, dirichlet) - gamma * local));
                    if r > 0 {
                        entries.push((off + k, off + k - m, s));
                    }
                    if r + 1 < m {
                        entries.push((off + k, off + k + m, s));
                    }
                    if c > 0 {
                        entries.push((off + k, off + k - 1, s));
                    }
                    if c + 1 < m {
                        entries.push((off + k, off + k + 1, s));
                    }
                }
            }
        }
        for k in 0..n {
            entries.push((k, n + k, -gamma * self.phi_sig[k]));
            entries.push((n + k, k, -gamma * self.sig_phi[k]));
            entries.push((2 * n + k, k, -gamma * (p.alpha_c - p.alpha_h)));
        }
        CsrMatrix::from_triplets(3 * n, &entries)
    }
}

struct PcaShifted(SparseSolver);

impl ShiftedSolver for PcaShifted {
    fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        self.0.solve(b, x).map(|_| ())
    }

    fn solve_transpose(&self, b: &[f64], x: &mut [f64]) -> Result<()> {
        self.0.solve_transpose(b, x).map(|_| ())
    }
}

impl Linearization for PcaLinearization {
    fn apply_y(&self, v: &[f64], out: &mut [f64]) {
        self.apply(v, out, false);
    }

    fn apply_y_transpose(&self, v: &[f64], out: &mut [f64]) {
        self.apply(v, out, true);
    }

    fn apply_u(&self, du: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for (o, g) in out.iter_mut().zip(&self.phi_u) {
            *o = g * du[0];
        }
    }

    fn apply_u_transpose(&self, v: &[f64], out: &mut [f64]) {
        out[0] = self.phi_u.iter().zip(v).map(|(g, x)| g * x).sum();
    }

    fn shifted(&self, alpha: f64, gamma: f64) -> Result<Box<dyn ShiftedSolver>> {
        let options = GmresOptions {
            rel_tol: 1e-14,
            ..GmresOptions::default()
        };
        Ok(Box::new(PcaShifted(SparseSolver::new(self.shifted_matrix(alpha, gamma), options)?)))
    }
}

/// The controlled model on `[0, T]` from a given state, with terminal cost
/// `k₂W_tpΦ(T)²`.
#[derive(Debug, Clone)]
pub struct PcaDynamics {
    pub model: Arc<PcaModel>,
    pub y0: Vec<f64>,
    pub t_end: f64,
    pub k2: f64,
}

impl ControlProblem for PcaDynamics {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> f64 {
        self.t_end
    }

    fn initial_state(&self) -> Vec<f64> {
        self.y0.clone()
    }

    fn rhs(&self, _t: f64, y: &[f64], u: &[f64], out: &mut [f64]) {
        self.model.rhs(y, u[0], out);
    }

    fn linearize(&self, _t: f64, y: &[f64], u: &[f64]) -> Box<dyn Linearization> {
        Box::new(self.model.linearize(y, u[0]))
    }

    fn objective(&self, y_t: &[f64]) -> f64 {
        let n = self.model.cells();
        self.k2 * self.model.w_tp.iter().zip(&y_t[..n]).map(|(w, x)| w * x * x).sum::<f64>()
    }

    fn objective_gradient(&self, y_t: &[f64], out: &mut [f64]) {
        let n = self.model.cells();
        out.iter_mut().for_each(|x| *x = 0.0);
        for k in 0..n {
            out[k] = 2.0 * self.k2 * self.model.w_tp[k] * y_t[k];
        }
    }

    fn bounds(&self) -> ControlBounds {
        ControlBounds::uniform(1, 0.0, self.model.params.u_max)
    }
}

/// `k₁W_tpΦ² + k₃(W_tp(P − α_h/γ_p 𝟙))² + k₄W_tp𝟙 (U − U_d(t))²`.
#[derive(Debug, Clone)]
pub struct PcaRunningCost {
    pub model: Arc<PcaModel>,
    pub weights: PcaWeights,
    pub protocol: Protocol,
}

impl PcaRunningCost {
    fn psa_excess(&self, y: &[f64]) -> f64 {
        let n = self.model.cells();
        let base = self.model.params.psa_baseline();
        self.model.w_tp.iter().zip(&y[2 * n..3 * n]).map(|(w, p)| w * (p - base)).sum()
    }

    fn target(&self, t: f64) -> f64 {
        self.protocol.target(&self.model.params, t)
    }
}

impl RunningCost for PcaRunningCost {
    fn value(&self, t: f64, y: &[f64], u: &[f64]) -> f64 {
        let n = self.model.cells();
        let w = &self.weights;
        let phi_sq: f64 = self.model.w_tp.iter().zip(&y[..n]).map(|(c, x)| c * x * x).sum();
        let excess = self.psa_excess(y);
        let du = u[0] - self.target(t);
        w.k1 * phi_sq + w.k3 * excess * excess + w.k4 * self.model.w_sum * du * du
    }

    fn grad_y(&self, _t: f64, y: &[f64], _u: &[f64], out: &mut [f64]) {
        let n = self.model.cells();
        let w = &self.weights;
        let excess = self.psa_excess(y);
        for k in 0..n {
            let c = self.model.w_tp[k];
            out[k] = 2.0 * w.k1 * c * y[k];
            out[n + k] = 0.0;
            out[2 * n + k] = 2.0 * w.k3 * excess * c;
        }
    }

    fn grad_u(&self, t: f64, _y: &[f64], u: &[f64], out: &mut [f64]) {
        out[0] = 2.0 * self.weights.k4 * self.model.w_sum * (u[0] - self.target(t));
    }
}

pub type PcaProblem = LagrangeAugmented<PcaDynamics, PcaRunningCost>;

/// The therapy-phase problem together with the untreated pre-therapy run that
/// produced its initial state.
#[derive(Debug, Clone)]
pub struct PcaBenchmark {
    pub config: PcaConfig,
    pub model: Arc<PcaModel>,
    /// Fields after the untreated pre-therapy phase.
    pub therapy_initial: Vec<f64>,
    /// Tumour volume proxy `W_tpΦ` at the start and end of the pre-therapy phase.
    pub pre_therapy_volume: (f64, f64),
}

impl PcaBenchmark {
    pub fn new(config: PcaConfig, triplet: &PeerTriplet, solver: &SolverOptions) -> Result<Self> {
        if !(config.therapy_days > 0.0 && config.pre_therapy_days >= 0.0) {
            return Err(PeerError::InvalidArgument("phase durations must be positive".into()));
        }
        let model = Arc::new(PcaModel::new(config.m_side, config.params)?);
        let start = model.initial_fields();
        let n = model.cells();
        let v0 = model.quadrature(&start[..n]);
        let therapy_initial = if config.pre_therapy_days > 0.0 {
            if config.pre_therapy_steps < 2 {
                return Err(PeerError::InvalidArgument("pre-therapy phase needs at least two steps".into()));
            }
            let pre = PcaDynamics {
                model: Arc::clone(&model),
                y0: start,
                t_end: config.pre_therapy_days,
                k2: 0.0,
            };
            let grid = Grid::uniform(config.pre_therapy_days, config.pre_therapy_steps)?;
            let controls = constant_controls(&grid, triplet.s, &[0.0]);
            forward_sweep(&pre, triplet, &grid, &controls, solver)?.y_t
        } else {
            start
        };
        let v1 = model.quadrature(&therapy_initial[..n]);
        Ok(Self {
            config,
            model,
            therapy_initial,
            pre_therapy_volume: (v0, v1),
        })
    }

    pub fn problem(&self) -> PcaProblem {
        let weights = self.config.weights();
        let protocol = self.config.protocol;
        let dynamics = PcaDynamics {
            model: Arc::clone(&self.model),
            y0: self.therapy_initial.clone(),
            t_end: self.config.therapy_days,
            k2: weights.k2,
        };
        let cost = PcaRunningCost {
            model: Arc::clone(&self.model),
            weights,
            protocol,
        };
        let model = Arc::clone(&self.model);
        LagrangeAugmented::new(dynamics, cost).with_argmin(move |t, y, p| {
            // ∂H/∂U = −Σ p_φ h′(φ) + 2k₄W_tp𝟙 p_aug (U − U_d) = 0
            let n = model.cells();
            let p_aug = p[3 * n];
            if !(p_aug > 0.0 && weights.k4 > 0.0) {
                return None;
            }
            let drive: f64 = (0..n)
                .map(|k| p[k] * interpolation(model.params.mobility, y[k]).0)
                .sum();
            let u = protocol.target(&model.params, t) + drive / (2.0 * weights.k4 * model.w_sum * p_aug);
            Some(vec![u.clamp(0.0, model.params.u_max)])
        })
    }

    /// Controls sampled from the standard protocol `U₀`.
    pub fn standard_controls(&self, triplet: &PeerTriplet, grid: &Grid) -> Vec<StageBlock> {
        let p = self.model.params;
        peer_core::integrator::sample_controls(grid, triplet, 1, |t| {
            vec![p.standard_protocol(t).clamp(0.0, p.u_max)]
        })
    }
}

/// Spatial reductions of a trajectory at one time point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaObservation {
    pub t: f64,
    /// Tumour volume proxy `V_φ = W_tpΦ`.
    pub v_phi: f64,
    /// Serum PSA `P_s = W_tpP`.
    pub p_s: f64,
    /// `W_tpΦ²`
    pub phi_sq: f64,
    /// `W_tp(P − α_h/γ_p 𝟙)`
    pub psa_excess: f64,
}

/// Observables at the grid points `t_0, …, t_N` and at `T`.
pub fn pca_observables(model: &PcaModel, triplet: &PeerTriplet, sol: &TrajectorySolution) -> Vec<PcaObservation> {
    let n = model.cells();
    let base = model.params.psa_baseline();
    let observe = |t: f64, y: &[f64]| {
        let phi = &y[..n];
        let psa = &y[2 * n..3 * n];
        PcaObservation {
            t,
            v_phi: model.quadrature(phi),
            p_s: model.quadrature(psa),
            phi_sq: model.w_tp.iter().zip(phi).map(|(w, x)| w * x * x).sum(),
            psa_excess: model.w_tp.iter().zip(psa).map(|(w, p)| w * (p - base)).sum(),
        }
    };
    let grid = &sol.grid;
    let mut rows: Vec<PcaObservation> = sol
        .y
        .iter()
        .enumerate()
        .map(|(k, block)| observe(grid.t(k), &interpolate(triplet, block, 0.0)))
        .collect();
    rows.push(observe(grid.horizon(), &sol.y_t));
    rows
}
