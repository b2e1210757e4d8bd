//! Algebraic and spectral checks of a triplet: order conditions, structure,
//! error coefficients, zero stability, stability sectors and boundary
//! iteration contraction.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PeerError, Result};
use crate::linalg::{
    max_abs, norm_inf, numerical_rank, pascal, pascal_inverse, ratio_scaling, scaled_shift,
    spectral_radius, spectral_radius_complex, to_complex, vandermonde,
};
use crate::triplet::{
    assemble_b, check_sigma, congruent_a, stability_matrix, Boundary, ErrorConstants, PeerTriplet,
};

/// Max-norm residuals of the order conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderResiduals {
    pub forward: f64,
    pub adjoint: f64,
    pub start: f64,
    pub end: f64,
    pub rank_one: f64,
}

impl OrderResiduals {
    pub fn max(&self) -> f64 {
        [self.forward, self.adjoint, self.start, self.end, self.rank_one]
            .into_iter()
            .fold(0.0, f64::max)
    }

    /// Name of the largest residual, for diagnostics.
    pub fn worst(&self) -> (&'static str, f64) {
        [
            ("forward", self.forward),
            ("adjoint", self.adjoint),
            ("start", self.start),
            ("end", self.end),
            ("rank_one", self.rank_one),
        ]
        .into_iter()
        .fold(("forward", f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc })
    }
}

pub fn verify_order_conditions(t: &PeerTriplet, sigma: f64) -> Result<OrderResiduals> {
    let q = t.q;
    let b = assemble_b(t, sigma)?;
    let vq = vandermonde(&t.c, q);
    let k = t.k_matrix();
    let e = scaled_shift(q);
    let p = pascal(q);
    let p_inv = pascal_inverse(q);
    let s_mat = ratio_scaling(sigma, q);
    let s_inv = ratio_scaling(1.0 / sigma, q);
    let kve = &k * &vq * &e;

    let forward = &t.a * &vq - &kve - &b * &vq * &p_inv * &s_inv;
    let adjoint = t.a.transpose() * &vq + &kve - b.transpose() * &vq * &s_mat * &p;

    let a_vec = DVector::from_column_slice(&t.a_start);
    let mut e1 = DMatrix::zeros(1, q);
    e1[(0, 0)] = 1.0;
    let start = &t.a0 * &vq - &a_vec * &e1 - &kve;
    let w_vec = DVector::from_column_slice(&t.w);
    let ones_q = DMatrix::from_element(1, q, 1.0);
    let end = t.an.transpose() * &vq + &kve - &w_vec * &ones_q;

    let r0 = vq.transpose() * (&t.a0 - &t.a);
    let rn = (&t.an - &t.a) * &vq;
    Ok(OrderResiduals {
        forward: max_abs(&forward),
        adjoint: max_abs(&adjoint),
        start: max_abs(&start),
        end: max_abs(&end),
        rank_one: max_abs(&r0).max(max_abs(&rn)),
    })
}

/// Deviations from the flip identities; all zero for a self-adjoint triplet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipReport {
    pub nodes: f64,
    pub a: f64,
    pub k: f64,
    pub b: f64,
    pub weights: f64,
    pub boundary: f64,
}

impl FlipReport {
    pub fn max(&self) -> f64 {
        [self.nodes, self.a, self.k, self.b, self.weights, self.boundary]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    /// `max_σ ‖𝒬_{3,3}(σ) − e₁e₁ᵀ‖`.
    pub q33_deviation: f64,
    /// `‖A⁻¹B(σ)𝟙 − 𝟙‖` and `‖(𝟙ᵀA)A⁻¹B(σ) − 𝟙ᵀA‖`, maximized over samples.
    pub eigenvector_residual: f64,
    pub lsrk_residual: f64,
    pub lsrk: bool,
    pub adjoint_lsrk_residual: f64,
    pub adjoint_lsrk: bool,
    pub rank_a0: usize,
    pub rank_an: usize,
    /// Residual of the two free-parameter constraints on `φ₀`.
    pub phi0_constraint: f64,
    /// Residual of the constraints on `φ_N`.
    pub phin_constraint: f64,
    pub flip: FlipReport,
    /// `A₀ − Ã₀` and `A_N − Ã_N` upper triangular, `Ã` lower triangular.
    pub tilde_structure: bool,
}

pub const STRUCTURE_SIGMAS: [f64; 5] = [0.5, 0.8, 1.0, 1.3, 2.0];

fn flip(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |i, j| if i + j + 1 == n { 1.0 } else { 0.0 })
}

pub fn verify_structure(t: &PeerTriplet) -> Result<StructureReport> {
    let s = t.s;
    let q = t.q;
    let v = t.v();
    let vq = vandermonde(&t.c, q);
    let ones = DVector::from_element(s, 1.0);
    let one_a = ones.transpose() * &t.a;

    let mut q33 = 0.0f64;
    let mut eig = 0.0f64;
    for &sigma in &STRUCTURE_SIGMAS {
        let b = assemble_b(t, sigma)?;
        let qm = vq.transpose() * &b * &vq * pascal_inverse(q);
        let mut target = DMatrix::zeros(q, q);
        target[(0, 0)] = 1.0;
        q33 = q33.max(max_abs(&(qm - target)));
        let bar = stability_matrix(t, sigma)?;
        eig = eig.max((&bar * &ones - &ones).amax());
        eig = eig.max((&one_a * &bar - &one_a).amax());
    }

    let mut e_last = nalgebra::RowDVector::<f64>::zeros(s);
    e_last[s - 1] = 1.0;
    let lsrk_residual = (&one_a - &e_last).amax().max((t.c[s - 1] - 1.0).abs());
    let mut e_first = DVector::zeros(s);
    e_first[0] = 1.0;
    let adjoint_lsrk_residual = (&t.a * &ones - &e_first).amax().max(t.c[0].abs());

    let rank_a0 = numerical_rank(&(&t.a0 - &t.a), 1e-10);
    let rank_an = numerical_rank(&(&t.an - &t.a), 1e-10);

    // φ₀ᵀ is the last row of Vᵀ(A₀−A)V, φ_N the last column of (A_N−A)V.
    let b1 = assemble_b(t, 1.0)?;
    let q_sq = v.transpose() * &b1 * &vq * pascal_inverse(q);
    let phi0 = (v.transpose() * (&t.a0 - &t.a) * v).row(s - 1).transpose();
    let phin = ((&t.an - &t.a) * v).column(s - 1).into_owned();
    let phin_proj = phin.transpose() * &vq * pascal_inverse(q);
    let bhat1 = t.bhat.matrix(1.0);
    let mut phi0_constraint = 0.0f64;
    let mut phin_constraint = 0.0f64;
    for j in 1..q {
        phi0_constraint = phi0_constraint.max((phi0[j] + q_sq[(s - 1, j)]).abs());
        phin_constraint = phin_constraint.max((phin_proj[(0, j)] + bhat1[(j, s - 1)]).abs());
    }

    let pi = flip(s);
    let c_flip = &pi * DVector::from_column_slice(&t.c);
    let nodes = c_flip
        .iter()
        .zip(&t.c)
        .map(|(a, b)| (a - (1.0 - b)).abs())
        .fold(0.0, f64::max);
    let mut bflip = 0.0f64;
    for &sigma in &STRUCTURE_SIGMAS {
        let lhs = &pi * assemble_b(t, sigma)? * &pi;
        let rhs = assemble_b(t, 1.0 / sigma)?.transpose();
        bflip = bflip.max(max_abs(&(lhs - rhs)));
    }
    let w_flip = &pi * DVector::from_column_slice(&t.a_start) - DVector::from_column_slice(&t.w);
    let flip_report = FlipReport {
        nodes,
        a: max_abs(&(&pi * &t.a * &pi - t.a.transpose())),
        k: max_abs(&(&pi * t.k_matrix() * &pi - t.k_matrix())),
        b: bflip,
        weights: w_flip.amax(),
        boundary: max_abs(&(&pi * &t.an * &pi - t.a0.transpose())),
    };

    let mut tilde_structure = true;
    for (tilde, full) in [(&t.at0, &t.a0), (&t.atn, &t.an)] {
        for i in 0..s {
            for j in 0..s {
                if j > i && tilde[(i, j)] != 0.0 {
                    tilde_structure = false;
                }
                if j < i && full[(i, j)] != tilde[(i, j)] {
                    tilde_structure = false;
                }
            }
        }
    }

    Ok(StructureReport {
        q33_deviation: q33,
        eigenvector_residual: eig,
        lsrk_residual,
        lsrk: lsrk_residual <= 1e-12,
        adjoint_lsrk_residual,
        adjoint_lsrk: adjoint_lsrk_residual <= 1e-12,
        rank_a0,
        rank_an,
        phi0_constraint,
        phin_constraint,
        flip: flip_report,
        tilde_structure,
    })
}

/// Leading local error coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCoefficients {
    pub beta3: DVector<f64>,
    pub beta3_adj: DVector<f64>,
    pub beta3_start: DVector<f64>,
    pub beta3_end_adj: DVector<f64>,
}

fn powv(c: &[f64], f: impl Fn(f64) -> f64) -> DVector<f64> {
    DVector::from_iterator(c.len(), c.iter().map(|&x| f(x)))
}

fn solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| PeerError::Coefficients(format!("{what} is singular")))
}

/// `β₃` with a general matrix in place of `A` (standard or end method).
fn beta_forward(t: &PeerTriplet, a: &DMatrix<f64>, sigma: f64) -> Result<DVector<f64>> {
    let b = assemble_b(t, sigma)?;
    let c3 = powv(&t.c, |x| x.powi(3));
    let cm = powv(&t.c, |x| (x - 1.0).powi(3));
    let c2 = powv(&t.c, |x| x * x);
    let rhs = a * &c3 - &b * cm / sigma.powi(3) - t.k_matrix() * c2 * 3.0;
    Ok(solve(a, &rhs, "forward matrix")? / 6.0)
}

/// `β₃†` with a general matrix in place of `A` (standard or start method).
fn beta_adjoint(t: &PeerTriplet, a: &DMatrix<f64>, sigma: f64) -> Result<DVector<f64>> {
    let b = assemble_b(t, sigma)?;
    let c3 = powv(&t.c, |x| x.powi(3));
    let cp = powv(&t.c, |x| (1.0 + sigma * x).powi(3));
    let c2 = powv(&t.c, |x| x * x);
    let at = a.transpose();
    let rhs = &at * &c3 - b.transpose() * cp + t.k_matrix() * c2 * 3.0;
    Ok(solve(&at, &rhs, "adjoint matrix")? / 6.0)
}

pub fn error_coefficients(t: &PeerTriplet, sigma: f64) -> Result<ErrorCoefficients> {
    check_sigma(sigma)?;
    let c3 = powv(&t.c, |x| x.powi(3));
    let kc2 = t.k_matrix() * powv(&t.c, |x| x * x);
    let beta3_start = (&c3 - solve(&t.a0, &kc2, "A0")? * 3.0) / 6.0;
    let ones = DVector::from_element(t.s, 1.0);
    let beta3_end_adj = (&c3 + solve(&t.an.transpose(), &kc2, "AN")? * 3.0 - ones) / 6.0;
    Ok(ErrorCoefficients {
        beta3: beta_forward(t, &t.a, sigma)?,
        beta3_adj: beta_adjoint(t, &t.a, sigma)?,
        beta3_start,
        beta3_end_adj,
    })
}

/// Error constants at σ = 1. The adjoint start and forward end constants use
/// the boundary matrix in place of `A` in the standard formulas.
pub fn error_constants(t: &PeerTriplet) -> Result<ErrorConstants> {
    let e = error_coefficients(t, 1.0)?;
    Ok(ErrorConstants {
        err3: e.beta3.amax(),
        err3_adj: e.beta3_adj.amax(),
        err3_start: e.beta3_start.amax(),
        err3_start_adj: beta_adjoint(t, &t.a0, 1.0)?.amax(),
        err3_end: beta_forward(t, &t.an, 1.0)?.amax(),
        err3_end_adj: e.beta3_end_adj.amax(),
    })
}

/// `(𝟙ᵀAβ₃(σ), 𝟙ᵀAᵀβ₃†(σ))`.
pub fn superconvergence_residual(t: &PeerTriplet, sigma: f64) -> Result<(f64, f64)> {
    let e = error_coefficients(t, sigma)?;
    let ones = DVector::from_element(t.s, 1.0);
    let first = (ones.transpose() * &t.a * &e.beta3)[(0, 0)];
    let second = (ones.transpose() * t.a.transpose() * &e.beta3_adj)[(0, 0)];
    Ok((first, second))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ZeroStability {
    /// `‖W⁻¹A⁻¹B(σ)W‖_∞` with the triplet's weight.
    WeightedNorm(f64),
    /// Spectral radius of `A⁻¹B(σ)`, used when no weight is available.
    SpectralRadius(f64),
}

impl ZeroStability {
    pub fn value(&self) -> f64 {
        match *self {
            ZeroStability::WeightedNorm(v) | ZeroStability::SpectralRadius(v) => v,
        }
    }
}

pub fn zero_stability_norm(t: &PeerTriplet, sigma: f64) -> Result<ZeroStability> {
    let bar = stability_matrix(t, sigma)?;
    match &t.weight {
        Some(w) => {
            let w_inv = w
                .clone()
                .try_inverse()
                .ok_or_else(|| PeerError::Coefficients("weight matrix is singular".into()))?;
            Ok(ZeroStability::WeightedNorm(norm_inf(&(w_inv * bar * w))))
        }
        None => Ok(ZeroStability::SpectralRadius(spectral_radius(&bar))),
    }
}

/// Largest `‖B̄(σ_k)⋯B̄(σ_1)‖_∞` over random ratio sequences drawn uniformly
/// from the triplet's zero-stability interval.
pub fn product_bound(t: &PeerTriplet, seed: u64, sequences: usize, length: usize) -> Result<f64> {
    let (lo, hi) = t.sigma_range;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..sequences {
        let mut prod = DMatrix::identity(t.s, t.s);
        for _ in 0..length {
            let sigma = rng.gen_range(lo..=hi);
            prod = stability_matrix(t, sigma)? * prod;
            worst = worst.max(norm_inf(&prod));
        }
    }
    Ok(worst)
}

/// Sampling of the sector `|arg z − π| ≤ α`: log-spaced radii and evenly spaced angles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorSampling {
    pub r_min: f64,
    pub r_max: f64,
    pub radii: usize,
    pub angles: usize,
}

impl SectorSampling {
    /// Sampling used for stability sectors.
    pub const STABILITY: SectorSampling = SectorSampling {
        r_min: 1e-4,
        r_max: 1e6,
        radii: 400,
        angles: 60,
    };
    /// Sampling used for boundary contraction factors.
    pub const CONTRACTION: SectorSampling = SectorSampling {
        r_min: 1e-6,
        r_max: 1e8,
        radii: 400,
        angles: 40,
    };

    pub fn radii(&self) -> Vec<f64> {
        let (a, b) = (self.r_min.log10(), self.r_max.log10());
        let n = self.radii.max(2);
        (0..n)
            .map(|i| 10f64.powf(a + (b - a) * i as f64 / (n - 1) as f64))
            .collect()
    }

    /// Angles `θ ∈ [0, α]` measured from the negative real axis. Matrices are
    /// real, so the conjugate half of the sector has the same spectra.
    pub fn angles(&self, alpha_deg: f64) -> Vec<f64> {
        let n = self.angles.max(2);
        (0..n)
            .map(|i| (alpha_deg * i as f64 / (n - 1) as f64).to_radians())
            .collect()
    }

    pub fn points(&self, alpha_deg: f64) -> Vec<Complex64> {
        let angles = self.angles(alpha_deg);
        let mut out = Vec::with_capacity(self.radii * angles.len());
        for r in self.radii() {
            for &th in &angles {
                out.push(Complex64::from_polar(r, std::f64::consts::PI - th));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanResult {
    pub passed: bool,
    pub worst_rho: f64,
    pub worst_re: f64,
    pub worst_im: f64,
    pub skipped: usize,
}

fn shifted_solve(
    lhs: &DMatrix<f64>,
    k: &DMatrix<f64>,
    z: Complex64,
    rhs: &DMatrix<Complex64>,
) -> Option<DMatrix<Complex64>> {
    let m = to_complex(lhs) - to_complex(k) * z;
    m.lu().solve(rhs)
}

/// Spectral radius of `M(z) = (A − zK)⁻¹B(1)`.
pub fn stability_function_radius(t: &PeerTriplet, z: Complex64) -> Result<Option<f64>> {
    let b = to_complex(&assemble_b(t, 1.0)?);
    Ok(shifted_solve(&t.a, &t.k_matrix(), z, &b).and_then(|m| spectral_radius_complex(&m)))
}

fn scan_points(t: &PeerTriplet, points: &[Complex64], limit: f64) -> Result<ScanResult> {
    let b = to_complex(&assemble_b(t, 1.0)?);
    let k = t.k_matrix();
    let mut worst = (0.0f64, Complex64::new(0.0, 0.0));
    let mut skipped = 0;
    for &z in points {
        match shifted_solve(&t.a, &k, z, &b).and_then(|m| spectral_radius_complex(&m)) {
            Some(rho) if rho > worst.0 => worst = (rho, z),
            Some(_) => {}
            None => skipped += 1,
        }
    }
    Ok(ScanResult {
        passed: worst.0 <= limit,
        worst_rho: worst.0,
        worst_re: worst.1.re,
        worst_im: worst.1.im,
        skipped,
    })
}

pub const STABILITY_SLACK: f64 = 1e-8;

/// Samples `ρ(M(z))` on the sector `|arg z − π| ≤ angle`.
pub fn stability_scan(t: &PeerTriplet, angle_deg: f64, sampling: &SectorSampling) -> Result<ScanResult> {
    if !(0.0..=90.0).contains(&angle_deg) {
        return Err(PeerError::InvalidArgument(format!(
            "sector angle must lie in [0, 90], got {angle_deg}"
        )));
    }
    scan_points(t, &sampling.points(angle_deg), 1.0 + STABILITY_SLACK)
}

/// Samples `ρ(M(iξ))` for `ξ ∈ [−ξ_max, ξ_max]`.
pub fn imaginary_axis_scan(t: &PeerTriplet, xi_max: f64, samples: usize) -> Result<ScanResult> {
    let n = samples.max(2);
    let points: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(0.0, -xi_max + 2.0 * xi_max * i as f64 / (n - 1) as f64))
        .collect();
    scan_points(t, &points, 1.0 + STABILITY_SLACK)
}

/// `S(z) = (Ã − zK)⁻¹(Ã − A_b)`.
pub fn iteration_matrix(t: &PeerTriplet, which: Boundary, z: Complex64) -> Option<DMatrix<Complex64>> {
    let (tilde, full) = t.boundary_pair(which);
    let rhs = to_complex(&(tilde - full));
    shifted_solve(tilde, &t.k_matrix(), z, &rhs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionFactors {
    pub rho_real: f64,
    pub rho_sector: f64,
    pub skipped: usize,
}

pub fn contraction_factors(
    t: &PeerTriplet,
    which: Boundary,
    angle_deg: f64,
    sampling: &SectorSampling,
) -> ContractionFactors {
    let mut rho_real = 0.0f64;
    let mut rho_sector = 0.0f64;
    let mut skipped = 0;
    for z in sampling.points(angle_deg) {
        match iteration_matrix(t, which, z).and_then(|m| spectral_radius_complex(&m)) {
            Some(rho) => {
                rho_sector = rho_sector.max(rho);
                if z.im.abs() <= 1e-12 * z.norm() {
                    rho_real = rho_real.max(rho);
                }
            }
            None => skipped += 1,
        }
    }
    ContractionFactors {
        rho_real,
        rho_sector,
        skipped,
    }
}

/// `min Re λ(K⁻¹A_b)`.
pub fn eigenvalue_margin(t: &PeerTriplet, which: Boundary) -> f64 {
    let (_, full) = t.boundary_pair(which);
    let kinv = DMatrix::from_diagonal(&DVector::from_iterator(t.s, t.k.iter().map(|x| 1.0 / x)));
    (kinv * full)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min)
}

/// Congruent standard matrix entries implied by `A` (not stored for every triplet).
pub fn implied_ahat(t: &PeerTriplet) -> DMatrix<f64> {
    congruent_a(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet::{build_triplet, KNOWN_TRIPLETS};

    #[test]
    fn order_conditions_hold() {
        for name in KNOWN_TRIPLETS {
            let t = build_triplet(name).unwrap();
            for sigma in STRUCTURE_SIGMAS {
                let r = verify_order_conditions(&t, sigma).unwrap();
                assert!(r.max() <= 1e-12, "{name} σ={sigma}: {r:?}");
            }
        }
    }

    #[test]
    fn perturbation_is_detected_in_start_condition() {
        let mut t = build_triplet("AP4o33vgi").unwrap();
        t.a0[(0, 0)] += 1e-3;
        let r = verify_order_conditions(&t, 1.0).unwrap();
        assert!((r.start - 1e-3).abs() < 1e-4, "{r:?}");
        assert_eq!(r.worst().0, "start");
    }

    #[test]
    fn vgi_structure() {
        let t = build_triplet("AP4o33vgi").unwrap();
        let s = verify_structure(&t).unwrap();
        assert_eq!(s.flip.a, 0.0);
        assert_eq!(s.flip.k, 0.0);
        assert_eq!(s.flip.boundary, 0.0);
        assert!(s.flip.max() < 1e-12);
        assert!(s.lsrk && s.adjoint_lsrk);
        assert_eq!((s.rank_a0, s.rank_an), (1, 1));
        assert!(s.phi0_constraint < 1e-12 && s.phin_constraint < 1e-12);
        assert!(s.q33_deviation < 1e-12 && s.eigenvector_residual < 1e-12);
        assert!(s.tilde_structure);
    }

    #[test]
    fn vsi_lsrk_only_forward() {
        let t = build_triplet("AP4o33vsi").unwrap();
        let s = verify_structure(&t).unwrap();
        assert!(s.lsrk);
        assert!(!s.adjoint_lsrk);
        assert_eq!((s.rank_a0, s.rank_an), (1, 1));
        assert!(s.flip.max() > 1e-3);
    }

    #[test]
    fn vgi_beta_flip_duality() {
        let t = build_triplet("AP4o33vgi").unwrap();
        let pi = flip(4);
        for sigma in [0.6, 1.0, 1.9] {
            let fwd = error_coefficients(&t, 1.0 / sigma).unwrap().beta3;
            let adj = error_coefficients(&t, sigma).unwrap().beta3_adj;
            // time reversal flips the sign of the third derivative
            assert!((&pi * fwd + adj).amax() < 1e-12);
        }
    }

    #[test]
    fn zero_at_z_zero_contraction_is_finite() {
        for name in KNOWN_TRIPLETS {
            let t = build_triplet(name).unwrap();
            for which in [Boundary::Start, Boundary::End] {
                let m = iteration_matrix(&t, which, Complex64::new(0.0, 0.0)).unwrap();
                let rho = spectral_radius_complex(&m).unwrap();
                let f = contraction_factors(&t, which, 0.0, &SectorSampling::CONTRACTION);
                assert!(rho.is_finite() && rho <= f.rho_real * (1.0 + 1e-6), "{name} {which:?}: {rho} vs {}", f.rho_real);
            }
        }
    }

    #[test]
    fn sector_sampling_shape() {
        let s = SectorSampling::CONTRACTION;
        let r = s.radii();
        assert_eq!(r.len(), 400);
        assert!((r[0] - 1e-6).abs() < 1e-20 && (r[399] / 1e8 - 1.0).abs() < 1e-12);
        assert_eq!(s.points(30.0).len(), 400 * 40);
    }
}
