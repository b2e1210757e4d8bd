//! Small dense helpers (Vandermonde/Pascal machinery, spectra) and the
//! structured solvers used by the benchmark problems.

pub mod sparse;
pub mod tridiag;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Polynomial-basis matrices tied to a node vector.
///
/// `V_r = (1, c, …, c^{r-1})`, `P_r = (binom(j-1, i-1))`, `Ẽ_r = (i δ_{i+1,j})`
/// and `S_r(σ) = diag(σ^{i-1})`.
#[derive(Debug, Clone)]
pub struct VandermondeKit {
    nodes: Vec<f64>,
}

impl VandermondeKit {
    pub fn new(nodes: &[f64]) -> Self {
        Self {
            nodes: nodes.to_vec(),
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `s × r` Vandermonde matrix with columns `c^0, …, c^{r-1}`.
    pub fn vandermonde(&self, r: usize) -> DMatrix<f64> {
        vandermonde(&self.nodes, r)
    }

    pub fn pascal(&self, r: usize) -> DMatrix<f64> {
        pascal(r)
    }

    pub fn pascal_inverse(&self, r: usize) -> DMatrix<f64> {
        pascal_inverse(r)
    }

    pub fn shift(&self, r: usize) -> DMatrix<f64> {
        scaled_shift(r)
    }

    pub fn ratio_scaling(&self, sigma: f64, r: usize) -> DMatrix<f64> {
        ratio_scaling(sigma, r)
    }

    /// Inverse of the square Vandermonde matrix, `None` for repeated nodes.
    pub fn vandermonde_inverse(&self) -> Option<DMatrix<f64>> {
        self.vandermonde(self.nodes.len()).try_inverse()
    }
}

pub fn vandermonde(nodes: &[f64], r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nodes.len(), r, |i, j| nodes[i].powi(j as i32))
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn pascal(r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, r, |i, j| binomial(j, i))
}

/// `P_r^{-1}` has the alternating-sign entries `(-1)^{i+j} binom(j-1, i-1)`.
pub fn pascal_inverse(r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, r, |i, j| {
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * binomial(j, i)
    })
}

pub fn scaled_shift(r: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, r, |i, j| if j == i + 1 { (i + 1) as f64 } else { 0.0 })
}

pub fn ratio_scaling(sigma: f64, r: usize) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_fn(r, |i, _| sigma.powi(i as i32)))
}

/// Matrix exponential of a nilpotent matrix by its finite Taylor series.
pub fn expm_nilpotent(e: &DMatrix<f64>) -> DMatrix<f64> {
    let n = e.nrows();
    let mut out = DMatrix::identity(n, n);
    let mut term = DMatrix::identity(n, n);
    for k in 1..=n {
        term = &term * e / k as f64;
        out += &term;
    }
    out
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn max_abs_vec(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Maximum row sum.
pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    m.complex_eigenvalues().iter().copied().collect()
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Spectral radius of a complex matrix; `None` if the Schur iteration fails.
pub fn spectral_radius_complex(m: &DMatrix<Complex64>) -> Option<f64> {
    m.clone()
        .eigenvalues()
        .map(|ev| ev.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Singular values in descending order.
pub fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sv
}

pub fn numerical_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    singular_values(m).iter().filter(|&&s| s > tol).count()
}

/// Interpolating-polynomial coefficients of stage data, `V^{-1}`-weighted,
/// returned as the row vector that evaluates the interpolant at local
/// coordinate `x`.
pub fn evaluation_row(v_inv: &DMatrix<f64>, x: f64) -> Vec<f64> {
    let s = v_inv.nrows();
    (0..s)
        .map(|j| (0..s).map(|k| x.powi(k as i32) * v_inv[(k, j)]).sum())
        .collect()
}
