use crate::error::{PeerError, Result};

/// Tridiagonal matrix stored by diagonals. `lower[i]` is entry `(i, i-1)`,
/// `upper[i]` is entry `(i, i+1)`; `lower[0]` and `upper[n-1]` are unused.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn new(lower: Vec<f64>, diag: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), diag.len());
        assert_eq!(upper.len(), diag.len());
        Self { lower, diag, upper }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.lower[i] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.upper[i] * x[i + 1];
            }
            out[i] = acc;
        }
    }

    pub fn matvec_transpose(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.upper[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.lower[i + 1] * x[i + 1];
            }
            out[i] = acc;
        }
    }

    /// LU factors of `alpha I - gamma T` (no pivoting).
    pub fn factor_shifted(&self, alpha: f64, gamma: f64) -> Result<TridiagonalLu> {
        let n = self.dim();
        let lower: Vec<f64> = self.lower.iter().map(|x| -gamma * x).collect();
        let upper: Vec<f64> = self.upper.iter().map(|x| -gamma * x).collect();
        let diag: Vec<f64> = self.diag.iter().map(|x| alpha - gamma * x).collect();
        let mut mult = vec![0.0; n];
        let mut piv = vec![0.0; n];
        piv[0] = diag[0];
        for i in 1..n {
            if piv[i - 1] == 0.0 || !piv[i - 1].is_finite() {
                return Err(PeerError::LinearSolver(format!("zero pivot in tridiagonal row {}", i - 1)));
            }
            mult[i] = lower[i] / piv[i - 1];
            piv[i] = diag[i] - mult[i] * upper[i - 1];
        }
        if piv[n - 1] == 0.0 || !piv[n - 1].is_finite() {
            return Err(PeerError::LinearSolver("zero pivot in last tridiagonal row".into()));
        }
        Ok(TridiagonalLu { mult, piv, upper })
    }
}

/// Factorization `L U` with unit-lower `L` (multipliers) and upper `U`
/// (pivots plus the unchanged super-diagonal).
#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    mult: Vec<f64>,
    piv: Vec<f64>,
    upper: Vec<f64>,
}

impl TridiagonalLu {
    pub fn solve(&self, b: &[f64], x: &mut [f64]) {
        let n = self.piv.len();
        x[0] = b[0];
        for i in 1..n {
            x[i] = b[i] - self.mult[i] * x[i - 1];
        }
        x[n - 1] /= self.piv[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = (x[i] - self.upper[i] * x[i + 1]) / self.piv[i];
        }
    }

    /// Solves with the transposed matrix `U^T L^T`.
    pub fn solve_transpose(&self, b: &[f64], x: &mut [f64]) {
        let n = self.piv.len();
        x[0] = b[0] / self.piv[0];
        for i in 1..n {
            x[i] = (b[i] - self.upper[i - 1] * x[i - 1]) / self.piv[i];
        }
        for i in (0..n - 1).rev() {
            x[i] -= self.mult[i + 1] * x[i + 1];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Tridiagonal {
        Tridiagonal::new(
            vec![0.0, 1.0, 0.5, 2.0, -1.0],
            vec![-3.0, -2.0, -4.0, -2.5, -3.0],
            vec![1.5, 0.7, 1.0, 0.3, 0.0],
        )
    }

    #[test]
    fn shifted_solve_and_transpose() {
        let t = sample();
        let (alpha, gamma) = (1.3, 0.4);
        let lu = t.factor_shifted(alpha, gamma).unwrap();
        let b = [1.0, -2.0, 0.5, 3.0, -1.0];
        let mut x = [0.0; 5];
        lu.solve(&b, &mut x);
        let mut tx = [0.0; 5];
        t.matvec(&x, &mut tx);
        for i in 0..5 {
            assert!((alpha * x[i] - gamma * tx[i] - b[i]).abs() < 1e-13);
        }
        lu.solve_transpose(&b, &mut x);
        t.matvec_transpose(&x, &mut tx);
        for i in 0..5 {
            assert!((alpha * x[i] - gamma * tx[i] - b[i]).abs() < 1e-13);
        }
    }
}
