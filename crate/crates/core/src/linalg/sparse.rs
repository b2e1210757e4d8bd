//! Compressed-row matrices with an ILU(0)-preconditioned restarted GMRES.

use std::sync::OnceLock;

use crate::error::{PeerError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a square matrix from `(row, col, value)` entries, summing
    /// duplicates. Every row receives an explicit diagonal entry.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for &(i, j, v) in entries {
            rows[i].push((j, v));
        }
        for (i, row) in rows.iter_mut().enumerate() {
            row.push((i, 0.0));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in rows.iter_mut() {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for &(j, v) in row.iter() {
                if last == Some(j) {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(j);
                    values.push(v);
                    last = Some(j);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            out[i] = acc;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut entries = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                entries.push((self.col_idx[k], i, self.values[k]));
            }
        }
        Self::from_triplets(self.n, &entries)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let row = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        match row.binary_search(&j) {
            Ok(k) => self.values[self.row_ptr[i] + k],
            Err(_) => 0.0,
        }
    }
}

/// Incomplete LU factorization with the sparsity pattern of the matrix.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag_pos: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.col_idx[k] == i {
                    diag_pos[i] = k;
                }
            }
        }
        let mut marker = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                marker[lu.col_idx[k]] = k;
            }
            for kk in start..end {
                let k = lu.col_idx[kk];
                if k >= i {
                    break;
                }
                let pivot = lu.values[diag_pos[k]];
                if pivot == 0.0 {
                    return Err(PeerError::LinearSolver(format!("zero ILU pivot in row {k}")));
                }
                let factor = lu.values[kk] / pivot;
                lu.values[kk] = factor;
                for jj in diag_pos[k] + 1..lu.row_ptr[k + 1] {
                    let j = lu.col_idx[jj];
                    let pos = marker[j];
                    if pos != usize::MAX && pos >= start && pos < end {
                        lu.values[pos] -= factor * lu.values[jj];
                    }
                }
            }
            for k in start..end {
                marker[lu.col_idx[k]] = usize::MAX;
            }
            if lu.values[diag_pos[i]] == 0.0 {
                return Err(PeerError::LinearSolver(format!("zero ILU pivot in row {i}")));
            }
        }
        Ok(Self { lu, diag_pos })
    }

    pub fn apply(&self, b: &[f64], x: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut acc = b[i];
            for k in lu.row_ptr[i]..self.diag_pos[i] {
                acc -= lu.values[k] * x[lu.col_idx[k]];
            }
            x[i] = acc;
        }
        for i in (0..lu.n).rev() {
            let mut acc = x[i];
            for k in self.diag_pos[i] + 1..lu.row_ptr[i + 1] {
                acc -= lu.values[k] * x[lu.col_idx[k]];
            }
            x[i] = acc / lu.values[self.diag_pos[i]];
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GmresOptions {
    pub restart: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
}

impl Default for GmresOptions {
    fn default() -> Self {
        Self {
            restart: 40,
            max_iters: 2000,
            rel_tol: 1e-13,
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned restarted GMRES; returns the iteration count.
pub fn gmres(
    a: &CsrMatrix,
    precond: &Ilu0,
    b: &[f64],
    x: &mut [f64],
    opts: &GmresOptions,
) -> Result<usize> {
    let n = a.dim();
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(0);
    }
    let target = opts.rel_tol * bnorm;
    let m = opts.restart.max(1);
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut total = 0;
    let mut last_res = f64::INFINITY;
    loop {
        a.matvec(x, &mut r);
        for i in 0..n {
            r[i] = b[i] - r[i];
        }
        let beta = norm2(&r);
        last_res = last_res.min(beta);
        if beta <= target {
            return Ok(total);
        }
        if total >= opts.max_iters {
            return Err(PeerError::LinearSolver(format!(
                "GMRES stalled at relative residual {:.3e} after {} iterations",
                beta / bnorm,
                total
            )));
        }
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut h = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            precond.apply(&basis[k], &mut z);
            a.matvec(&z, &mut w);
            for (j, vj) in basis.iter().enumerate() {
                let hjk = dot(&w, vj);
                h[j][k] = hjk;
                for (wi, vi) in w.iter_mut().zip(vj) {
                    *wi -= hjk * vi;
                }
            }
            let hn = norm2(&w);
            h[k + 1][k] = hn;
            for j in 0..k {
                let tmp = cs[j] * h[j][k] + sn[j] * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = tmp;
            }
            let denom = (h[k][k] * h[k][k] + h[k + 1][k] * h[k + 1][k]).sqrt();
            if denom == 0.0 {
                break;
            }
            cs[k] = h[k][k] / denom;
            sn[k] = h[k + 1][k] / denom;
            h[k][k] = denom;
            h[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            k_used = k + 1;
            total += 1;
            if g[k + 1].abs() <= target || hn == 0.0 || total >= opts.max_iters {
                break;
            }
            basis.push(w.iter().map(|v| v / hn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[i][j] * y[j];
            }
            y[i] = acc / h[i][i];
        }
        let mut update = vec![0.0; n];
        for (j, yj) in y.iter().enumerate() {
            for (u, v) in update.iter_mut().zip(&basis[j]) {
                *u += yj * v;
            }
        }
        precond.apply(&update, &mut z);
        for (xi, zi) in x.iter_mut().zip(&z) {
            *xi += zi;
        }
    }
}

/// Factored operator: ILU(0) of the matrix, solved by GMRES. The transposed
/// factorization is built on first use.
#[derive(Debug)]
pub struct SparseSolver {
    a: CsrMatrix,
    ilu: Ilu0,
    transposed: OnceLock<Result<(CsrMatrix, Ilu0)>>,
    pub options: GmresOptions,
}

impl SparseSolver {
    pub fn new(a: CsrMatrix, options: GmresOptions) -> Result<Self> {
        let ilu = Ilu0::new(&a)?;
        Ok(Self {
            a,
            ilu,
            transposed: OnceLock::new(),
            options,
        })
    }

    pub fn solve(&self, b: &[f64], x: &mut [f64]) -> Result<usize> {
        x.iter_mut().for_each(|v| *v = 0.0);
        gmres(&self.a, &self.ilu, b, x, &self.options)
    }

    pub fn solve_transpose(&self, b: &[f64], x: &mut [f64]) -> Result<usize> {
        let (at, ilu_t) = self
            .transposed
            .get_or_init(|| {
                let at = self.a.transpose();
                Ilu0::new(&at).map(|ilu| (at, ilu))
            })
            .as_ref()
            .map_err(Clone::clone)?;
        x.iter_mut().for_each(|v| *v = 0.0);
        gmres(at, ilu_t, b, x, &self.options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_2d(m: usize, shift: f64) -> CsrMatrix {
        let n = m * m;
        let mut e = Vec::new();
        for r in 0..m {
            for c in 0..m {
                let i = r * m + c;
                e.push((i, i, shift + 4.0));
                if r > 0 {
                    e.push((i, i - m, -1.0));
                }
                if r + 1 < m {
                    e.push((i, i + m, -1.0));
                }
                if c > 0 {
                    e.push((i, i - 1, -1.2));
                }
                if c + 1 < m {
                    e.push((i, i + 1, -0.8));
                }
            }
        }
        CsrMatrix::from_triplets(n, &e)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = CsrMatrix::from_triplets(2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, -1.0)]);
        assert_eq!(a.get(0, 1), 3.0);
        assert_eq!(a.get(1, 1), 0.0);
        assert_eq!(a.transpose().get(1, 0), 3.0);
    }

    #[test]
    fn gmres_solves_nonsymmetric_system_and_transpose() {
        let a = laplace_2d(20, 0.3);
        let n = a.dim();
        let b: Vec<f64> = (0..n).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let solver = SparseSolver::new(a.clone(), GmresOptions::default()).unwrap();
        let mut x = vec![0.0; n];
        solver.solve(&b, &mut x).unwrap();
        let mut ax = vec![0.0; n];
        a.matvec(&x, &mut ax);
        let err = ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
        solver.solve_transpose(&b, &mut x).unwrap();
        a.transpose().matvec(&x, &mut ax);
        let err = ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(err < 1e-10, "{err}");
    }
}
