//! Sparse LDL' factorization of symmetric positive-definite matrices.
//!
//! Up-looking algorithm: the symbolic phase computes the elimination tree and
//! per-column fill counts from the upper-triangle pattern; the numeric phase
//! performs one sparse triangular solve per column. The symbolic object is
//! computed once per sparsity pattern and reused across numeric
//! factorizations with different values.

use crate::error::{Error, Result};
use crate::linalg::sparse::SymCscPattern;

/// Elimination tree and column counts for a fixed sparsity pattern.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    parent: Vec<isize>,
    /// Column pointers of L (strict lower triangle), length `n + 1`.
    l_col_ptr: Vec<usize>,
}

impl LdlSymbolic {
    /// Analyzes the pattern: elimination tree plus nonzero counts of L.
    pub fn new(pat: &SymCscPattern) -> Self {
        let n = pat.n;
        let mut parent = vec![-1isize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for p in pat.col_ptr[k]..pat.col_ptr[k + 1] {
                let mut i = pat.row_idx[p];
                // walk from i up the etree until reaching a node already
                // visited in step k
                while i < k && flag[i] != k {
                    if parent[i] == -1 {
                        parent[i] = k as isize;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i] as usize;
                }
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for k in 0..n {
            l_col_ptr[k + 1] = l_col_ptr[k] + lnz[k];
        }
        Self { n, parent, l_col_ptr }
    }

    /// Number of nonzeros in the strict lower triangle of L.
    pub fn l_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }
}

/// Numeric factor `A = L D L'` with unit lower-triangular L and diagonal D.
#[derive(Debug, Clone)]
pub struct LdlFactor {
    n: usize,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    l_val: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactor {
    /// Factorizes the matrix given by `pat` and `vals`, reusing `sym`.
    ///
    /// Fails with [`Error::Factorization`] if a pivot is not strictly
    /// positive, i.e. the matrix is not positive definite.
    pub fn new(pat: &SymCscPattern, vals: &[f64], sym: &LdlSymbolic) -> Result<Self> {
        let n = pat.n;
        assert_eq!(vals.len(), pat.nnz());
        assert_eq!(sym.n, n);
        let mut l_row_idx = vec![0usize; sym.l_nnz()];
        let mut l_val = vec![0.0f64; sym.l_nnz()];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];

        for k in 0..n {
            // scatter column k of A (upper part = row k of lower part) into y,
            // collecting the nonzero pattern of row k of L in topological order
            let mut top = n;
            flag[k] = k;
            for p in pat.col_ptr[k]..pat.col_ptr[k + 1] {
                let mut i = pat.row_idx[p];
                y[i] += vals[p];
                let mut len = 0usize;
                while i < k && flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = sym.parent[i] as usize;
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }
            // sparse triangular solve: row k of L and pivot d[k]
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                let p2 = sym.l_col_ptr[i] + lnz[i];
                for p in sym.l_col_ptr[i]..p2 {
                    y[l_row_idx[p]] -= l_val[p] * yi;
                }
                let lki = yi / d[i];
                d[k] -= lki * yi;
                l_row_idx[p2] = k;
                l_val[p2] = lki;
                lnz[i] += 1;
            }
            if !(d[k] > 0.0) || !d[k].is_finite() {
                return Err(Error::Factorization(format!(
                    "non-positive pivot {} at column {k} of {n}",
                    d[k]
                )));
            }
        }
        Ok(Self {
            n,
            l_col_ptr: sym.l_col_ptr.clone(),
            l_row_idx,
            l_val,
            d,
        })
    }

    /// Matrix dimension.
    pub fn n(&self) -> usize {
        self.n
    }

    /// `log det A = sum_k log d_k`.
    pub fn logdet(&self) -> f64 {
        self.d.iter().map(|&v| v.ln()).sum()
    }

    /// Solves `A x = b` in place (`L D L' x = b`).
    pub fn solve_in_place(&self, x: &mut [f64]) {
        assert_eq!(x.len(), self.n);
        self.solve_l(x);
        for j in 0..self.n {
            x[j] /= self.d[j];
        }
        self.solve_lt(x);
    }

    /// Solves `A x = b`, returning a fresh vector.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Forward solve `L y = b` in place.
    fn solve_l(&self, x: &mut [f64]) {
        for j in 0..self.n {
            let xj = x[j];
            if xj != 0.0 {
                for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                    x[self.l_row_idx[p]] -= self.l_val[p] * xj;
                }
            }
        }
    }

    /// Backward solve `L' y = b` in place.
    fn solve_lt(&self, x: &mut [f64]) {
        for j in (0..self.n).rev() {
            let mut xj = x[j];
            for p in self.l_col_ptr[j]..self.l_col_ptr[j + 1] {
                xj -= self.l_val[p] * x[self.l_row_idx[p]];
            }
            x[j] = xj;
        }
    }

    /// Transforms iid standard normals into a draw with covariance `A^{-1}`:
    /// solves `L' v = D^{-1/2} z` in place.
    ///
    /// If `z ~ N(0, I)` then the result `v` satisfies `v ~ N(0, A^{-1})`,
    /// since `Cov(v) = (L')^{-1} D^{-1} L^{-1} = A^{-1}`.
    pub fn whiten_solve_in_place(&self, z: &mut [f64]) {
        assert_eq!(z.len(), self.n);
        for j in 0..self.n {
            z[j] /= self.d[j].sqrt();
        }
        self.solve_lt(z);
    }
}
