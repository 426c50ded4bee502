//! Upper-triangle compressed-sparse-column storage for symmetric matrices.
//!
//! A matrix is split into a [`SymCscPattern`] (structure) and a dense slot
//! vector of numeric values. Building the pattern once and re-filling values
//! lets us re-factorize many matrices that share a sparsity structure, which
//! is the hot path when scanning hyperparameters.

/// Sparsity structure of a symmetric matrix, storing the upper triangle
/// (including the diagonal) in CSC form with row indices sorted within each
/// column.
#[derive(Debug, Clone)]
pub struct SymCscPattern {
    /// Matrix dimension.
    pub n: usize,
    /// Column pointers, length `n + 1`.
    pub col_ptr: Vec<usize>,
    /// Row indices, length `col_ptr[n]`; `row_idx[p] <= j` for `p` in column `j`.
    pub row_idx: Vec<usize>,
}

impl SymCscPattern {
    /// Number of stored entries (upper triangle incl. diagonal).
    pub fn nnz(&self) -> usize {
        self.col_ptr[self.n]
    }

    /// Builds a pattern from a list of `(row, col)` keys with `row <= col`.
    ///
    /// Duplicate keys are merged. Returns the pattern together with a slot map
    /// of the same length as `keys`: `slot[k]` is the index into the value
    /// vector where the contribution of `keys[k]` must be accumulated.
    ///
    /// Panics if a key lies in the strict lower triangle or out of range;
    /// keys are produced by assembly code, so that is a programming error.
    pub fn from_keys(n: usize, keys: &[(usize, usize)]) -> (Self, Vec<usize>) {
        for &(r, c) in keys {
            assert!(r <= c && c < n, "entry ({r},{c}) outside upper triangle of {n}x{n}");
        }
        let mut order: Vec<usize> = (0..keys.len()).collect();
        order.sort_unstable_by_key(|&k| (keys[k].1, keys[k].0));

        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::new();
        let mut slot = vec![0usize; keys.len()];
        let mut prev: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c) = keys[k];
            if prev != Some((r, c)) {
                row_idx.push(r);
                col_ptr[c + 1] += 1;
                prev = Some((r, c));
            }
            slot[k] = row_idx.len() - 1;
        }
        for j in 0..n {
            col_ptr[j + 1] += col_ptr[j];
        }
        (Self { n, col_ptr, row_idx }, slot)
    }

    /// Computes `y = A x` for the full symmetric matrix described by this
    /// pattern and the value vector `vals` (one value per stored entry).
    pub fn mul_vec(&self, vals: &[f64], x: &[f64]) -> Vec<f64> {
        assert_eq!(vals.len(), self.nnz());
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                let v = vals[p];
                y[i] += v * x[j];
                if i != j {
                    y[j] += v * x[i];
                }
            }
        }
        y
    }

    /// Expands pattern + values into a dense symmetric matrix (tests and
    /// small-scale oracles only).
    pub fn to_dense(&self, vals: &[f64]) -> nalgebra::DMatrix<f64> {
        assert_eq!(vals.len(), self.nnz());
        let mut m = nalgebra::DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[p];
                m[(i, j)] = vals[p];
                m[(j, i)] = vals[p];
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn merges_duplicates_and_maps_slots() {
        // 3x3 with a duplicated (0,2) key and out-of-order input.
        let keys = [(1, 1), (0, 2), (0, 0), (0, 2), (2, 2), (1, 2)];
        let (pat, slot) = SymCscPattern::from_keys(3, &keys);
        assert_eq!(pat.nnz(), 5);
        assert_eq!(pat.col_ptr, vec![0, 1, 2, 5]);
        assert_eq!(pat.row_idx, vec![0, 1, 0, 1, 2]);
        // duplicate keys share a slot
        assert_eq!(slot[1], slot[3]);
        let mut vals = vec![0.0; pat.nnz()];
        let add = [2.0, 5.0, 1.0, 0.5, 3.0, -1.0];
        for (k, &v) in add.iter().enumerate() {
            vals[slot[k]] += v;
        }
        let d = pat.to_dense(&vals);
        let expect = nalgebra::DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 5.5, 0.0, 2.0, -1.0, 5.5, -1.0, 3.0],
        );
        assert_eq!(d, expect);
    }

    #[test]
    fn mul_vec_matches_dense() {
        let keys = [(0, 0), (1, 1), (2, 2), (0, 1), (1, 2)];
        let (pat, slot) = SymCscPattern::from_keys(3, &keys);
        let mut vals = vec![0.0; pat.nnz()];
        for (k, &v) in [4.0, 3.0, 2.0, -1.0, 0.5].iter().enumerate() {
            vals[slot[k]] += v;
        }
        let x = vec![1.0, -2.0, 0.25];
        let y = pat.mul_vec(&vals, &x);
        let d = pat.to_dense(&vals);
        let yd = d * nalgebra::DVector::from_column_slice(&x);
        for i in 0..3 {
            assert!((y[i] - yd[i]).abs() < 1e-14);
        }
    }
}
