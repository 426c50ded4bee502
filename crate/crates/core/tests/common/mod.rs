//! Dense-matrix oracle for constrained latent-Gaussian inference.
#![allow(dead_code)] // shared across test binaries; not all use every helper
//!
//! Everything here recomputes what the sparse solver computes, using plain
//! covariance algebra on small systems: build the dense prior precision,
//! restrict it to the constraint subspace through an explicit orthonormal
//! null-space basis, and evaluate the Gaussian integrals directly. Tests
//! compare the production path against these numbers.

use nalgebra::{DMatrix, DVector};

use fpsae::inference::LatentSystem;

/// Dense prior precision Q_prior(h) over all latent coordinates.
pub fn dense_prior(sys: &LatentSystem, hypers: &[f64]) -> DMatrix<f64> {
    let n = sys.n;
    let mut q = DMatrix::<f64>::zeros(n, n);
    for (bi, block) in sys.blocks.iter().enumerate() {
        let (h0, h1) = sys.hyper_slices[bi];
        let off = sys.offsets[bi];
        let coefs = block.term_coefficients(&hypers[h0..h1]);
        for (term, &coef) in block.precision_terms().iter().zip(&coefs) {
            for &(r, c, v) in &term.entries {
                q[(off + r, off + c)] += coef * v;
                if r != c {
                    q[(off + c, off + r)] += coef * v;
                }
            }
        }
    }
    q
}

/// Dense design matrix (rows = likelihood cells), observation vector, and
/// observation variances.
pub fn dense_design(sys: &LatentSystem) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let m = sys.cells.len();
    let mut a = DMatrix::<f64>::zeros(m, sys.n);
    let mut y = DVector::<f64>::zeros(m);
    let mut var = DVector::<f64>::zeros(m);
    for (r, cell) in sys.cells.iter().enumerate() {
        for &p in &cell.coords {
            a[(r, p)] += 1.0;
        }
        y[r] = cell.y;
        var[r] = cell.var_y;
    }
    (a, y, var)
}

/// Dense constraint matrix A_c (k × n).
pub fn dense_constraints(sys: &LatentSystem) -> DMatrix<f64> {
    let k = sys.constraints.len();
    let mut a = DMatrix::<f64>::zeros(k, sys.n);
    for (r, row) in sys.constraints.iter().enumerate() {
        for &(idx, v) in row {
            a[(r, idx)] = v;
        }
    }
    a
}

/// Orthonormal basis of the null space of A_c, as columns of an
/// n × (n − k) matrix. Uses the eigendecomposition of the projector
/// I − A_c'(A_c A_c')⁻¹A_c.
pub fn null_basis(a_c: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let k = a_c.nrows();
    if k == 0 {
        return DMatrix::identity(n, n);
    }
    let gram = a_c * a_c.transpose();
    let gram_inv = gram.try_inverse().expect("constraint Gram must be invertible");
    let proj = DMatrix::identity(n, n) - a_c.transpose() * gram_inv * a_c;
    let eig = proj.symmetric_eigen();
    let mut cols = Vec::new();
    for j in 0..n {
        if eig.eigenvalues[j] > 0.5 {
            cols.push(eig.eigenvectors.column(j).into_owned());
        }
    }
    assert_eq!(cols.len(), n - k, "null basis dimension mismatch");
    DMatrix::from_columns(&cols)
}

/// Everything the dense path can say about one (system, hyper) pair.
pub struct DenseOracle {
    /// Constrained posterior mean.
    pub mean: Vec<f64>,
    /// Constrained posterior marginal variances.
    pub var: Vec<f64>,
    /// Full constrained posterior covariance.
    pub cov: DMatrix<f64>,
    /// Log marginal likelihood of the observations.
    pub loglik: f64,
}

/// Computes the oracle by full covariance algebra.
pub fn dense_oracle(sys: &LatentSystem, hypers: &[f64]) -> DenseOracle {
    let q_prior = dense_prior(sys, hypers);
    let (a_d, y, var) = dense_design(sys);
    let a_c = dense_constraints(sys);
    let b = null_basis(&a_c, sys.n);

    // posterior on the subspace
    let d_inv = DMatrix::from_diagonal(&var.map(|v| 1.0 / v));
    let q_post = &q_prior + a_d.transpose() * &d_inv * &a_d;
    let m_sub = b.transpose() * &q_post * &b;
    let m_inv = m_sub.clone().try_inverse().expect("subspace posterior must be PD");
    let rhs = b.transpose() * a_d.transpose() * &d_inv * &y;
    let mean_sub = &m_inv * rhs;
    let mean = &b * mean_sub;
    let cov = &b * &m_inv * b.transpose();
    let var_diag: Vec<f64> = (0..sys.n).map(|i| cov[(i, i)]).collect();

    // marginal likelihood: y ~ N(0, G G' + D) with G = A_d B V Λ^{-1/2} from
    // the eigendecomposition B'Q_prior B = V Λ V'. Working with
    // H = D^{-1/2} G keeps the computation well conditioned even with the
    // near-diffuse intercept prior in the covariance.
    let m = y.len();
    let loglik = if m == 0 {
        0.0
    } else {
        let p_sub = b.transpose() * &q_prior * &b;
        let eig = p_sub.symmetric_eigen();
        let r = b.ncols();
        let mut h = &a_d * &b * &eig.eigenvectors; // m×r
        let mut y_t = DVector::<f64>::zeros(m);
        for j in 0..r {
            let lambda = eig.eigenvalues[j];
            assert!(lambda > 0.0, "subspace prior must be PD");
            let scale = 1.0 / lambda.sqrt();
            for i in 0..m {
                h[(i, j)] *= scale;
            }
        }
        for i in 0..m {
            let sd = var[i].sqrt();
            for j in 0..r {
                h[(i, j)] /= sd;
            }
            y_t[i] = y[i] / sd;
        }
        let svd = h.svd(true, false);
        let u = svd.u.expect("svd with u requested");
        let sv = svd.singular_values;
        let mut logdet: f64 = var.iter().map(|v| v.ln()).sum();
        let mut quad = y_t.norm_squared();
        for j in 0..sv.len() {
            let s2 = sv[j] * sv[j];
            logdet += (1.0 + s2).ln();
            let proj = u.column(j).dot(&y_t);
            quad -= proj * proj * s2 / (1.0 + s2);
        }
        -0.5 * (m as f64 * fpsae::gmrf::LN_2PI + logdet + quad)
    };

    DenseOracle {
        mean: mean.iter().copied().collect(),
        var: var_diag,
        cov,
        loglik,
    }
}
