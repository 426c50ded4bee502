//! Constrained sparse-Gaussian solver.
//!
//! The posterior of the latent field at fixed hyperparameters is Gaussian
//! with precision `Q_post = A_d' D A_d + Q_prior(h)` restricted to the
//! constraint subspace `{x : A_c x = 0}`. `Q_post` alone can be singular
//! (intrinsic blocks), so all factorizations run on the augmented matrix
//! `Q̃ = Q_post + A_c' A_c`, which is positive definite whenever `Q_post` is
//! positive definite on the subspace and agrees with `Q_post` there.
//! Conditioning by kriging then yields exact constrained means and draws,
//! and the subspace determinant identity
//! `det_S(Q_post) = det(Q̃) · det(A_c Q̃⁻¹ A_c')` (constraint rows are
//! orthonormal, so `det(A_c A_c') = 1`) yields the exact marginal
//! likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::gmrf::LN_2PI;
use crate::linalg::LdlFactor;

use super::LatentSystem;

/// Factorized constrained posterior at one hyperparameter value.
pub struct SystemSolver<'a> {
    sys: &'a LatentSystem,
    hypers: Vec<f64>,
    factor: LdlFactor,
    /// Constrained posterior mean x̂.
    mean: Vec<f64>,
    /// W = Q̃⁻¹ A_c', stored as one length-n column per constraint.
    w_cols: Vec<Vec<f64>>,
    /// Dense Cholesky of S = A_c Q̃⁻¹ A_c' (absent when there are no
    /// constraints).
    s_chol: Option<Cholesky<f64, Dyn>>,
    logdet_qtilde: f64,
    logdet_s: f64,
    /// True when the factorization needed the one-shot diagonal jitter.
    pub jittered: bool,
}

impl<'a> SystemSolver<'a> {
    /// Assembles and factorizes Q̃ at `hypers`, solves for the constrained
    /// mean, and prepares the kriging corrector.
    pub fn factorize(sys: &'a LatentSystem, hypers: &[f64]) -> Result<Self> {
        assert_eq!(hypers.len(), sys.n_hypers(), "hyper vector length mismatch");
        let mut vals = sys.constant_vals.clone();
        for (bi, block) in sys.blocks.iter().enumerate() {
            let (h0, h1) = sys.hyper_slices[bi];
            let coefs = block.term_coefficients(&hypers[h0..h1]);
            for (term, &coef) in sys.term_slots[bi].iter().zip(&coefs) {
                for &(slot, v) in term {
                    vals[slot] += coef * v;
                }
            }
        }

        let (factor, jittered) = match LdlFactor::new(&sys.pattern, &vals, &sys.symbolic) {
            Ok(f) => (f, false),
            Err(_) => {
                // one retry with diagonal jitter scaled to the matrix
                let mut max_diag: f64 = 0.0;
                for j in 0..sys.pattern.n {
                    if let Some(slot) = diag_slot(sys, j) {
                        max_diag = max_diag.max(vals[slot].abs());
                    }
                }
                let jitter = 1e-10 * max_diag.max(1.0);
                for j in 0..sys.pattern.n {
                    if let Some(slot) = diag_slot(sys, j) {
                        vals[slot] += jitter;
                    }
                }
                let f = LdlFactor::new(&sys.pattern, &vals, &sys.symbolic).map_err(|e| {
                    Error::Factorization(format!(
                        "posterior precision not positive definite even after jitter: {e}"
                    ))
                })?;
                (f, true)
            }
        };
        let logdet_qtilde = factor.logdet();

        // unconstrained mean m = Q̃⁻¹ b
        let m = factor.solve(&sys.rhs);

        // kriging pieces
        let k = sys.constraints.len();
        let mut w_cols = Vec::with_capacity(k);
        for row in &sys.constraints {
            let mut e = vec![0.0; sys.n];
            for &(idx, v) in row {
                e[idx] = v;
            }
            factor.solve_in_place(&mut e);
            w_cols.push(e);
        }
        let (s_chol, logdet_s) = if k == 0 {
            (None, 0.0)
        } else {
            let mut s = DMatrix::<f64>::zeros(k, k);
            for (r, row) in sys.constraints.iter().enumerate() {
                for c in 0..k {
                    let mut acc = 0.0;
                    for &(idx, v) in row {
                        acc += v * w_cols[c][idx];
                    }
                    s[(r, c)] = acc;
                }
            }
            // symmetrize against round-off before factorizing
            let s = (&s + s.transpose()) * 0.5;
            let chol = Cholesky::new(s).ok_or_else(|| {
                Error::Factorization("constraint Gram matrix not positive definite".into())
            })?;
            let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            (Some(chol), logdet)
        };

        let mut solver = Self {
            sys,
            hypers: hypers.to_vec(),
            factor,
            mean: Vec::new(),
            w_cols,
            s_chol,
            logdet_qtilde,
            logdet_s,
            jittered,
        };
        solver.mean = solver.krige(m);
        Ok(solver)
    }

    /// Applies the kriging corrector: v ↦ v − W S⁻¹ (A_c v).
    fn krige(&self, mut v: Vec<f64>) -> Vec<f64> {
        let k = self.sys.constraints.len();
        if k == 0 {
            return v;
        }
        let mut av = DVector::<f64>::zeros(k);
        for (r, row) in self.sys.constraints.iter().enumerate() {
            av[r] = row.iter().map(|&(idx, c)| c * v[idx]).sum();
        }
        let coef = self.s_chol.as_ref().unwrap().solve(&av);
        for (j, col) in self.w_cols.iter().enumerate() {
            let c = coef[j];
            if c != 0.0 {
                for (vi, wi) in v.iter_mut().zip(col) {
                    *vi -= c * wi;
                }
            }
        }
        v
    }

    /// Constrained posterior mean x̂.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// One exact draw from the constrained posterior.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.sys.n).map(|_| rng.sample(StandardNormal)).collect();
        self.factor.whiten_solve_in_place(&mut z); // z ~ N(0, Q̃⁻¹)
        let corrected = self.krige(z);
        corrected
            .into_iter()
            .zip(&self.mean)
            .map(|(u, m)| u + m)
            .collect()
    }

    /// Log marginal likelihood log p(y | hypers): the Gaussian likelihood
    /// with the latent field integrated out over the constraint subspace.
    pub fn marginal_loglik(&self) -> f64 {
        let sys = self.sys;
        // data fit at the mean
        let mut quad = 0.0;
        for c in &sys.cells {
            let eta: f64 = c.coords.iter().map(|&p| self.mean[p]).sum();
            let r = c.y - eta;
            quad += r * r / c.var_y;
        }
        let data_at_mean = -0.5 * sys.data_log_norm - 0.5 * quad;
        let prior_at_mean = sys.prior_logdensity(&self.mean, &self.hypers);
        let n_free = (sys.n - sys.constraints.len()) as f64;
        // minus the posterior subspace density at its own mean
        let neg_post_at_mean =
            0.5 * n_free * LN_2PI - 0.5 * (self.logdet_qtilde + self.logdet_s);
        data_at_mean + prior_at_mean + neg_post_at_mean
    }

    /// Marginal posterior variance of every latent coordinate. Costs n
    /// triangular solves; intended for tests and small systems.
    pub fn marginal_variances(&self) -> Vec<f64> {
        let n = self.sys.n;
        let k = self.sys.constraints.len();
        let mut out = vec![0.0; n];
        for i in 0..n {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            self.factor.solve_in_place(&mut e);
            let mut v = e[i];
            if k > 0 {
                // subtract w_i' S⁻¹ w_i with w_i = row i of W
                let mut wi = DVector::<f64>::zeros(k);
                for j in 0..k {
                    wi[j] = self.w_cols[j][i];
                }
                let s_inv_wi = self.s_chol.as_ref().unwrap().solve(&wi);
                v -= wi.dot(&s_inv_wi);
            }
            out[i] = v;
        }
        out
    }

    /// Posterior variance of the survey-free linear predictor at one
    /// (area, year) grid point.
    pub fn eta_variance(&self, area: usize, year_idx: usize) -> f64 {
        let coords = self.sys.eta_design(area, year_idx);
        let mut v = vec![0.0; self.sys.n];
        for &p in &coords {
            v[p] += 1.0;
        }
        let qinv_v = self.factor.solve(&v);
        let mut var: f64 = coords.iter().map(|&p| qinv_v[p]).sum();
        let k = self.sys.constraints.len();
        if k > 0 {
            let mut wv = DVector::<f64>::zeros(k);
            for j in 0..k {
                wv[j] = coords.iter().map(|&p| self.w_cols[j][p]).sum();
            }
            let s_inv = self.s_chol.as_ref().unwrap().solve(&wv);
            var -= wv.dot(&s_inv);
        }
        var
    }
}

/// Slot of the diagonal entry of column `j`, if present in the pattern.
fn diag_slot(sys: &LatentSystem, j: usize) -> Option<usize> {
    let lo = sys.pattern.col_ptr[j];
    let hi = sys.pattern.col_ptr[j + 1];
    sys.pattern.row_idx[lo..hi].iter().position(|&r| r == j).map(|p| lo + p)
}

/// Convenience wrapper: factorize at `hypers` and return the log marginal
/// likelihood.
pub fn marginal_loglik(sys: &LatentSystem, hypers: &[f64]) -> Result<f64> {
    Ok(SystemSolver::factorize(sys, hypers)?.marginal_loglik())
}
