//! Structure matrices, constraints, and prior densities for the
//! random-effect families used in the smoothing model.
//!
//! Every random effect contributes a block to the latent field with precision
//! built from a fixed sparse structure matrix `R` scaled by hyperparameters
//! (`τ·R` for single-precision blocks; the BYM variants combine two pieces).
//! Intrinsic structures (random walks, ICAR) are rank-deficient; their null
//! spaces are removed by explicit linear constraints, which downstream
//! inference enforces exactly by conditioning.
//!
//! Constraint rows built here are unit-norm and mutually orthogonal, and span
//! exactly the null space of their structure. That makes the subspace prior
//! density analytic: for a block of dimension `n`, rank deficiency `d`, and
//! log generalized determinant `log|R|₊`,
//!
//! ```text
//! log π(x | Ax = 0) = ((n−d)/2)·(log τ − log 2π) + ½·log|R|₊ − (τ/2)·x'Rx
//! ```
//!
//! with respect to Lebesgue measure on the constrained subspace in an
//! orthonormal basis — the same convention the inference code uses for the
//! posterior, so normalizing constants cancel correctly in marginal
//! likelihoods.

use crate::error::{Error, Result};
use crate::survey::GeographyGraph;

/// ln(2π), used by every Gaussian normalizer here.
pub const LN_2PI: f64 = 1.8378770664093453;

/// Fixed prior precision of the global intercept. Small enough to be
/// effectively flat on the logit scale, large enough to keep the joint
/// precision positive definite without a constraint on μ.
pub const INTERCEPT_PRECISION: f64 = 1e-6;

/// Rate of the Gamma(shape = 1, rate = 5e-5) prior on block precisions
/// (shape–rate convention, so the prior mean is 1/rate = 20 000).
pub const PRECISION_PRIOR_RATE: f64 = 5e-5;

/// Structure matrix of one random-effect family: precision = τ·R with the
/// variance parameter factored out.
#[derive(Debug, Clone)]
pub struct PrecisionStructure {
    pub dim: usize,
    /// Upper-triangle entries (row ≤ col) of the symmetric structure R.
    pub entries: Vec<(usize, usize, f64)>,
    /// Dimension of the null space of R.
    pub rank_deficiency: usize,
    /// Identifiability constraints; rows are unit-norm, mutually orthogonal,
    /// and span the null space of R.
    pub constraints: Vec<Vec<f64>>,
    /// Multiplier making the generalized variance 1 (BYM2 spatial structure
    /// only; 1 elsewhere). The effective structure is `scaling · R`.
    pub scaling: f64,
    /// Log generalized determinant log|R|₊ of the *unscaled* structure
    /// (sum of log nonzero eigenvalues).
    pub gen_logdet: f64,
}

impl PrecisionStructure {
    /// Quadratic form x'Rx of the unscaled structure.
    pub fn quad_form(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim);
        let mut q = 0.0;
        for &(r, c, v) in &self.entries {
            q += if r == c { v * x[r] * x[r] } else { 2.0 * v * x[r] * x[c] };
        }
        q
    }

    /// log|scaling·R|₊ of the effective structure.
    pub fn effective_gen_logdet(&self) -> f64 {
        self.gen_logdet + (self.dim - self.rank_deficiency) as f64 * self.scaling.ln()
    }

    /// Dense expansion (tests and small oracles).
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
        m
    }

    /// Human-readable structure dump for inspection.
    pub fn debug_dump(&self) -> String {
        use std::fmt::Write;
        let mut s = String::new();
        writeln!(
            s,
            "dim={} nnz={} rank_deficiency={} scaling={} gen_logdet={}",
            self.dim,
            self.entries.len(),
            self.rank_deficiency,
            self.scaling,
            self.gen_logdet
        )
        .unwrap();
        for (k, c) in self.constraints.iter().enumerate() {
            let active: Vec<String> = c
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| format!("{i}:{v:.4}"))
                .collect();
            writeln!(s, "constraint[{k}]: {}", active.join(" ")).unwrap();
        }
        s
    }
}

/// Extracts the upper triangle of a dense symmetric matrix, dropping exact
/// zeros off the diagonal.
fn dense_to_entries(m: &nalgebra::DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let n = m.nrows();
    let mut entries = Vec::new();
    for c in 0..n {
        for r in 0..=c {
            let v = m[(r, c)];
            if v != 0.0 || r == c {
                entries.push((r, c, v));
            }
        }
    }
    entries
}

/// Log generalized determinant via dense eigenvalues (structures are built
/// once and are small, so a dense solve is fine).
fn dense_gen_logdet(m: &nalgebra::DMatrix<f64>, rank_deficiency: usize) -> f64 {
    let eig = m.clone().symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-8 * lambda_max.max(1.0);
    let mut logdet = 0.0;
    let mut zero = 0usize;
    for &l in eig.eigenvalues.iter() {
        if l > tol {
            logdet += l.ln();
        } else {
            zero += 1;
        }
    }
    assert_eq!(
        zero, rank_deficiency,
        "structure has {zero} near-zero eigenvalues, expected {rank_deficiency}"
    );
    logdet
}

/// Unit-norm vector proportional to 1 on `dim` coordinates.
fn sum_constraint(dim: usize) -> Vec<f64> {
    vec![1.0 / (dim as f64).sqrt(); dim]
}

/// Unit-norm centered linear-trend vector over `dim` time points
/// (orthogonal to the sum constraint by centering).
fn trend_constraint(dim: usize) -> Vec<f64> {
    let center = (dim as f64 - 1.0) / 2.0;
    let mut v: Vec<f64> = (0..dim).map(|t| t as f64 - center).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in &mut v {
        *x /= norm;
    }
    v
}

/// Second-order random-walk structure over `t` time points: R = D'D with D
/// the (t−2)×t second-difference operator. Rank deficiency 2 (constants and
/// linear trends); constrained by sum-to-zero and linear-trend-zero.
pub fn rw2_structure(t: usize) -> Result<PrecisionStructure> {
    if t < 3 {
        return Err(Error::Invalid(format!("rw2 needs at least 3 time points, got {t}")));
    }
    let mut m = nalgebra::DMatrix::zeros(t, t);
    // accumulate the (1, -2, 1) stencil outer product per second difference
    for r in 0..t - 2 {
        let idx = [r, r + 1, r + 2];
        let coef = [1.0, -2.0, 1.0];
        for a in 0..3 {
            for b in 0..3 {
                m[(idx[a], idx[b])] += coef[a] * coef[b];
            }
        }
    }
    let gen_logdet = dense_gen_logdet(&m, 2);
    Ok(PrecisionStructure {
        dim: t,
        entries: dense_to_entries(&m),
        rank_deficiency: 2,
        constraints: vec![sum_constraint(t), trend_constraint(t)],
        scaling: 1.0,
        gen_logdet,
    })
}

/// Intrinsic CAR structure on the area graph: R = D − A (degree minus
/// adjacency). Rank deficiency = number of connected components, with one
/// sum-to-zero constraint per component.
pub fn icar_structure(graph: &GeographyGraph) -> PrecisionStructure {
    let n = graph.n_areas();
    let mut m = nalgebra::DMatrix::zeros(n, n);
    for &(i, j) in &graph.edges {
        m[(i, i)] += 1.0;
        m[(j, j)] += 1.0;
        m[(i, j)] -= 1.0;
        m[(j, i)] -= 1.0;
    }
    let gen_logdet = dense_gen_logdet(&m, graph.n_components);
    let mut constraints = Vec::new();
    for comp in 0..graph.n_components {
        let members: Vec<usize> =
            (0..n).filter(|&i| graph.components[i] == comp).collect();
        let w = 1.0 / (members.len() as f64).sqrt();
        let mut row = vec![0.0; n];
        for i in members {
            row[i] = w;
        }
        constraints.push(row);
    }
    PrecisionStructure {
        dim: n,
        entries: dense_to_entries(&m),
        rank_deficiency: graph.n_components,
        constraints,
        scaling: 1.0,
        gen_logdet,
    }
}

/// Identity structure for exchangeable effects.
pub fn iid_structure(n: usize) -> PrecisionStructure {
    assert!(n >= 1, "iid block needs n >= 1");
    PrecisionStructure {
        dim: n,
        entries: (0..n).map(|i| (i, i, 1.0)).collect(),
        rank_deficiency: 0,
        constraints: Vec::new(),
        scaling: 1.0,
        gen_logdet: 0.0,
    }
}

/// Type-II space–time interaction: R = I_areas ⊗ R_rw2(t), i.e. an
/// independent RW2 over time within every area. Coordinates are area-major:
/// (area i, time t) ↦ i·T + t. Constraints are per-area sum-to-zero and
/// per-area linear-trend-zero.
pub fn interaction_type2(t: usize, graph: &GeographyGraph) -> Result<PrecisionStructure> {
    let n_areas = graph.n_areas();
    if n_areas == 0 {
        return Err(Error::Invalid("interaction needs at least one area".into()));
    }
    let rw2 = rw2_structure(t)?;
    let dim = n_areas * t;
    let mut entries = Vec::with_capacity(n_areas * rw2.entries.len());
    let mut constraints = Vec::with_capacity(2 * n_areas);
    for i in 0..n_areas {
        let off = i * t;
        for &(r, c, v) in &rw2.entries {
            entries.push((off + r, off + c, v));
        }
        for base in [sum_constraint(t), trend_constraint(t)] {
            let mut row = vec![0.0; dim];
            row[off..off + t].copy_from_slice(&base);
            constraints.push(row);
        }
    }
    Ok(PrecisionStructure {
        dim,
        entries,
        rank_deficiency: 2 * n_areas,
        constraints,
        scaling: 1.0,
        // log|I ⊗ R|₊ = n_areas · log|R|₊
        gen_logdet: n_areas as f64 * rw2.gen_logdet,
    })
}

/// Marginal variances diag(R⁺) of the constrained intrinsic field, via dense
/// eigendecomposition (the pseudo-inverse is the constrained covariance when
/// the constraints span the null space).
pub fn intrinsic_marginal_variances(structure: &PrecisionStructure) -> Vec<f64> {
    let m = structure.to_dense();
    let eig = m.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    let tol = 1e-8 * lambda_max.max(1.0);
    let n = structure.dim;
    let mut var = vec![0.0; n];
    for j in 0..n {
        let l = eig.eigenvalues[j];
        if l > tol {
            for i in 0..n {
                let v = eig.eigenvectors[(i, j)];
                var[i] += v * v / l;
            }
        }
    }
    var
}

/// Geometric mean of the positive marginal variances — the BYM2 scaling
/// constant. Areas pinned to zero variance by a constraint (isolated
/// singleton components) are excluded from the mean.
pub fn bym2_scaling(structure: &PrecisionStructure) -> f64 {
    let vars = intrinsic_marginal_variances(structure);
    let positive: Vec<f64> = vars.into_iter().filter(|&v| v > 1e-12).collect();
    assert!(!positive.is_empty(), "no positive marginal variances in intrinsic structure");
    (positive.iter().map(|v| v.ln()).sum::<f64>() / positive.len() as f64).exp()
}

/// Names of the random-effect families in the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EffectName {
    /// Global intercept μ.
    Intercept,
    /// Exchangeable time effect γ_t.
    IidTime,
    /// Second-order random-walk time effect α_t.
    Rw2Time,
    /// Spatial effect θ_i (BYM or BYM2).
    Space,
    /// Space–time interaction δ_it.
    Interaction,
    /// Survey-family effect ν_s.
    Survey,
    /// Survey-by-space effect φ_is.
    SurveySpace,
    /// Survey-by-time effect ψ_ts.
    SurveyTime,
}

impl EffectName {
    pub fn label(self) -> &'static str {
        match self {
            EffectName::Intercept => "intercept",
            EffectName::IidTime => "iid_time",
            EffectName::Rw2Time => "rw2_time",
            EffectName::Space => "space",
            EffectName::Interaction => "interaction",
            EffectName::Survey => "survey",
            EffectName::SurveySpace => "survey_space",
            EffectName::SurveyTime => "survey_time",
        }
    }
}

/// Spatial model variant for the θ block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SpatialVariant {
    /// Unscaled BYM: θ_i = U_i + V_i with separate precisions on the ICAR
    /// field U and the exchangeable field V.
    Bym,
    /// Scaled BYM (Riebler et al.): θ = (1/√τ)(√(1−φ)·v + √φ·u*) with u*
    /// the ICAR field scaled to generalized variance 1 and mixing φ ∈ (0,1).
    Bym2,
}

/// Kind of hyperparameter, driving its prior and MCMC transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HyperKind {
    /// Precision τ > 0: Gamma(1, 5e-5) prior, log transform.
    Precision,
    /// Mixing proportion in (0,1): uniform prior, logit transform.
    Mixing,
}

/// Block payload: how the latent coordinates and precision are built.
#[derive(Debug, Clone)]
pub enum BlockKind {
    /// Global intercept with fixed tiny precision; no hyperparameter.
    Intercept,
    /// Single structure scaled by one precision: Q_block = τ · R.
    Scaled(PrecisionStructure),
    /// BYM: coordinates [U (n), V (n)], hypers [τ_U, τ_V].
    Bym {
        icar: PrecisionStructure,
        n: usize,
    },
    /// BYM2: coordinates [θ (n), u* (n)], hypers [τ, φ_mix]. `icar.scaling`
    /// holds the generalized-variance scaling constant.
    Bym2 {
        icar: PrecisionStructure,
        n: usize,
    },
}

/// One additive term of a block's precision: `coef(hypers) · entries`.
#[derive(Debug, Clone)]
pub struct PrecisionTerm {
    /// Block-local upper-triangle entries.
    pub entries: Vec<(usize, usize, f64)>,
    /// Index into the coefficient vector returned by
    /// [`EffectBlock::term_coefficients`].
    pub coef: usize,
}

/// A named random-effect block: structure, constraints, and hyperparameters.
#[derive(Debug, Clone)]
pub struct EffectBlock {
    pub name: EffectName,
    pub kind: BlockKind,
}

impl EffectBlock {
    /// Number of latent coordinates.
    pub fn dim(&self) -> usize {
        match &self.kind {
            BlockKind::Intercept => 1,
            BlockKind::Scaled(s) => s.dim,
            BlockKind::Bym { n, .. } | BlockKind::Bym2 { n, .. } => 2 * n,
        }
    }

    /// Kinds (and implicitly, count) of this block's hyperparameters.
    pub fn hyper_kinds(&self) -> Vec<HyperKind> {
        match &self.kind {
            BlockKind::Intercept => vec![],
            BlockKind::Scaled(_) => vec![HyperKind::Precision],
            BlockKind::Bym { .. } => vec![HyperKind::Precision, HyperKind::Precision],
            BlockKind::Bym2 { .. } => vec![HyperKind::Precision, HyperKind::Mixing],
        }
    }

    /// Hyperparameter names for reports, e.g. `tau_space_u`.
    pub fn hyper_names(&self) -> Vec<String> {
        let base = self.name.label();
        match &self.kind {
            BlockKind::Intercept => vec![],
            BlockKind::Scaled(_) => vec![format!("tau_{base}")],
            BlockKind::Bym { .. } => {
                vec![format!("tau_{base}_u"), format!("tau_{base}_v")]
            }
            BlockKind::Bym2 { .. } => {
                vec![format!("tau_{base}"), format!("phi_{base}")]
            }
        }
    }

    /// Constraint rows over this block's local coordinates.
    pub fn constraints(&self) -> Vec<Vec<f64>> {
        match &self.kind {
            BlockKind::Intercept => Vec::new(),
            BlockKind::Scaled(s) => s.constraints.clone(),
            BlockKind::Bym { icar, n } => {
                // constraints act on the U part (first n coordinates)
                icar.constraints
                    .iter()
                    .map(|c| {
                        let mut row = vec![0.0; 2 * n];
                        row[..*n].copy_from_slice(c);
                        row
                    })
                    .collect()
            }
            BlockKind::Bym2 { icar, n } => {
                // constraints act on the u* part (coordinates n..2n)
                icar.constraints
                    .iter()
                    .map(|c| {
                        let mut row = vec![0.0; 2 * n];
                        row[*n..].copy_from_slice(c);
                        row
                    })
                    .collect()
            }
        }
    }

    /// Additive precision terms; combine with [`Self::term_coefficients`].
    pub fn precision_terms(&self) -> Vec<PrecisionTerm> {
        match &self.kind {
            BlockKind::Intercept => vec![PrecisionTerm {
                entries: vec![(0, 0, INTERCEPT_PRECISION)],
                coef: 0,
            }],
            BlockKind::Scaled(s) => vec![PrecisionTerm {
                entries: s
                    .entries
                    .iter()
                    .map(|&(r, c, v)| (r, c, v * s.scaling))
                    .collect(),
                coef: 0,
            }],
            BlockKind::Bym { icar, n } => {
                let u = PrecisionTerm { entries: icar.entries.clone(), coef: 0 };
                let v = PrecisionTerm {
                    entries: (0..*n).map(|i| (n + i, n + i, 1.0)).collect(),
                    coef: 1,
                };
                vec![u, v]
            }
            BlockKind::Bym2 { icar, n } => {
                let theta = PrecisionTerm {
                    entries: (0..*n).map(|i| (i, i, 1.0)).collect(),
                    coef: 0, // τ/(1−φ)
                };
                let cross = PrecisionTerm {
                    entries: (0..*n).map(|i| (i, n + i, 1.0)).collect(),
                    coef: 1, // −√(τφ)/(1−φ)
                };
                let u_iid = PrecisionTerm {
                    entries: (0..*n).map(|i| (n + i, n + i, 1.0)).collect(),
                    coef: 2, // φ/(1−φ)
                };
                let u_struct = PrecisionTerm {
                    entries: icar
                        .entries
                        .iter()
                        .map(|&(r, c, v)| (n + r, n + c, v * icar.scaling))
                        .collect(),
                    coef: 3, // constant 1
                };
                vec![theta, cross, u_iid, u_struct]
            }
        }
    }

    /// Coefficient values of the precision terms at the given hypers.
    pub fn term_coefficients(&self, hypers: &[f64]) -> Vec<f64> {
        match &self.kind {
            BlockKind::Intercept => vec![1.0],
            BlockKind::Scaled(_) => vec![hypers[0]],
            BlockKind::Bym { .. } => vec![hypers[0], hypers[1]],
            BlockKind::Bym2 { .. } => {
                let (tau, phi) = (hypers[0], hypers[1]);
                let om = 1.0 - phi;
                vec![tau / om, -(tau * phi).sqrt() / om, phi / om, 1.0]
            }
        }
    }

    /// Subspace prior log-density of the block's latent coordinates given
    /// hypers (orthonormal-basis convention; see module docs).
    pub fn prior_logdensity(&self, x: &[f64], hypers: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dim());
        match &self.kind {
            BlockKind::Intercept => {
                0.5 * (INTERCEPT_PRECISION.ln() - LN_2PI)
                    - 0.5 * INTERCEPT_PRECISION * x[0] * x[0]
            }
            BlockKind::Scaled(s) => {
                let tau = hypers[0];
                let k = (s.dim - s.rank_deficiency) as f64;
                0.5 * k * (tau.ln() - LN_2PI) + 0.5 * s.effective_gen_logdet()
                    - 0.5 * tau * s.scaling * s.quad_form(x)
            }
            BlockKind::Bym { icar, n } => {
                let (tau_u, tau_v) = (hypers[0], hypers[1]);
                let (u, v) = x.split_at(*n);
                let k = (icar.dim - icar.rank_deficiency) as f64;
                let lp_u = 0.5 * k * (tau_u.ln() - LN_2PI) + 0.5 * icar.gen_logdet
                    - 0.5 * tau_u * icar.quad_form(u);
                let ss_v: f64 = v.iter().map(|z| z * z).sum();
                let lp_v = 0.5 * (*n as f64) * (tau_v.ln() - LN_2PI) - 0.5 * tau_v * ss_v;
                lp_u + lp_v
            }
            BlockKind::Bym2 { icar, n } => {
                let (tau, phi) = (hypers[0], hypers[1]);
                let (theta, ustar) = x.split_at(*n);
                let k = (icar.dim - icar.rank_deficiency) as f64;
                // u* is intrinsic with unit precision on the scaled structure
                let lp_u = -0.5 * k * LN_2PI + 0.5 * icar.effective_gen_logdet()
                    - 0.5 * icar.scaling * icar.quad_form(ustar);
                // θ | u* ~ N(√(φ/τ)·u*, ((1−φ)/τ)·I)
                let cond_prec = tau / (1.0 - phi);
                let shift = (phi / tau).sqrt();
                let ss: f64 = theta
                    .iter()
                    .zip(ustar)
                    .map(|(t, u)| {
                        let r = t - shift * u;
                        r * r
                    })
                    .sum();
                let lp_theta =
                    0.5 * (*n as f64) * (cond_prec.ln() - LN_2PI) - 0.5 * cond_prec * ss;
                lp_u + lp_theta
            }
        }
    }

    /// Log prior density of this block's hyperparameters (natural scale).
    pub fn hyper_log_prior(&self, hypers: &[f64]) -> f64 {
        self.hyper_kinds()
            .iter()
            .zip(hypers)
            .map(|(kind, &h)| match kind {
                // Gamma(1, rate): log pdf = log(rate) − rate·τ
                HyperKind::Precision => PRECISION_PRIOR_RATE.ln() - PRECISION_PRIOR_RATE * h,
                // uniform(0,1)
                HyperKind::Mixing => {
                    if h > 0.0 && h < 1.0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                }
            })
            .sum()
    }
}

/// Intercept block μ.
pub fn intercept_block() -> EffectBlock {
    EffectBlock { name: EffectName::Intercept, kind: BlockKind::Intercept }
}

/// Exchangeable block (γ, ν, φ, ψ) of the given dimension.
pub fn iid_block(n: usize, name: EffectName) -> EffectBlock {
    EffectBlock { name, kind: BlockKind::Scaled(iid_structure(n)) }
}

/// RW2 time block α over `t` points.
pub fn rw2_block(t: usize) -> Result<EffectBlock> {
    Ok(EffectBlock { name: EffectName::Rw2Time, kind: BlockKind::Scaled(rw2_structure(t)?) })
}

/// Type-II interaction block δ over (area, time).
pub fn interaction_block(t: usize, graph: &GeographyGraph) -> Result<EffectBlock> {
    Ok(EffectBlock {
        name: EffectName::Interaction,
        kind: BlockKind::Scaled(interaction_type2(t, graph)?),
    })
}

/// Spatial block θ in the requested variant.
pub fn bym_block(graph: &GeographyGraph, variant: SpatialVariant) -> EffectBlock {
    let mut icar = icar_structure(graph);
    let n = graph.n_areas();
    match variant {
        SpatialVariant::Bym => EffectBlock {
            name: EffectName::Space,
            kind: BlockKind::Bym { icar, n },
        },
        SpatialVariant::Bym2 => {
            icar.scaling = bym2_scaling(&icar);
            EffectBlock { name: EffectName::Space, kind: BlockKind::Bym2 { icar, n } }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn path3() -> GeographyGraph {
        GeographyGraph::from_parts(
            vec!["A".into(), "B".into(), "C".into()],
            &[("A".into(), "B".into()), ("B".into(), "C".into())],
        )
        .unwrap()
    }

    #[test]
    fn rw2_t4_matches_hand_matrix() {
        let s = rw2_structure(4).unwrap();
        let expect = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.0, -2.0, 1.0, 0.0, //
                -2.0, 5.0, -4.0, 1.0, //
                1.0, -4.0, 5.0, -2.0, //
                0.0, 1.0, -2.0, 1.0,
            ],
        );
        assert_eq!(s.to_dense(), expect);
        assert_eq!(s.rank_deficiency, 2);
        assert!(rw2_structure(2).is_err());
    }

    #[test]
    fn rw2_annihilates_linear_functions() {
        for t in [3usize, 7, 19] {
            let s = rw2_structure(t).unwrap();
            let d = s.to_dense();
            for (a, b) in [(1.0, 0.0), (0.0, 1.0), (2.5, -0.75)] {
                let x = DVector::from_iterator(t, (0..t).map(|i| a + b * i as f64));
                let rx = &d * &x;
                assert!(rx.amax() < 1e-10, "t={t} a={a} b={b}");
            }
        }
    }

    #[test]
    fn rw2_t10_has_exactly_two_zero_eigenvalues() {
        let s = rw2_structure(10).unwrap();
        let eig = s.to_dense().symmetric_eigen();
        let zeros = eig.eigenvalues.iter().filter(|l| l.abs() < 1e-10).count();
        assert_eq!(zeros, 2);
    }

    #[test]
    fn icar_path3_matches_hand_matrix() {
        let s = icar_structure(&path3());
        let expect = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0],
        );
        assert_eq!(s.to_dense(), expect);
        assert_eq!(s.rank_deficiency, 1);
        assert_eq!(s.constraints.len(), 1);
    }

    #[test]
    fn icar_kills_component_indicators() {
        // two components: {A,B} and {C}
        let g = GeographyGraph::from_parts(
            vec!["A".into(), "B".into(), "C".into()],
            &[("A".into(), "B".into())],
        )
        .unwrap();
        let s = icar_structure(&g);
        assert_eq!(s.rank_deficiency, 2);
        assert_eq!(s.constraints.len(), 2);
        let d = s.to_dense();
        for c in &s.constraints {
            let rx = &d * DVector::from_column_slice(c);
            assert!(rx.amax() < 1e-12);
        }
    }

    fn synthetic_graph(n: usize, seed: u64) -> GeographyGraph {
        // ring plus random chords: connected by construction
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let areas: Vec<String> = (0..n).map(|i| format!("S{i:02}")).collect();
        let mut edges: Vec<(String, String)> =
            (0..n).map(|i| (areas[i].clone(), areas[(i + 1) % n].clone())).collect();
        for _ in 0..n {
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            if i != j {
                edges.push((areas[i].clone(), areas[j].clone()));
            }
        }
        GeographyGraph::from_parts(areas, &edges).unwrap()
    }

    #[test]
    fn icar_rank_deficiency_on_37_node_graph() {
        let g = synthetic_graph(37, 17);
        assert_eq!(g.n_components, 1);
        let s = icar_structure(&g);
        let rank = s.to_dense().rank(1e-8);
        assert_eq!(37 - rank, 1);
        assert_eq!(s.rank_deficiency, 1);
    }

    #[test]
    fn bym2_scaling_matches_pseudo_inverse_oracle() {
        for g in [path3(), synthetic_graph(12, 5)] {
            let s = icar_structure(&g);
            let scaling = bym2_scaling(&s);
            // oracle: dense SVD pseudo-inverse of R
            let d = s.to_dense();
            let n = d.nrows();
            let svd = d.svd(true, true);
            let pinv = svd.pseudo_inverse(1e-10).unwrap();
            let gm = (0..n)
                .map(|i| pinv[(i, i)].ln())
                .sum::<f64>()
                / n as f64;
            assert!(
                (scaling - gm.exp()).abs() < 1e-8,
                "scaling {scaling} vs oracle {}",
                gm.exp()
            );
        }
    }

    #[test]
    fn bym2_with_zero_mixing_is_pure_iid() {
        let block = bym_block(&path3(), SpatialVariant::Bym2);
        let (tau, phi) = (2.5, 0.0);
        assert_eq!(block.term_coefficients(&[tau, phi]), vec![2.5, 0.0, 0.0, 1.0]);
        // density of θ decouples into N(0, 1/τ) terms
        let theta = [0.3, -0.8, 0.25];
        let x = [theta[0], theta[1], theta[2], 0.0, 0.0, 0.0];
        let lp = block.prior_logdensity(&x, &[tau, phi]);
        let iid: f64 = theta
            .iter()
            .map(|&t| 0.5 * (tau.ln() - LN_2PI) - 0.5 * tau * t * t)
            .sum();
        // remaining constant: u* density at 0
        let BlockKind::Bym2 { icar, .. } = &block.kind else { panic!() };
        let k = (icar.dim - icar.rank_deficiency) as f64;
        let const_u = -0.5 * k * LN_2PI + 0.5 * icar.effective_gen_logdet();
        assert!((lp - (iid + const_u)).abs() < 1e-12);
    }

    #[test]
    fn interaction_is_block_diagonal_rw2_copies() {
        let g = GeographyGraph::from_parts(vec!["A".into(), "B".into()], &[]).unwrap();
        let s = interaction_type2(4, &g).unwrap();
        assert_eq!(s.dim, 8);
        assert_eq!(s.rank_deficiency, 4);
        assert_eq!(s.constraints.len(), 4);
        let rw2 = rw2_structure(4).unwrap().to_dense();
        let d = s.to_dense();
        for i in 0..2 {
            let block = d.view((i * 4, i * 4), (4, 4)).clone_owned();
            assert_eq!(block, rw2);
        }
        // off-diagonal blocks are zero
        assert_eq!(d.view((0, 4), (4, 4)).amax(), 0.0);
    }

    #[test]
    fn interaction_null_space_dimension_by_dense_rank() {
        let g = path3();
        let s = interaction_type2(5, &g).unwrap();
        let rank = s.to_dense().rank(1e-8);
        assert_eq!(s.dim - rank, 2 * 3);
        // gen_logdet shortcut agrees with the dense eigenvalue sum
        let direct = dense_gen_logdet(&s.to_dense(), 6);
        assert!((s.gen_logdet - direct).abs() < 1e-8);
    }

    #[test]
    fn constrained_interaction_draws_sum_to_zero_per_area() {
        // draw from the constrained intrinsic prior via the eigenbasis:
        // x = Σ_{λ_j>0} v_j z_j/√λ_j lies in range(R), hence satisfies every
        // constraint spanning null(R)
        let g = path3();
        let t = 4;
        let s = interaction_type2(t, &g).unwrap();
        let eig = s.to_dense().symmetric_eigen();
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let n = s.dim;
        for _ in 0..10 {
            let mut x = vec![0.0; n];
            for j in 0..n {
                let l = eig.eigenvalues[j];
                if l > 1e-8 {
                    let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                    for i in 0..n {
                        x[i] += eig.eigenvectors[(i, j)] * z / l.sqrt();
                    }
                }
            }
            for area in 0..3 {
                let sum: f64 = (0..t).map(|tt| x[area * t + tt]).sum();
                assert!(sum.abs() < 1e-10, "area {area} sum {sum}");
            }
        }
    }

    #[test]
    fn iid_block_basics() {
        let s = iid_structure(3);
        assert_eq!(s.to_dense(), DMatrix::identity(3, 3));
        let block = iid_block(3, EffectName::Survey);
        let tau = 4.0;
        let lp = block.prior_logdensity(&[0.0, 0.0, 0.0], &[tau]);
        let expect = 1.5 * (tau / (2.0 * std::f64::consts::PI)).ln();
        assert!((lp - expect).abs() < 1e-12);
        // four instrument families -> dim 4
        assert_eq!(iid_block(4, EffectName::Survey).dim(), 4);
    }

    #[test]
    fn structures_are_positive_semidefinite() {
        let g = synthetic_graph(9, 3);
        let structures = vec![
            rw2_structure(6).unwrap(),
            icar_structure(&g),
            interaction_type2(4, &path3()).unwrap(),
            iid_structure(5),
        ];
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for s in &structures {
            for _ in 0..1000 {
                let x: Vec<f64> =
                    (0..s.dim).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
                assert!(s.quad_form(&x) > -1e-9);
            }
            // quadratic form vanishes on the declared null space
            for c in &s.constraints {
                assert!(s.quad_form(c).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn constraints_span_the_null_space() {
        // rank of [R; A] must be full for every intrinsic structure
        let structures = vec![
            rw2_structure(7).unwrap(),
            icar_structure(&synthetic_graph(11, 8)),
            interaction_type2(3, &path3()).unwrap(),
        ];
        for s in &structures {
            let k = s.constraints.len();
            assert_eq!(k, s.rank_deficiency);
            let mut stacked = DMatrix::zeros(s.dim + k, s.dim);
            stacked.view_mut((0, 0), (s.dim, s.dim)).copy_from(&s.to_dense());
            for (r, c) in s.constraints.iter().enumerate() {
                for j in 0..s.dim {
                    stacked[(s.dim + r, j)] = c[j];
                }
            }
            assert_eq!(stacked.rank(1e-8), s.dim);
            // rows are unit-norm and mutually orthogonal
            for a in 0..k {
                for b in 0..k {
                    let dot: f64 =
                        s.constraints[a].iter().zip(&s.constraints[b]).map(|(x, y)| x * y).sum();
                    let expect = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hyper_priors_and_names() {
        let b = bym_block(&path3(), SpatialVariant::Bym);
        assert_eq!(b.hyper_names(), vec!["tau_space_u", "tau_space_v"]);
        let b2 = bym_block(&path3(), SpatialVariant::Bym2);
        assert_eq!(b2.hyper_names(), vec!["tau_space", "phi_space"]);
        assert_eq!(b2.hyper_kinds(), vec![HyperKind::Precision, HyperKind::Mixing]);
        // Gamma(1, 5e-5): log pdf at τ = log(rate) − rate·τ
        let lp = iid_block(2, EffectName::IidTime).hyper_log_prior(&[100.0]);
        assert!((lp - (PRECISION_PRIOR_RATE.ln() - PRECISION_PRIOR_RATE * 100.0)).abs() < 1e-12);
        assert_eq!(b2.hyper_log_prior(&[1.0, 1.5]), f64::NEG_INFINITY);
    }

    proptest! {
        #[test]
        fn rw2_quad_form_invariant_to_linear_shifts(
            t in 3usize..12,
            a in -5.0f64..5.0,
            b in -2.0f64..2.0,
            seed in 0u64..1000,
        ) {
            let s = rw2_structure(t).unwrap();
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            let v: Vec<f64> = (0..t).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let shifted: Vec<f64> =
                v.iter().enumerate().map(|(i, x)| x + a + b * i as f64).collect();
            let q0 = s.quad_form(&v);
            let q1 = s.quad_form(&shifted);
            prop_assert!((q0 - q1).abs() <= 1e-9 * (1.0 + q0.abs()));
        }
    }
}
