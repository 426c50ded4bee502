//! Model comparison and selection.
//!
//! Computes three predictive criteria from a [`PosteriorFit`] — the sum of
//! log conditional predictive ordinates (LCPO), the deviance information
//! criterion (DIC), and the Watanabe–Akaike information criterion (WAIC) —
//! decomposes total random-effect variance into per-effect shares, and picks
//! the final model: the criteria's common choice when they agree, otherwise
//! the WAIC minimizer, with ties broken toward the smaller model id.

use crate::gmrf::{EffectName, SpatialVariant};
use crate::inference::{ModelSpec, PosteriorFit};
use crate::util::{log_sum_exp, normal_logpdf, quantile_sorted};

/// Everything model selection needs to know about one fitted model.
#[derive(Debug, Clone)]
pub struct SelectionReport {
    pub model: ModelSpec,
    pub dic: f64,
    pub waic: f64,
    /// Σ_cells log CPO over the included cells.
    pub lcpo_sum: f64,
    /// Cells excluded from the LCPO sum because a per-sample density
    /// underflowed.
    pub lcpo_excluded: usize,
    /// Per-effect percentage of total random-effect variance, in the
    /// model's effect order (intercept excluded).
    pub variance_shares: Vec<(EffectName, f64)>,
}

/// Per-sample Gaussian log densities of one likelihood cell (survey effects
/// included, exactly as stored in the fit).
pub fn pointwise_loglik(fit: &PosteriorFit, cell: usize) -> Vec<f64> {
    fit.cell_loglik.iter().map(|row| row[cell]).collect()
}

/// WAIC with its two components.
#[derive(Debug, Clone, Copy)]
pub struct WaicParts {
    pub lppd: f64,
    pub p_waic: f64,
    pub waic: f64,
}

/// WAIC = −2 (lppd − p_WAIC); lppd is the summed log posterior-mean density
/// (log-mean-exp with shifting), p_WAIC the summed posterior variance of the
/// pointwise log densities (K−1 denominator).
pub fn compute_waic_parts(fit: &PosteriorFit) -> WaicParts {
    let k = fit.cell_loglik.len();
    assert!(k >= 2, "WAIC needs at least 2 posterior samples");
    let n_cells = fit.cell_y.len();
    let mut lppd = 0.0;
    let mut p_waic = 0.0;
    for c in 0..n_cells {
        let col = pointwise_loglik(fit, c);
        lppd += log_sum_exp(&col) - (k as f64).ln();
        let mean = col.iter().sum::<f64>() / k as f64;
        p_waic += col.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (k as f64 - 1.0);
    }
    WaicParts { lppd, p_waic, waic: -2.0 * (lppd - p_waic) }
}

pub fn compute_waic(fit: &PosteriorFit) -> f64 {
    compute_waic_parts(fit).waic
}

/// DIC with its effective-parameter count.
#[derive(Debug, Clone, Copy)]
pub struct DicParts {
    /// Deviance at the posterior mean of the per-cell linear predictor.
    pub d_hat: f64,
    /// Mean posterior deviance.
    pub d_bar: f64,
    pub p_d: f64,
    pub dic: f64,
}

/// DIC = D(η̄) + 2 p_D with p_D = D̄ − D(η̄); the plug-in point is the
/// posterior mean of each cell's linear predictor.
pub fn compute_dic_parts(fit: &PosteriorFit) -> DicParts {
    let k = fit.cell_eta.len();
    assert!(k >= 2, "DIC needs at least 2 posterior samples");
    let n_cells = fit.cell_y.len();
    let d_bar = -2.0
        * fit
            .cell_loglik
            .iter()
            .map(|row| row.iter().sum::<f64>())
            .sum::<f64>()
        / k as f64;
    let mut d_hat = 0.0;
    for c in 0..n_cells {
        let eta_bar = fit.cell_eta.iter().map(|row| row[c]).sum::<f64>() / k as f64;
        d_hat += -2.0 * normal_logpdf(fit.cell_y[c], eta_bar, fit.cell_var[c]);
    }
    let p_d = d_bar - d_hat;
    DicParts { d_hat, d_bar, p_d, dic: d_hat + 2.0 * p_d }
}

pub fn compute_dic(fit: &PosteriorFit) -> f64 {
    compute_dic_parts(fit).dic
}

/// LCPO sum plus the count of excluded cells.
#[derive(Debug, Clone, Copy)]
pub struct LcpoResult {
    pub sum: f64,
    pub n_excluded: usize,
}

/// Σ log CPO with CPO the harmonic mean of per-sample densities, evaluated
/// in log space: log CPO_c = log K − logsumexp_k(−ll_kc). Cells where any
/// per-sample density underflows to zero are excluded and counted instead
/// of clamped.
pub fn compute_lcpo(fit: &PosteriorFit) -> LcpoResult {
    let k = fit.cell_loglik.len();
    assert!(k >= 2, "LCPO needs at least 2 posterior samples");
    let n_cells = fit.cell_y.len();
    let mut sum = 0.0;
    let mut n_excluded = 0usize;
    for c in 0..n_cells {
        let col = pointwise_loglik(fit, c);
        if col.iter().any(|&l| l.exp() == 0.0) {
            n_excluded += 1;
            continue;
        }
        let neg: Vec<f64> = col.iter().map(|&l| -l).collect();
        sum += (k as f64).ln() - log_sum_exp(&neg);
    }
    LcpoResult { sum, n_excluded }
}

/// Percent of total random-effect variance attributed to each effect, from
/// posterior-median variances (median of 1/τ per effect). The BYM variant
/// reports U and V combined as the spatial share; effects absent from the
/// model are absent from the decomposition.
pub fn variance_decomposition(fit: &PosteriorFit) -> Vec<(EffectName, f64)> {
    let median_inv = |name: &str| -> f64 {
        let j = fit
            .hyper_names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("hyper '{name}' not found in fit"));
        let mut inv: Vec<f64> = fit.hyper_samples.iter().map(|s| 1.0 / s[j]).collect();
        inv.sort_by(|a, b| a.partial_cmp(b).unwrap());
        quantile_sorted(&inv, 0.5)
    };
    let mut vars = Vec::new();
    for name in fit.spec.effects() {
        let v = match name {
            EffectName::Intercept => continue, // fixed effect, not in the decomposition
            EffectName::Space => match fit.spec.variant {
                SpatialVariant::Bym => {
                    median_inv("tau_space_u") + median_inv("tau_space_v")
                }
                SpatialVariant::Bym2 => median_inv("tau_space"),
            },
            other => median_inv(&format!("tau_{}", other.label())),
        };
        vars.push((name, v));
    }
    let total: f64 = vars.iter().map(|(_, v)| v).sum();
    vars.into_iter().map(|(n, v)| (n, 100.0 * v / total)).collect()
}

/// Builds the full selection report for one fitted model.
pub fn build_report(fit: &PosteriorFit) -> SelectionReport {
    let lcpo = compute_lcpo(fit);
    SelectionReport {
        model: fit.spec,
        dic: compute_dic(fit),
        waic: compute_waic(fit),
        lcpo_sum: lcpo.sum,
        lcpo_excluded: lcpo.n_excluded,
        variance_shares: variance_decomposition(fit),
    }
}

/// Argmin over reports by a criterion, ties toward the smaller model id.
fn best_by<F: Fn(&SelectionReport) -> f64>(reports: &[SelectionReport], crit: F) -> ModelSpec {
    let mut best = &reports[0];
    for r in &reports[1..] {
        let (a, b) = (crit(r), crit(best));
        if a < b || (a == b && r.model < best.model) {
            best = r;
        }
    }
    best.model
}

/// Final model choice plus whether the three criteria agreed. When DIC,
/// WAIC, and LCPO agree on a model, that model is returned; in conflict the
/// WAIC minimizer decides (and the flag is false so reports can say so).
/// Ties break toward the smaller model id (level first, a before b).
pub fn select_model_with_agreement(reports: &[SelectionReport]) -> (ModelSpec, bool) {
    assert!(!reports.is_empty(), "select_model needs at least one report");
    let by_dic = best_by(reports, |r| r.dic);
    let by_waic = best_by(reports, |r| r.waic);
    let by_lcpo = best_by(reports, |r| -r.lcpo_sum);
    let agreed = by_dic == by_waic && by_waic == by_lcpo;
    // the common choice, when it exists, is the WAIC choice
    (by_waic, agreed)
}

/// Final model choice per [`select_model_with_agreement`].
pub fn select_model(reports: &[SelectionReport]) -> ModelSpec {
    select_model_with_agreement(reports).0
}

/// Criteria table, one row per model: `model,dic,lcpo_sum,waic,lcpo_excluded`.
pub fn selection_table(reports: &[SelectionReport]) -> String {
    let mut out = String::from("model,dic,lcpo_sum,waic,lcpo_excluded\n");
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.model.id(),
            r.dic,
            r.lcpo_sum,
            r.waic,
            r.lcpo_excluded
        ));
    }
    out
}

/// Variance-share table, one row per (model, effect): `model,effect,share_pct`.
pub fn shares_table(reports: &[SelectionReport]) -> String {
    let mut out = String::from("model,effect,share_pct\n");
    for r in reports {
        for (name, share) in &r.variance_shares {
            out.push_str(&format!("{},{},{}\n", r.model.id(), name.label(), share));
        }
    }
    out
}
