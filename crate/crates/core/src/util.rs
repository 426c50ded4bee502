//! Small numeric and seeding helpers shared across the crate.

/// logit(p) = log(p / (1 - p)).
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse logit, numerically stable for large |x|.
pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// log(sum(exp(x))) with overflow-safe shifting.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    let s: f64 = xs.iter().map(|&x| (x - m).exp()).sum();
    m + s.ln()
}

/// Linear-interpolation sample quantile (R type 7) on a pre-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    assert!((0.0..=1.0).contains(&q));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median / 2.5% / 97.5% of an unsorted sample.
pub fn median_ci95(samples: &[f64]) -> (f64, f64, f64) {
    let mut v = samples.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    (
        quantile_sorted(&v, 0.5),
        quantile_sorted(&v, 0.025),
        quantile_sorted(&v, 0.975),
    )
}

/// splitmix64 step, used to derive independent sub-seeds from a master seed.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministically derive a sub-seed from a master seed and a label path.
///
/// Independent of thread scheduling, so parallel jobs seeded this way are
/// reproducible.
pub fn derive_seed(master: u64, labels: &[&str]) -> u64 {
    let mut state = master;
    let mut out = splitmix64(&mut state);
    for label in labels {
        for chunk in label.as_bytes().chunks(8) {
            let mut word = [0u8; 8];
            word[..chunk.len()].copy_from_slice(chunk);
            state ^= u64::from_le_bytes(word);
            let _ = splitmix64(&mut state);
        }
        state ^= 0xa076_1d64_78bd_642f;
        out = splitmix64(&mut state);
    }
    out
}

/// Gaussian log density log N(x; mean, var).
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + d * d / var)
}
