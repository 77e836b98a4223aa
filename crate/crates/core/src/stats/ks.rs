//! Two-sample Kolmogorov–Smirnov test with an exact lattice-path p-value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest `n·m` for which the exact distribution is computed.
pub const EXACT_LIMIT: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KsMethod {
    Exact,
    Asymptotic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d: f64,
    pub p_value: f64,
    pub method: KsMethod,
}

/// `max |i·m − j·n|` over the merged order, evaluated after every run of tied
/// values so the ECDFs jump at ties.
fn statistic_numerator(a: &[f64], b: &[f64]) -> u64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as i64, b.len() as i64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0i64;
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as i64 * m - j as i64 * n).abs());
    }
    best as u64
}

/// P(D ≥ d) over all C(n+m, n) equally likely interleavings: the fraction of
/// monotone lattice paths that touch `|i·m − j·n| ≥ d_num`.
fn exact_p(n: usize, m: usize, d_num: u64) -> f64 {
    let touches = |i: usize, j: usize| (i as i64 * m as i64 - j as i64 * n as i64).unsigned_abs() >= d_num;
    // total[j], hit[j] for the current i; counts fit in f64 for n·m ≤ EXACT_LIMIT.
    let mut total = vec![0.0f64; m + 1];
    let mut hit = vec![0.0f64; m + 1];
    for i in 0..=n {
        for j in 0..=m {
            let t = if i == 0 && j == 0 {
                1.0
            } else {
                let up = if i > 0 { total[j] } else { 0.0 };
                let left = if j > 0 { total[j - 1] } else { 0.0 };
                up + left
            };
            let h = if touches(i, j) {
                t
            } else {
                let up = if i > 0 { hit[j] } else { 0.0 };
                let left = if j > 0 { hit[j - 1] } else { 0.0 };
                up + left
            };
            total[j] = t;
            hit[j] = h;
        }
    }
    (hit[m] / total[m]).clamp(0.0, 1.0)
}

/// Kolmogorov distribution tail with the usual small-sample correction.
fn asymptotic_p(n: usize, m: usize, d: f64) -> f64 {
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = sign * (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sided two-sample KS test. Exact for `n·m ≤ 10⁴`, asymptotic above.
pub fn ks_exact_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidParams("sample contains NaN".into()));
    }
    let (n, m) = (a.len(), b.len());
    let d_num = statistic_numerator(a, b);
    let d = d_num as f64 / (n * m) as f64;
    if n * m <= EXACT_LIMIT {
        Ok(KsResult { d, p_value: exact_p(n, m, d_num), method: KsMethod::Exact })
    } else {
        Ok(KsResult { d, p_value: asymptotic_p(n, m, d), method: KsMethod::Asymptotic })
    }
}
