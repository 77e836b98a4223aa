//! Exact hypergeometric probability of finding `k` expert questions in a
//! top-`n` list drawn by chance.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

pub fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapProbability {
    pub exact: BigRational,
}

#[derive(Debug, Clone, Serialize)]
pub struct OverlapRendering {
    pub numerator: String,
    pub denominator: String,
    pub value: f64,
    pub decimal: String,
}

impl OverlapProbability {
    pub fn to_f64(&self) -> f64 {
        self.exact.to_f64().unwrap_or(f64::NAN)
    }

    /// Scientific rendering with 12 significant digits (truncated), computed
    /// from the exact fraction.
    pub fn decimal(&self) -> String {
        let num = self.exact.numer().clone();
        let den = self.exact.denom().clone();
        if num.is_zero() {
            return "0".into();
        }
        let ten = BigInt::from(10);
        let lower = &den * ten.pow(11);
        let mut scaled = num;
        let mut shift = 0i32;
        while scaled < lower {
            scaled *= &ten;
            shift += 1;
        }
        let digits = (&scaled / &den).to_string();
        let exponent = digits.len() as i32 - 1 - shift;
        let (head, tail) = digits.split_at(1);
        format!("{head}.{tail}e{exponent}")
    }

    pub fn render(&self) -> OverlapRendering {
        OverlapRendering {
            numerator: self.exact.numer().to_string(),
            denominator: self.exact.denom().to_string(),
            value: self.to_f64(),
            decimal: self.decimal(),
        }
    }
}

/// `C(K,k)·C(N−K,n−k) / C(N,n)` in exact rational arithmetic.
///
/// `total` is N (all questions), `experts` is K, `top` is n (list size) and
/// `hits` is k (experts seen in the list).
pub fn expert_overlap_prob(total: u64, experts: u64, top: u64, hits: u64) -> Result<OverlapProbability> {
    if experts > total || top > total || hits > experts.min(top) {
        return Err(Error::InvalidParams(format!(
            "need 0 <= k <= min(K, n) <= N; got N={total} K={experts} n={top} k={hits}"
        )));
    }
    let num = binomial(experts, hits) * binomial(total - experts, top - hits);
    let den = binomial(total, top);
    Ok(OverlapProbability { exact: BigRational::new(num, den) })
}
