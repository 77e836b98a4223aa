//! Rank degeneration cutoff: how far down replicate importance rankings keep
//! agreeing with each other better than chance.
//!
//! A ranking is a permutation of item indices `0..N`, best item first.

use std::fmt;
use std::io::Write;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CutoffParams {
    pub delta: usize,
    pub nu: usize,
}

impl CutoffParams {
    pub fn new(delta: usize, nu: usize) -> Result<Self> {
        if delta < 1 || nu < 2 {
            return Err(Error::InvalidParams(format!("need delta >= 1 and nu >= 2; got delta={delta} nu={nu}")));
        }
        Ok(CutoffParams { delta, nu })
    }

    pub fn threshold(&self) -> f64 {
        cutoff_threshold(self.nu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KHat {
    Valid(usize),
    NoValidCutoff,
}

impl KHat {
    pub fn value(self) -> Option<usize> {
        match self {
            KHat::Valid(k) => Some(k),
            KHat::NoValidCutoff => None,
        }
    }

    pub fn is_valid(self) -> bool {
        matches!(self, KHat::Valid(_))
    }
}

impl fmt::Display for KHat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KHat::Valid(k) => write!(f, "{k}"),
            KHat::NoValidCutoff => f.write_str("NA"),
        }
    }
}

/// `0.5 + sqrt(ln ν / ν)`.
pub fn cutoff_threshold(nu: usize) -> f64 {
    let v = nu as f64;
    0.5 + (v.ln() / v).sqrt()
}

fn check_permutation(r: &[usize], n: usize) -> Result<()> {
    if r.len() != n {
        return Err(Error::NotAPermutation(format!("expected {n} items, got {}", r.len())));
    }
    let mut seen = vec![false; n];
    for &i in r {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return Err(Error::NotAPermutation(format!("item {i} out of range or repeated")));
        }
    }
    Ok(())
}

/// Position of every item in `r` (0-based).
fn positions(r: &[usize]) -> Vec<usize> {
    let mut pos = vec![0; r.len()];
    for (j, &item) in r.iter().enumerate() {
        pos[item] = j;
    }
    pos
}

fn concordance_unchecked(r1: &[usize], pos2: &[usize], delta: usize) -> Vec<bool> {
    r1.iter().enumerate().map(|(j, &item)| pos2[item].abs_diff(j) <= delta).collect()
}

/// `I_j = 1` iff the item at rank `j` of `r1` sits within `delta` ranks of
/// `j` in `r2`.
pub fn pair_concordance(r1: &[usize], r2: &[usize], delta: usize) -> Result<Vec<bool>> {
    check_permutation(r1, r1.len())?;
    check_permutation(r2, r1.len())?;
    Ok(concordance_unchecked(r1, &positions(r2), delta))
}

/// Windowed pilot estimates `p̂_j` (1-based `j`, returned 0-based) over
/// `[max(1, j−ν+1), j]`.
pub fn pilot_estimates(seq: &[bool], nu: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(seq.len());
    let mut sum = 0usize;
    for j in 0..seq.len() {
        sum += seq[j] as usize;
        if j >= nu {
            sum -= seq[j - nu] as usize;
        }
        out.push(sum as f64 / (j + 1).min(nu) as f64);
    }
    out
}

/// Whether a full-window estimate counts as better than chance. The
/// threshold exceeds 1 for ν ≤ 8, so a perfectly concordant window always
/// passes.
pub fn window_passes(p_hat: f64, nu: usize) -> bool {
    p_hat > cutoff_threshold(nu) || p_hat >= 1.0
}

/// Largest `j ≥ ν` such that every full-window estimate `p̂_i`, `ν ≤ i ≤ j`,
/// passes.
pub fn estimate_cutoff(seq: &[bool], nu: usize) -> Result<KHat> {
    if nu < 2 {
        return Err(Error::InvalidParams(format!("nu must be at least 2, got {nu}")));
    }
    if seq.len() < nu {
        return Err(Error::InvalidParams(format!("sequence of length {} shorter than window {nu}", seq.len())));
    }
    let p = pilot_estimates(seq, nu);
    let run = p[nu - 1..].iter().take_while(|&&v| window_passes(v, nu)).count();
    Ok(if run == 0 { KHat::NoValidCutoff } else { KHat::Valid(nu - 1 + run) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCutoff {
    pub a: usize,
    pub b: usize,
    pub k_hat: KHat,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutoffResult {
    pub params: CutoffParams,
    pub k_hat: KHat,
    pub pairs_valid: usize,
    pub pairs_total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_pair: Option<Vec<PairCutoff>>,
}

/// Cutoff for one pair: the smaller of the two directed estimates, invalid
/// when either direction is.
fn symmetric_cutoff(i12: &[bool], i21: &[bool], nu: usize) -> Result<KHat> {
    Ok(match (estimate_cutoff(i12, nu)?, estimate_cutoff(i21, nu)?) {
        (KHat::Valid(a), KHat::Valid(b)) => KHat::Valid(a.min(b)),
        _ => KHat::NoValidCutoff,
    })
}

pub fn pair_cutoff(r1: &[usize], r2: &[usize], params: CutoffParams) -> Result<KHat> {
    let i12 = pair_concordance(r1, r2, params.delta)?;
    let i21 = pair_concordance(r2, r1, params.delta)?;
    symmetric_cutoff(&i12, &i21, params.nu)
}

/// Upper median of the pairwise cutoffs with invalid pairs counted as 0.
/// NoValidCutoff exactly when more than half of the pairs are invalid.
fn combine(pairs: &[KHat]) -> KHat {
    let mut v: Vec<usize> = pairs.iter().map(|k| k.value().unwrap_or(0)).collect();
    v.sort_unstable();
    match v[v.len() / 2] {
        0 => KHat::NoValidCutoff,
        k => KHat::Valid(k),
    }
}

fn validate(rankings: &[Vec<usize>]) -> Result<usize> {
    if rankings.len() < 2 {
        return Err(Error::InvalidParams(format!("need at least 2 rankings, got {}", rankings.len())));
    }
    let n = rankings[0].len();
    for r in rankings {
        check_permutation(r, n)?;
    }
    Ok(n)
}

/// Cutoff over all `C(J, 2)` ranking pairs.
pub fn aggregate_cutoff(rankings: &[Vec<usize>], params: CutoffParams, keep_pairs: bool) -> Result<CutoffResult> {
    let n = validate(rankings)?;
    if n < params.nu {
        return Err(Error::InvalidParams(format!("rankings of length {n} shorter than window {}", params.nu)));
    }
    let pos: Vec<Vec<usize>> = rankings.iter().map(|r| positions(r)).collect();
    let mut pairs = Vec::new();
    for a in 0..rankings.len() {
        for b in a + 1..rankings.len() {
            let i12 = concordance_unchecked(&rankings[a], &pos[b], params.delta);
            let i21 = concordance_unchecked(&rankings[b], &pos[a], params.delta);
            pairs.push(PairCutoff { a, b, k_hat: symmetric_cutoff(&i12, &i21, params.nu)? });
        }
    }
    let ks: Vec<KHat> = pairs.iter().map(|p| p.k_hat).collect();
    Ok(CutoffResult {
        params,
        k_hat: combine(&ks),
        pairs_valid: ks.iter().filter(|k| k.is_valid()).count(),
        pairs_total: ks.len(),
        per_pair: keep_pairs.then_some(pairs),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub cells: usize,
    pub invalid: usize,
    pub invalid_fraction: f64,
    pub min_k: Option<usize>,
    pub max_k: Option<usize>,
    pub median_k: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityGrid {
    /// Ordered by delta, then nu.
    pub cells: Vec<CutoffResult>,
    pub summary: GridSummary,
}

pub const DELTA_RANGE: RangeInclusive<usize> = 1..=10;
pub const NU_RANGE: RangeInclusive<usize> = 2..=20;
pub const CUTOFFS_HEADER: [&str; 5] = ["delta", "nu", "k_hat_or_NA", "pairs_valid", "pairs_total"];

fn median(sorted: &[usize]) -> Option<f64> {
    let n = sorted.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(sorted[n / 2] as f64),
        _ => Some((sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0),
    }
}

pub fn sensitivity_grid(
    rankings: &[Vec<usize>],
    delta_range: RangeInclusive<usize>,
    nu_range: RangeInclusive<usize>,
) -> Result<SensitivityGrid> {
    if delta_range.is_empty() || nu_range.is_empty() {
        return Err(Error::InvalidParams("empty delta or nu range".into()));
    }
    let grid: Vec<CutoffParams> = delta_range
        .flat_map(|d| nu_range.clone().map(move |v| (d, v)))
        .map(|(d, v)| CutoffParams::new(d, v))
        .collect::<Result<_>>()?;
    validate(rankings)?;
    let cells: Vec<CutoffResult> =
        grid.par_iter().map(|&p| aggregate_cutoff(rankings, p, false)).collect::<Result<_>>()?;

    let mut valid: Vec<usize> = cells.iter().filter_map(|c| c.k_hat.value()).collect();
    valid.sort_unstable();
    let invalid = cells.len() - valid.len();
    let summary = GridSummary {
        cells: cells.len(),
        invalid,
        invalid_fraction: invalid as f64 / cells.len() as f64,
        min_k: valid.first().copied(),
        max_k: valid.last().copied(),
        median_k: median(&valid),
    };
    Ok(SensitivityGrid { cells, summary })
}

impl SensitivityGrid {
    pub fn get(&self, delta: usize, nu: usize) -> Option<&CutoffResult> {
        self.cells.iter().find(|c| c.params.delta == delta && c.params.nu == nu)
    }

    /// Share of cells that are invalid or have `k̂ ≤ k`.
    pub fn fraction_invalid_or_at_most(&self, k: usize) -> f64 {
        let hits = self.cells.iter().filter(|c| c.k_hat.value().is_none_or(|v| v <= k)).count();
        hits as f64 / self.cells.len() as f64
    }

    /// Single cutoff for downstream use: the median valid cell, rounded down.
    pub fn consensus_k(&self) -> Option<usize> {
        self.summary.median_k.map(|m| m.floor() as usize)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CUTOFFS_HEADER)?;
        for c in &self.cells {
            out.write_record([
                c.params.delta.to_string(),
                c.params.nu.to_string(),
                c.k_hat.to_string(),
                c.pairs_valid.to_string(),
                c.pairs_total.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reversed_pair_hand_example() {
        let r1: Vec<usize> = (0..10).collect();
        let r2: Vec<usize> = (0..10).rev().collect();
        let i = pair_concordance(&r1, &r2, 1).unwrap();
        let bits: Vec<u8> = i.iter().map(|&b| b as u8).collect();
        assert_eq!(bits, vec![0, 0, 0, 0, 1, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn rejects_non_permutations() {
        assert!(pair_concordance(&[0, 0, 1], &[0, 1, 2], 1).is_err());
        assert!(pair_concordance(&[0, 1, 3], &[0, 1, 2], 1).is_err());
        assert!(pair_concordance(&[0, 1], &[0, 1, 2], 1).is_err());
    }

    #[test]
    fn all_ones_gives_full_length() {
        assert_eq!(estimate_cutoff(&[true; 40], 10).unwrap(), KHat::Valid(40));
        assert!(estimate_cutoff(&[true; 4], 5).is_err());
    }

    #[test]
    fn small_windows_need_perfect_concordance() {
        for nu in 2..=8 {
            assert!(cutoff_threshold(nu) > 1.0, "nu={nu}");
            assert_eq!(estimate_cutoff(&[true; 30], nu).unwrap(), KHat::Valid(30));
            let mut s = [true; 30];
            s[nu + 3] = false;
            assert_eq!(estimate_cutoff(&s, nu).unwrap(), KHat::Valid(nu + 3));
        }
        assert!(cutoff_threshold(9) < 1.0);
    }

    #[test]
    fn pilot_window_means() {
        let s = [true, false, true, true];
        assert_eq!(pilot_estimates(&s, 2), vec![1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn combine_is_upper_median_with_invalid_as_zero() {
        use KHat::*;
        assert_eq!(combine(&[Valid(10), NoValidCutoff, Valid(12)]), Valid(10));
        assert_eq!(combine(&[Valid(10), NoValidCutoff]), Valid(10));
        assert_eq!(combine(&[Valid(10), NoValidCutoff, NoValidCutoff]), NoValidCutoff);
        assert_eq!(combine(&[Valid(9), Valid(11), Valid(20), Valid(30)]), Valid(20));
    }

    #[test]
    fn identical_rankings_grid() {
        let r: Vec<usize> = (0..25).collect();
        let g = sensitivity_grid(&[r.clone(), r.clone(), r], 1..=3, 2..=12).unwrap();
        assert_eq!(g.summary.invalid, 0);
        assert!(g.cells.iter().all(|c| c.k_hat == KHat::Valid(25)));
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("delta,nu,k_hat_or_NA,pairs_valid,pairs_total\n1,2,25,3,3\n"));
    }
}
