//! CART regression trees over pre-binned features.

use ndarray::ArrayView2;
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Each feature's sorted distinct values, and every cell replaced by the
/// index of its value. Split search then only needs per-bin sums.
#[derive(Debug, Clone)]
pub(crate) struct BinnedFeatures {
    n: usize,
    // column-major: codes[f * n + row]
    codes: Vec<u32>,
    values: Vec<Vec<f64>>,
}

impl BinnedFeatures {
    pub(crate) fn new(x: ArrayView2<'_, f64>) -> Result<Self> {
        let (n, p) = x.dim();
        let mut codes = vec![0u32; n * p];
        let mut values = Vec::with_capacity(p);
        for f in 0..p {
            let col = x.column(f);
            if let Some(bad) = col.iter().find(|v| !v.is_finite()) {
                return Err(Error::InvalidParams(format!("feature {f} has non-finite value {bad}")));
            }
            let mut distinct: Vec<f64> = col.to_vec();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            for (r, v) in col.iter().enumerate() {
                codes[f * n + r] = distinct.partition_point(|d| d < v) as u32;
            }
            values.push(distinct);
        }
        Ok(BinnedFeatures { n, codes, values })
    }

    pub(crate) fn n_features(&self) -> usize {
        self.values.len()
    }

    fn code(&self, f: usize, row: u32) -> usize {
        self.codes[f * self.n + row as usize] as usize
    }

    fn n_bins(&self, f: usize) -> usize {
        self.values[f].len()
    }

    fn threshold(&self, f: usize, lo: usize, hi: usize) -> f64 {
        let (a, b) = (self.values[f][lo], self.values[f][hi]);
        let mid = a + (b - a) / 2.0;
        // Guard against the midpoint rounding onto the upper value.
        if mid < b {
            mid
        } else {
            a
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeLimits {
    /// Smallest number of (bootstrap) samples allowed in a leaf.
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
}

impl Default for TreeLimits {
    fn default() -> Self {
        TreeLimits { min_node_size: 5, max_depth: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    /// Parent SSE minus the children's SSE.
    pub reduction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub n_samples: usize,
    /// Sum of squared deviations from the node mean.
    pub impurity: f64,
    pub value: f64,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Preorder; `nodes[0]` is the root.
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    /// Rows go left when `x[feature] <= threshold`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.split {
                Some(s) => i = if x[s.feature] <= s.threshold { s.left } else { s.right },
                None => return node.value,
            }
        }
    }

    fn leaf_of_binned(&self, bins: &BinnedFeatures, row: u32) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match node.split {
                Some(s) => {
                    let v = bins.values[s.feature][bins.code(s.feature, row)];
                    i = if v <= s.threshold { s.left } else { s.right };
                }
                None => return node.value,
            }
        }
    }

    pub(crate) fn predict_binned(&self, bins: &BinnedFeatures, row: u32) -> f64 {
        self.leaf_of_binned(bins, row)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.split.is_none()).count()
    }

    pub fn depth(&self) -> usize {
        fn go(t: &RegressionTree, i: usize) -> usize {
            match t.nodes[i].split {
                Some(s) => 1 + go(t, s.left).max(go(t, s.right)),
                None => 0,
            }
        }
        go(self, 0)
    }

    /// Per-feature sum of SSE reductions divided by the root sample count,
    /// i.e. variance decrease weighted by node fraction.
    pub fn impurity_decrease(&self, n_features: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_features];
        let root = self.nodes[0].n_samples as f64;
        for node in &self.nodes {
            if let Some(s) = node.split {
                out[s.feature] += s.reduction / root;
            }
        }
        out
    }
}

fn sse(rows: &[u32], y: &[f64]) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|&r| y[r as usize]).sum::<f64>() / n;
    let ss = rows.iter().map(|&r| (y[r as usize] - mean).powi(2)).sum();
    (mean, ss)
}

struct Candidate {
    feature: usize,
    lo: usize,
    hi: usize,
    score: f64,
}

struct Grower<'a> {
    bins: &'a BinnedFeatures,
    y: &'a [f64],
    mtry: usize,
    limits: TreeLimits,
    nodes: Vec<Node>,
    // scratch for dense per-bin accumulation
    counts: Vec<usize>,
    sums: Vec<f64>,
    pairs: Vec<(u32, f64)>,
}

impl Grower<'_> {
    fn best_for_feature(&mut self, f: usize, rows: &[u32], total: f64, best: &mut Option<Candidate>) {
        let n = rows.len();
        let min_leaf = self.limits.min_node_size.max(1);
        let parent = total * total / n as f64;
        let consider = |lo: usize, hi: usize, n_l: usize, s_l: f64, best: &mut Option<Candidate>| {
            let n_r = n - n_l;
            if n_l < min_leaf || n_r < min_leaf {
                return;
            }
            let s_r = total - s_l;
            let score = s_l * s_l / n_l as f64 + s_r * s_r / n_r as f64 - parent;
            if best.as_ref().is_none_or(|b| score > b.score) {
                *best = Some(Candidate { feature: f, lo, hi, score });
            }
        };

        let n_bins = self.bins.n_bins(f);
        if n_bins < 2 {
            return;
        }
        if n_bins <= 2 * n {
            self.counts[..n_bins].iter_mut().for_each(|c| *c = 0);
            self.sums[..n_bins].iter_mut().for_each(|s| *s = 0.0);
            for &r in rows {
                let b = self.bins.code(f, r);
                self.counts[b] += 1;
                self.sums[b] += self.y[r as usize];
            }
            let (mut n_l, mut s_l) = (0usize, 0.0);
            let mut prev: Option<usize> = None;
            for b in 0..n_bins {
                if self.counts[b] == 0 {
                    continue;
                }
                if let Some(p) = prev {
                    consider(p, b, n_l, s_l, best);
                }
                n_l += self.counts[b];
                s_l += self.sums[b];
                prev = Some(b);
            }
        } else {
            self.pairs.clear();
            self.pairs.extend(rows.iter().map(|&r| (self.bins.code(f, r) as u32, self.y[r as usize])));
            self.pairs.sort_unstable_by_key(|p| p.0);
            let (mut n_l, mut s_l) = (0usize, 0.0);
            let mut i = 0;
            let mut prev: Option<usize> = None;
            while i < self.pairs.len() {
                let b = self.pairs[i].0 as usize;
                let (mut c, mut s) = (0usize, 0.0);
                while i < self.pairs.len() && self.pairs[i].0 as usize == b {
                    c += 1;
                    s += self.pairs[i].1;
                    i += 1;
                }
                if let Some(p) = prev {
                    consider(p, b, n_l, s_l, best);
                }
                n_l += c;
                s_l += s;
                prev = Some(b);
            }
        }
    }

    fn grow(&mut self, rows: &mut [u32], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let (mean, impurity) = sse(rows, self.y);
        let id = self.nodes.len();
        self.nodes.push(Node { n_samples: rows.len(), impurity, value: mean, split: None });

        let min_leaf = self.limits.min_node_size.max(1);
        let depth_ok = self.limits.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || rows.len() < 2 * min_leaf || impurity <= 0.0 {
            return id;
        }

        let p = self.bins.n_features();
        let mut features = index::sample(rng, p, self.mtry.min(p)).into_vec();
        features.sort_unstable();
        let total: f64 = rows.iter().map(|&r| self.y[r as usize]).sum();
        let mut best = None;
        for &f in &features {
            self.best_for_feature(f, rows, total, &mut best);
        }
        let Some(cand) = best else { return id };
        if cand.score.partial_cmp(&(1e-12 * impurity)) != Some(std::cmp::Ordering::Greater) {
            return id;
        }

        let bins = self.bins;
        let mut mid = 0;
        for i in 0..rows.len() {
            if bins.code(cand.feature, rows[i]) <= cand.lo {
                rows.swap(i, mid);
                mid += 1;
            }
        }
        let (left_rows, right_rows) = rows.split_at_mut(mid);
        let (_, sse_l) = sse(left_rows, self.y);
        let (_, sse_r) = sse(right_rows, self.y);
        let left = self.grow(left_rows, depth + 1, rng);
        let right = self.grow(right_rows, depth + 1, rng);
        self.nodes[id].split = Some(Split {
            feature: cand.feature,
            threshold: bins.threshold(cand.feature, cand.lo, cand.hi),
            left,
            right,
            reduction: (impurity - sse_l - sse_r).max(0.0),
        });
        id
    }
}

pub(crate) fn grow_tree(
    bins: &BinnedFeatures,
    y: &[f64],
    rows: &[u32],
    mtry: usize,
    limits: TreeLimits,
    rng: &mut ChaCha8Rng,
) -> RegressionTree {
    let max_bins = bins.values.iter().map(Vec::len).max().unwrap_or(0);
    let mut g = Grower {
        bins,
        y,
        mtry,
        limits,
        nodes: Vec::new(),
        counts: vec![0; max_bins],
        sums: vec![0.0; max_bins],
        pairs: Vec::new(),
    };
    let mut rows = rows.to_vec();
    g.grow(&mut rows, 0, rng);
    RegressionTree { nodes: g.nodes }
}

/// Fits one regression tree on `rows` of `(x, y)` (rows may repeat).
///
/// Every node draws a fresh random subset of `mtry` features and takes the
/// split with the largest SSE reduction over midpoints between consecutive
/// distinct values. Ties go to the lowest feature index, then the lowest
/// threshold.
pub fn fit_tree(
    x: ArrayView2<'_, f64>,
    y: &[f64],
    rows: &[usize],
    mtry: usize,
    limits: TreeLimits,
    seed: u64,
) -> Result<RegressionTree> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
    }
    if rows.is_empty() {
        return Err(Error::InvalidParams("tree needs at least one row".into()));
    }
    if mtry == 0 || mtry > p {
        return Err(Error::InvalidParams(format!("mtry {mtry} outside 1..={p}")));
    }
    if let Some(&r) = rows.iter().find(|&&r| r >= n) {
        return Err(Error::InvalidParams(format!("row {r} out of range")));
    }
    let bins = BinnedFeatures::new(x)?;
    let rows: Vec<u32> = rows.iter().map(|&r| r as u32).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(grow_tree(&bins, y, &rows, mtry, limits, &mut rng))
}
