//! Slow, obviously-correct reference computations for tests. Nothing here
//! shares code with the library under test.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use num::{BigInt, BigRational, One, Zero};

/// Least squares with intercept via SVD; returns (coefficients, rss).
pub fn ols(z: &Array2<f64>, cols: &[usize], y: &[f64]) -> (Vec<f64>, f64) {
    let n = y.len();
    let x = DMatrix::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { z[[i, cols[j - 1]]] });
    let yv = DVector::from_column_slice(y);
    let b = x.clone().svd(true, true).solve(&yv, 1e-12).expect("svd solve");
    let r = &yv - &x * &b;
    (b.iter().copied().collect(), r.dot(&r))
}

pub fn aic(n: usize, rss: f64, k: usize) -> f64 {
    n as f64 * (rss / n as f64).ln() + 2.0 * (k as f64 + 1.0)
}

/// Greedy forward selection that refits every candidate model from scratch
/// at each step. Returns the selected columns and the AIC after each step.
pub fn stepwise_path(z: &Array2<f64>, y: &[f64], max_terms: usize) -> (Vec<usize>, Vec<f64>) {
    let (n, p) = z.dim();
    let mut sel: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut current = aic(n, ols(z, &[], y).1, 0);
    while sel.len() < max_terms {
        let mut best: Option<(usize, f64)> = None;
        for c in (0..p).filter(|c| !sel.contains(c)) {
            let mut cols = sel.clone();
            cols.push(c);
            let a = aic(n, ols(z, &cols, y).1, cols.len());
            if best.is_none_or(|(_, b)| a < b) {
                best = Some((c, a));
            }
        }
        match best {
            Some((c, a)) if a < current => {
                sel.push(c);
                trace.push(a);
                current = a;
            }
            _ => break,
        }
    }
    (sel, trace)
}

pub fn sse(rows: &[usize], y: &[f64]) -> f64 {
    let m = rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64;
    rows.iter().map(|&r| (y[r] - m).powi(2)).sum()
}

fn midpoints(x: &Array2<f64>, rows: &[usize], f: usize) -> Vec<f64> {
    let mut vals: Vec<f64> = rows.iter().map(|&r| x[[r, f]]).collect();
    vals.sort_by(f64::total_cmp);
    vals.dedup();
    vals.windows(2).map(|w| (w[0] + w[1]) / 2.0).collect()
}

/// Best SSE reduction over every feature and every midpoint between
/// consecutive distinct values, with both children holding `min_leaf` rows.
pub fn best_split_reduction(x: &Array2<f64>, y: &[f64], rows: &[usize], min_leaf: usize) -> Option<f64> {
    let parent = sse(rows, y);
    let mut best: Option<f64> = None;
    for f in 0..x.ncols() {
        for t in midpoints(x, rows, f) {
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, f]] <= t);
            if l.len() < min_leaf || r.len() < min_leaf {
                continue;
            }
            let red = parent - sse(&l, y) - sse(&r, y);
            if best.is_none_or(|b| red > b) {
                best = Some(red);
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub struct SplitView {
    pub feature: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub reduction: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct NodeView {
    pub n_samples: usize,
    pub impurity: f64,
    pub split: Option<SplitView>,
}

/// Walks a fitted regression tree (preorder node list, rows go left when
/// `x ≤ threshold`) and checks every node against exhaustive search.
pub fn check_tree(nodes: &[NodeView], x: &Array2<f64>, y: &[f64], min_leaf: usize) -> Result<(), String> {
    check_node(nodes, 0, x, y, (0..y.len()).collect(), min_leaf)
}

fn check_node(nodes: &[NodeView], id: usize, x: &Array2<f64>, y: &[f64], rows: Vec<usize>, min_leaf: usize) -> Result<(), String> {
    let node = nodes[id];
    if node.n_samples != rows.len() {
        return Err(format!("node {id}: {} samples, expected {}", node.n_samples, rows.len()));
    }
    let imp = sse(&rows, y);
    let tol = 1e-9 * imp.max(1.0);
    if (node.impurity - imp).abs() > tol {
        return Err(format!("node {id}: impurity {} vs {imp}", node.impurity));
    }
    let best = if rows.len() >= 2 * min_leaf && imp > 0.0 { best_split_reduction(x, y, &rows, min_leaf) } else { None };
    match node.split {
        Some(s) => {
            let best = best.ok_or(format!("node {id}: split where none is allowed"))?;
            if !midpoints(x, &rows, s.feature).contains(&s.threshold) {
                return Err(format!("node {id}: threshold {} is not a midpoint", s.threshold));
            }
            let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, s.feature]] <= s.threshold);
            let red = imp - sse(&l, y) - sse(&r, y);
            if (red - best).abs() > tol || (s.reduction - red).abs() > tol {
                return Err(format!("node {id}: reduction {} vs best {best}", s.reduction));
            }
            check_node(nodes, s.left, x, y, l, min_leaf)?;
            check_node(nodes, s.right, x, y, r, min_leaf)
        }
        None => match best {
            Some(b) if b > 1e-12 * imp => Err(format!("node {id}: leaf but a split reduces SSE by {b}")),
            _ => Ok(()),
        },
    }
}

fn ks_d(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .chain(b)
        .map(|&t| {
            let fa = a.iter().filter(|v| **v <= t).count() as f64 / a.len() as f64;
            let fb = b.iter().filter(|v| **v <= t).count() as f64 / b.len() as f64;
            (fa - fb).abs()
        })
        .fold(0.0, f64::max)
}

/// Two-sample KS statistic and exact two-sided p-value by enumerating every
/// way to split the pooled sample into groups of the original sizes.
/// Feasible up to about 20 pooled values.
pub fn ks_enumeration(a: &[f64], b: &[f64]) -> (f64, f64) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let d = ks_d(a, b);
    let (mut extreme, mut count) = (0u64, 0u64);
    for mask in 0u32..(1 << pooled.len()) {
        if mask.count_ones() as usize != a.len() {
            continue;
        }
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (i, v) in pooled.iter().enumerate() {
            if mask >> i & 1 == 1 {
                x.push(*v)
            } else {
                y.push(*v)
            }
        }
        count += 1;
        extreme += (ks_d(&x, &y) >= d - 1e-12) as u64;
    }
    (d, extreme as f64 / count as f64)
}

/// Binomial coefficient by Pascal's rule.
pub fn choose(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    let k = k.min(n - k) as usize;
    let mut row = vec![BigInt::zero(); k + 1];
    row[0] = BigInt::one();
    for i in 1..=n as usize {
        for j in (1..=k.min(i)).rev() {
            let prev = row[j - 1].clone();
            row[j] += prev;
        }
    }
    row[k].clone()
}

/// P(exactly `hits` of `experts` marked items land in a random `top`-subset
/// of `total` items).
pub fn hypergeometric(total: u64, experts: u64, top: u64, hits: u64) -> BigRational {
    let num = choose(experts, hits) * choose(total - experts, top - hits);
    BigRational::new(num, choose(total, top))
}

/// Largest `j ≥ ν` with every full window up to `j` better than chance
/// (`p̂ > 0.5 + sqrt(ln ν/ν)` or a perfect window).
pub fn window_scan_cutoff(seq: &[bool], nu: usize) -> Option<usize> {
    let c = 0.5 + ((nu as f64).ln() / nu as f64).sqrt();
    let mut k = None;
    for j in nu..=seq.len() {
        let ones = seq[j - nu..j].iter().filter(|b| **b).count();
        if ones as f64 / nu as f64 > c || ones == nu {
            k = Some(j);
        } else {
            break;
        }
    }
    k
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

/// Checks a standardized matrix: imputed cells are exactly 0, observed
/// cells have |z| < 3, and every column with at least two observed cells
/// has mean 0 and sample sd 1 (or is constant zero) within `tol`.
pub fn check_standardized(z: &Array2<f64>, imputed: &Array2<bool>, tol: f64) -> Result<(), String> {
    for c in 0..z.ncols() {
        let mut obs = Vec::new();
        for r in 0..z.nrows() {
            let v = z[[r, c]];
            if imputed[[r, c]] {
                if v.to_bits() != 0.0f64.to_bits() {
                    return Err(format!("imputed cell ({r}, {c}) holds {v}"));
                }
            } else if v.abs() >= 3.0 {
                return Err(format!("observed cell ({r}, {c}) has |z| = {}", v.abs()));
            } else {
                obs.push(v);
            }
        }
        if obs.len() >= 2 {
            let n = obs.len() as f64;
            let mean = obs.iter().sum::<f64>() / n;
            let sd = (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            if mean.abs() > tol {
                return Err(format!("column {c}: mean {mean}"));
            }
            if sd != 0.0 && (sd - 1.0).abs() > tol {
                return Err(format!("column {c}: sd {sd}"));
            }
        }
    }
    Ok(())
}
