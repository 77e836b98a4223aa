//! Random forest regression: bagged CART trees with per-node feature
//! subsampling, out-of-bag error and mean-decrease-in-impurity importance.

mod tree;

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::QuestionId;
use crate::error::{Error, Result};

pub use tree::{fit_tree, Node, RegressionTree, Split, TreeLimits};
use tree::{grow_tree, BinnedFeatures};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per node; `None` means ⌊p/3⌋ (at least 1).
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub max_depth: Option<usize>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 500, mtry: None, min_node_size: 5, max_depth: None, bootstrap: true, seed: 0 }
    }
}

impl ForestParams {
    pub fn resolved_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or((p / 3).max(1))
    }

    pub fn limits(&self) -> TreeLimits {
        TreeLimits { min_node_size: self.min_node_size, max_depth: self.max_depth }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Forest {
    pub params: ForestParams,
    pub mtry: usize,
    pub n_features: usize,
    pub trees: Vec<RegressionTree>,
    /// Row indices each tree was trained on (with repeats when bagging).
    pub in_bag: Vec<Vec<u32>>,
    pub oob_predictions: Vec<Option<f64>>,
    /// Mean squared OOB error over rows that had at least one OOB tree.
    pub oob_mse: Option<f64>,
    pub oob_rows: usize,
    /// Normalized importance, sums to 1 when any split occurred.
    pub importance: Vec<f64>,
    /// Mean per-tree impurity decrease before normalization.
    pub importance_raw: Vec<f64>,
}

/// Deterministic per-tree generator: stream `tree` of the master seed.
fn tree_rng(seed: u64, tree: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tree as u64);
    rng
}

/// Bootstrap row sample for one tree; a pure function of (seed, tree).
pub fn bootstrap_rows(seed: u64, tree: usize, n: usize) -> Vec<u32> {
    let mut rng = tree_rng(seed, tree);
    (0..n).map(|_| rng.random_range(0..n as u32)).collect()
}

pub fn fit_forest(x: ArrayView2<'_, f64>, y: &[f64], params: &ForestParams) -> Result<Forest> {
    let (n, p) = x.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
    }
    if n < 5 {
        return Err(Error::InvalidParams(format!("forest needs at least 5 rows, got {n}")));
    }
    if params.n_trees == 0 {
        return Err(Error::InvalidParams("n_trees must be positive".into()));
    }
    if p == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mtry = params.resolved_mtry(p);
    if mtry == 0 || mtry > p {
        return Err(Error::InvalidParams(format!("mtry {mtry} outside 1..={p}")));
    }
    if let Some(v) = y.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParams(format!("non-finite target {v}")));
    }
    let bins = BinnedFeatures::new(x)?;
    let limits = params.limits();

    let fitted: Vec<(RegressionTree, Vec<u32>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = tree_rng(params.seed, t);
            let rows: Vec<u32> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n as u32)).collect()
            } else {
                (0..n as u32).collect()
            };
            let tree = grow_tree(&bins, y, &rows, mtry, limits, &mut rng);
            (tree, rows)
        })
        .collect();
    let (trees, in_bag): (Vec<_>, Vec<_>) = fitted.into_iter().unzip();

    // OOB: rows absent from a tree's bootstrap sample.
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    let mut seen = vec![false; n];
    for (tree, rows) in trees.iter().zip(&in_bag) {
        seen.iter_mut().for_each(|s| *s = false);
        for &r in rows {
            seen[r as usize] = true;
        }
        for r in 0..n {
            if !seen[r] {
                sum[r] += tree.predict_binned(&bins, r as u32);
                count[r] += 1;
            }
        }
    }
    let oob_predictions: Vec<Option<f64>> =
        (0..n).map(|r| (count[r] > 0).then(|| sum[r] / count[r] as f64)).collect();
    let errs: Vec<f64> = oob_predictions
        .iter()
        .zip(y)
        .filter_map(|(p, yv)| p.map(|p| (yv - p).powi(2)))
        .collect();
    let oob_rows = errs.len();
    let oob_mse = (oob_rows > 0).then(|| errs.iter().sum::<f64>() / oob_rows as f64);

    let mut importance_raw = vec![0.0; p];
    for tree in &trees {
        for (acc, d) in importance_raw.iter_mut().zip(tree.impurity_decrease(p)) {
            *acc += d;
        }
    }
    importance_raw.iter_mut().for_each(|v| *v /= trees.len() as f64);
    let total: f64 = importance_raw.iter().sum();
    let importance =
        if total > 0.0 { importance_raw.iter().map(|v| v / total).collect() } else { vec![0.0; p] };

    Ok(Forest {
        params: *params,
        mtry,
        n_features: p,
        trees,
        in_bag,
        oob_predictions,
        oob_mse,
        oob_rows,
        importance,
        importance_raw,
    })
}

impl Forest {
    /// Mean of the tree predictions for one row.
    pub fn predict(&self, row: &[f64]) -> Result<f64> {
        if row.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, actual: row.len() });
        }
        Ok(self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Feature indices ordered by importance, highest first; ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        ranking_from_scores(&self.importance)
    }

    pub fn ranked_features(&self) -> Vec<RankedFeature> {
        ranked(&self.importance)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: usize,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

pub fn ranking_from_scores(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

pub fn ranked(scores: &[f64]) -> Vec<RankedFeature> {
    ranking_from_scores(scores)
        .into_iter()
        .enumerate()
        .map(|(i, f)| RankedFeature { feature: f, score: scores[f], rank: i + 1 })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceRow {
    pub question_id: QuestionId,
    pub score: f64,
    pub rank: usize,
}

/// `forest.json` layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestExport {
    pub params: ForestParams,
    pub mtry: usize,
    pub oob_mse: Option<f64>,
    pub importance: Vec<ImportanceRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trees: Option<Vec<RegressionTree>>,
}

impl Forest {
    pub fn export(&self, questions: &[QuestionId], with_trees: bool) -> ForestExport {
        ForestExport {
            params: self.params,
            mtry: self.mtry,
            oob_mse: self.oob_mse,
            importance: self
                .ranked_features()
                .into_iter()
                .map(|r| ImportanceRow { question_id: questions[r.feature], score: r.score, rank: r.rank })
                .collect(),
            trees: with_trees.then(|| self.trees.clone()),
        }
    }
}
