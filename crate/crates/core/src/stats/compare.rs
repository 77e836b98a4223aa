//! Replicated true-versus-null forest comparison.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestParams};
use crate::preprocess::shuffle_null;
use crate::seeds::derive_seed;
use crate::stats::ks::{ks_exact_two_sample, KsResult};

pub const DEFAULT_REPLICATES: usize = 10;

const TRUE_STREAM: u64 = 1;
const NULL_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;

/// Where the null forests get their data.
#[derive(Debug, Clone, Copy)]
pub enum NullData<'a> {
    /// One shuffled matrix shared by every null replicate.
    Fixed(ArrayView2<'a, f64>),
    /// A fresh column shuffle of the true matrix per replicate.
    Reshuffle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NullMode {
    #[default]
    Single,
    PerReplicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateComparison {
    pub true_mses: Vec<f64>,
    pub null_mses: Vec<f64>,
    pub ks: KsResult,
    /// Normalized importances, one vector per replicate.
    pub true_importance: Vec<Vec<f64>>,
    pub null_importance: Vec<Vec<f64>>,
    pub true_seeds: Vec<u64>,
    pub null_seeds: Vec<u64>,
}

/// `validation.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationExport {
    pub true_mses: Vec<f64>,
    pub null_mses: Vec<f64>,
    #[serde(rename = "D")]
    pub d: f64,
    pub p: f64,
}

impl ReplicateComparison {
    pub fn mean_true(&self) -> f64 {
        mean(&self.true_mses)
    }

    pub fn mean_null(&self) -> f64 {
        mean(&self.null_mses)
    }

    pub fn export(&self) -> ValidationExport {
        ValidationExport {
            true_mses: self.true_mses.clone(),
            null_mses: self.null_mses.clone(),
            d: self.ks.d,
            p: self.ks.p_value,
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Seeds for replicate `r`: true forest, null forest, null shuffle.
pub fn replicate_seeds(master: u64, r: usize) -> (u64, u64, u64) {
    let r = r as u64;
    (
        derive_seed(derive_seed(master, TRUE_STREAM), r),
        derive_seed(derive_seed(master, NULL_STREAM), r),
        derive_seed(derive_seed(master, SHUFFLE_STREAM), r),
    )
}

/// Trains `reps` forests on the true data and `reps` on null data, each with
/// its own sub-seed of `params.seed`, and compares OOB errors with KS.
pub fn compare_true_vs_null(
    z: ArrayView2<'_, f64>,
    null: NullData<'_>,
    y: &[f64],
    params: &ForestParams,
    reps: usize,
) -> Result<ReplicateComparison> {
    if reps == 0 {
        return Err(Error::InvalidParams("reps must be positive".into()));
    }
    if let NullData::Fixed(zs) = null {
        if zs.dim() != z.dim() {
            return Err(Error::DimensionMismatch { expected: z.nrows() * z.ncols(), actual: zs.nrows() * zs.ncols() });
        }
    }
    let owned_z: Option<Array2<f64>> = matches!(null, NullData::Reshuffle).then(|| z.to_owned());

    let mut cmp = ReplicateComparison {
        true_mses: Vec::with_capacity(reps),
        null_mses: Vec::with_capacity(reps),
        ks: KsResult { d: 0.0, p_value: 1.0, method: crate::stats::ks::KsMethod::Exact },
        true_importance: Vec::with_capacity(reps),
        null_importance: Vec::with_capacity(reps),
        true_seeds: Vec::with_capacity(reps),
        null_seeds: Vec::with_capacity(reps),
    };
    for r in 0..reps {
        let (ts, ns, ss) = replicate_seeds(params.seed, r);
        let tf = fit_forest(z, y, &ForestParams { seed: ts, ..*params })?;
        let nf = match (null, &owned_z) {
            (NullData::Fixed(zs), _) => fit_forest(zs, y, &ForestParams { seed: ns, ..*params })?,
            (NullData::Reshuffle, Some(full)) => {
                let zs = shuffle_null(full, ss);
                fit_forest(zs.view(), y, &ForestParams { seed: ns, ..*params })?
            }
            (NullData::Reshuffle, None) => unreachable!(),
        };
        cmp.true_mses.push(tf.oob_mse.ok_or_else(|| Error::InvalidParams("no out-of-bag rows".into()))?);
        cmp.null_mses.push(nf.oob_mse.ok_or_else(|| Error::InvalidParams("no out-of-bag rows".into()))?);
        cmp.true_importance.push(tf.importance);
        cmp.null_importance.push(nf.importance);
        cmp.true_seeds.push(ts);
        cmp.null_seeds.push(ns);
    }
    cmp.ks = ks_exact_two_sample(&cmp.true_mses, &cmp.null_mses)?;
    Ok(cmp)
}
