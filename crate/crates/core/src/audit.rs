//! Online audit model: forward-only stepwise AIC linear regression on
//! standardized answers, and the per-user "virtual energy audit".

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::domain::{Question, QuestionId, UserId};
use crate::error::{Error, Result};
use crate::preprocess::{StandardizedMatrix, OUTLIER_Z};

pub const DEFAULT_MAX_TERMS: usize = 20;
pub const AUDIT_ENTRIES: usize = 10;

/// RSS at or below this fraction of the total sum of squares counts as an
/// exact fit; selection stops there.
const EXACT_FIT: f64 = 1e-20;
/// A candidate whose component orthogonal to the current design has less
/// than this fraction of its squared norm is treated as collinear.
const COLLINEAR: f64 = 1e-10;
/// Relative AIC difference below which two candidates tie.
const AIC_TIE: f64 = 1e-12;

/// Gaussian AIC with constants dropped; `k` counts predictors, the intercept
/// adds one more parameter.
pub fn aic(n: usize, rss: f64, k: usize) -> f64 {
    let n_f = n as f64;
    n_f * (rss.max(0.0) / n_f).ln() + 2.0 * (k as f64 + 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCandidate {
    /// Selection step (0-based) at which the candidate was collinear.
    pub step: usize,
    pub question: QuestionId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub selected: Vec<QuestionId>,
    /// Column index of each selected question in the fitted matrix.
    pub selected_cols: Vec<usize>,
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// AIC of the intercept-only model.
    pub base_aic: f64,
    /// AIC after each accepted addition; strictly decreasing.
    pub aic_trace: Vec<f64>,
    pub residuals: Vec<f64>,
    pub users: Vec<UserId>,
    pub skipped: Vec<SkippedCandidate>,
    /// Raw-unit mean and sd of each selected question, for scoring new rows.
    pub scale: Vec<(f64, f64)>,
}

/// `model.json` layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelExport {
    pub selected: Vec<QuestionId>,
    pub beta: BTreeMap<QuestionId, f64>,
    pub intercept: f64,
    pub aic_trace: Vec<f64>,
}

impl LinearModel {
    pub fn n_terms(&self) -> usize {
        self.selected.len()
    }

    pub fn export(&self) -> ModelExport {
        ModelExport {
            selected: self.selected.clone(),
            beta: self.selected.iter().copied().zip(self.beta.iter().copied()).collect(),
            intercept: self.intercept,
            aic_trace: self.aic_trace.clone(),
        }
    }

    pub fn predict_row(&self, z_selected: &[f64]) -> f64 {
        self.intercept + self.beta.iter().zip(z_selected).map(|(b, z)| b * z).sum::<f64>()
    }

    /// Z-scores raw encoded answers with the fitted column statistics. Missing
    /// answers and cells at |z| ≥ 3 are imputed with 0, as during fitting.
    pub fn z_row(&self, answers: &HashMap<QuestionId, f64>) -> Vec<f64> {
        self.selected
            .iter()
            .zip(&self.scale)
            .map(|(q, &(mean, sd))| match answers.get(q) {
                Some(&x) if sd > 0.0 => {
                    let z = (x - mean) / sd;
                    if z.abs() < OUTLIER_Z {
                        z
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            })
            .collect()
    }
}

struct Basis {
    n: usize,
    q: Vec<Vec<f64>>,
    // r[j] holds column j of the upper-triangular factor.
    r: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Basis {
    fn with_intercept(n: usize) -> Self {
        let s = (n as f64).sqrt();
        Basis { n, q: vec![vec![1.0 / s; n]], r: vec![vec![s]] }
    }

    /// Classical Gram-Schmidt with one re-orthogonalization pass. Returns the
    /// orthogonal remainder and the projection coefficients.
    fn orthogonalize(&self, v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut w = v.to_vec();
        let mut coef = vec![0.0; self.q.len()];
        for _ in 0..2 {
            for (qi, c) in self.q.iter().zip(coef.iter_mut()) {
                let a = dot(qi, &w);
                *c += a;
                for (wk, qk) in w.iter_mut().zip(qi) {
                    *wk -= a * qk;
                }
            }
        }
        (w, coef)
    }

    fn push(&mut self, w: Vec<f64>, mut coef: Vec<f64>) -> &[f64] {
        let norm = dot(&w, &w).sqrt();
        coef.push(norm);
        self.r.push(coef);
        self.q.push(w.into_iter().map(|x| x / norm).collect());
        self.q.last().expect("just pushed")
    }

    /// Least-squares coefficients for the columns added so far.
    fn solve(&self, y: &[f64]) -> Vec<f64> {
        let k = self.q.len();
        let qty: Vec<f64> = self.q.iter().map(|qi| dot(qi, y)).collect();
        let mut b = vec![0.0; k];
        for i in (0..k).rev() {
            let mut s = qty[i];
            for (j, bj) in b.iter().enumerate().skip(i + 1) {
                s -= self.r[j][i] * bj;
            }
            b[i] = s / self.r[i][i];
        }
        debug_assert_eq!(self.n, y.len());
        b
    }
}

/// Greedy forward selection by AIC.
///
/// Starting from the intercept-only model, each step adds the single column
/// that gives the lowest AIC, stopping when no column lowers it or when
/// `max_terms` predictors are in. Ties go to the lowest column index, which is
/// the lowest question id for matrices built by this crate.
pub fn fit_stepwise_aic(z: &StandardizedMatrix, y: &[f64], max_terms: usize) -> Result<LinearModel> {
    let (n, p) = z.z.dim();
    if y.len() != n {
        return Err(Error::DimensionMismatch { expected: n, actual: y.len() });
    }
    if n < 3 {
        return Err(Error::InvalidParams(format!("need at least 3 rows, got {n}")));
    }
    if p == 0 {
        return Err(Error::EmptyMatrix);
    }

    let mean_y = y.iter().sum::<f64>() / n as f64;
    let mut resid: Vec<f64> = y.iter().map(|v| v - mean_y).collect();
    let tss = dot(&resid, &resid);
    let mut rss = tss;
    let base_aic = aic(n, rss, 0);
    let mut current_aic = base_aic;

    let columns: Vec<Vec<f64>> = (0..p).map(|c| z.z.column(c).to_vec()).collect();
    let mut basis = Basis::with_intercept(n);
    let mut in_model = vec![false; p];
    let mut selected_cols = Vec::new();
    let mut aic_trace = Vec::new();
    let mut skipped = Vec::new();

    while selected_cols.len() < max_terms && rss > EXACT_FIT * tss {
        let k_next = selected_cols.len() + 1;
        let mut best: Option<(usize, f64, Vec<f64>, Vec<f64>)> = None;
        for c in 0..p {
            if in_model[c] {
                continue;
            }
            let v = &columns[c];
            let vv = dot(v, v);
            let (w, coef) = basis.orthogonalize(v);
            let ww = dot(&w, &w);
            if vv == 0.0 || ww <= COLLINEAR * vv {
                skipped.push(SkippedCandidate { step: selected_cols.len(), question: z.questions[c] });
                continue;
            }
            let g = dot(&resid, &w);
            let cand_rss = rss - g * g / ww;
            let cand_aic = if cand_rss <= EXACT_FIT * tss { f64::NEG_INFINITY } else { aic(n, cand_rss, k_next) };
            let better = match &best {
                None => true,
                Some((_, b, _, _)) => cand_aic < *b - AIC_TIE * b.abs().max(1.0),
            };
            if better {
                best = Some((c, cand_aic, w, coef));
            }
        }
        let Some((c, cand_aic, w, coef)) = best else { break };
        // NaN counts as no improvement.
        if cand_aic.partial_cmp(&current_aic) != Some(std::cmp::Ordering::Less) {
            break;
        }
        let q = basis.push(w, coef);
        let a = dot(q, &resid);
        for (ri, qi) in resid.iter_mut().zip(q) {
            *ri -= a * qi;
        }
        rss = dot(&resid, &resid);
        in_model[c] = true;
        selected_cols.push(c);
        current_aic = if rss <= EXACT_FIT * tss { cand_aic } else { aic(n, rss, selected_cols.len()) };
        aic_trace.push(current_aic);
    }

    let coef = basis.solve(y);
    let intercept = coef[0];
    let beta = coef[1..].to_vec();
    let residuals: Vec<f64> = (0..n)
        .map(|i| {
            let fit = intercept + selected_cols.iter().zip(&beta).map(|(&c, b)| b * columns[c][i]).sum::<f64>();
            y[i] - fit
        })
        .collect();

    Ok(LinearModel {
        selected: selected_cols.iter().map(|&c| z.questions[c]).collect(),
        scale: selected_cols.iter().map(|&c| (z.col_means[c], z.col_sds[c])).collect(),
        selected_cols,
        beta,
        intercept,
        base_aic,
        aic_trace,
        residuals,
        users: z.users.clone(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub question_id: QuestionId,
    pub text: String,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub user_id: UserId,
    /// Largest |β·z| first, at most ten.
    pub entries: Vec<AuditEntry>,
    pub predicted_deviation: f64,
}

/// Audit for a user given that user's z-values on the model's selected
/// questions (same order as `model.selected`).
pub fn audit_from_row(model: &LinearModel, user: UserId, z_selected: &[f64], texts: &HashMap<QuestionId, String>) -> AuditReport {
    let mut entries: Vec<AuditEntry> = model
        .selected
        .iter()
        .zip(&model.beta)
        .zip(z_selected)
        .map(|((q, b), z)| AuditEntry {
            question_id: *q,
            text: texts.get(q).cloned().unwrap_or_default(),
            contribution: b * z,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.contribution
            .abs()
            .total_cmp(&a.contribution.abs())
            .then(a.question_id.cmp(&b.question_id))
    });
    entries.truncate(AUDIT_ENTRIES);
    AuditReport { user_id: user, entries, predicted_deviation: model.predict_row(z_selected) }
}

/// Audit for a row of the matrix the model was fitted on (or any matrix with
/// the same columns).
pub fn audit_report(model: &LinearModel, z: &StandardizedMatrix, user: UserId, questions: &[Question]) -> Result<AuditReport> {
    let row = z.row_of(user).ok_or(Error::UnknownUser(user))?;
    let mut z_sel = Vec::with_capacity(model.selected.len());
    for q in &model.selected {
        let c = z.questions.iter().position(|x| x == q).ok_or(Error::UnknownQuestion(*q))?;
        z_sel.push(z.z[[row, c]]);
    }
    let texts: HashMap<QuestionId, String> = questions.iter().map(|q| (q.id, q.text.clone())).collect();
    Ok(audit_from_row(model, user, &z_sel, &texts))
}
