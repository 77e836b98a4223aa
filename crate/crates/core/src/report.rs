//! Markdown summary of an [`Analysis`].

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

use chrono::Duration;

use crate::cutoff::SensitivityGrid;
use crate::domain::QuestionId;
use crate::pipeline::Analysis;
use crate::stats::expert_overlap_prob;

const TOP_ROWS: usize = 20;
const ANSWER_BIN: usize = 25;
const WEEK_DAYS: i64 = 7;

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

fn grid_section(out: &mut String, title: &str, g: &SensitivityGrid) {
    let s = &g.summary;
    let _ = writeln!(out, "### {title}\n");
    let _ = writeln!(out, "| cells | invalid | invalid fraction | min k | median k | max k |");
    let _ = writeln!(out, "|---|---|---|---|---|---|");
    let _ = writeln!(
        out,
        "| {} | {} | {:.3} | {} | {} | {} |\n",
        s.cells,
        s.invalid,
        s.invalid_fraction,
        fmt_opt(s.min_k),
        fmt_opt(s.median_k),
        fmt_opt(s.max_k)
    );
}

pub fn render(a: &Analysis) -> String {
    let mut out = String::new();
    let pr = &a.prepared;
    let cmp = &a.comparison;

    let _ = writeln!(out, "# Analysis report\n");
    let _ = writeln!(out, "## Data\n");
    let _ = writeln!(out, "- users with outcome: {}", pr.z.n_rows());
    let _ = writeln!(out, "- approved questions: {}", pr.z.n_cols());
    let _ = writeln!(out, "- answers in matrix: {}", pr.matrix.filled());
    let _ = writeln!(
        out,
        "- column missing fraction: min {:.3}, max {:.3}",
        pr.sparsity.min_missing, pr.sparsity.max_missing
    );
    let _ = writeln!(out, "- median answers per user: {}", pr.sparsity.median_answers_per_user());
    let _ = writeln!(
        out,
        "- outcome group mean {:.1} kWh, sd {:.1} kWh ({} users excluded for coverage)\n",
        pr.outcome.group_mean,
        pr.outcome.group_sd,
        pr.outcome.excluded.len()
    );

    let _ = writeln!(out, "### Answers per user\n");
    let _ = writeln!(out, "| answers | users |");
    let _ = writeln!(out, "|---|---|");
    for (lo, n) in pr.sparsity.answer_count_histogram(ANSWER_BIN) {
        let _ = writeln!(out, "| {lo}-{} | {n} |", lo + ANSWER_BIN - 1);
    }
    let _ = writeln!(out);

    if let Some(&first) = pr.posed_on.iter().min() {
        let mut weeks: BTreeMap<i64, usize> = BTreeMap::new();
        for d in &pr.posed_on {
            *weeks.entry((*d - first).num_days() / WEEK_DAYS).or_default() += 1;
        }
        let last = weeks.keys().next_back().copied().unwrap_or(0);
        let _ = writeln!(out, "### Questions posed per week\n");
        let _ = writeln!(out, "| week starting | questions |");
        let _ = writeln!(out, "|---|---|");
        for w in 0..=last {
            let start = first + Duration::days(w * WEEK_DAYS);
            let _ = writeln!(out, "| {start} | {} |", weeks.get(&w).copied().unwrap_or(0));
        }
        let _ = writeln!(out);
    }

    let _ = writeln!(out, "## True versus null forests\n");
    let _ = writeln!(
        out,
        "{} replicates, {} trees each, seed {}.\n",
        a.params.reps, a.params.n_trees, a.params.seed
    );
    let _ = writeln!(out, "| replicate | OOB MSE (true) | OOB MSE (null) |");
    let _ = writeln!(out, "|---|---|---|");
    for (i, (t, n)) in cmp.true_mses.iter().zip(&cmp.null_mses).enumerate() {
        let _ = writeln!(out, "| {} | {:.4} | {:.4} |", i + 1, t, n);
    }
    let _ = writeln!(out, "| mean | {:.4} | {:.4} |\n", cmp.mean_true(), cmp.mean_null());
    let _ = writeln!(
        out,
        "Kolmogorov-Smirnov: D = {:.3}, p = {:.4e} ({:?}).\n",
        cmp.ks.d, cmp.ks.p_value, cmp.ks.method
    );

    let _ = writeln!(out, "## Rank cutoffs\n");
    let _ = writeln!(
        out,
        "delta in [{}, {}], nu in [{}, {}].\n",
        a.params.delta_range.0, a.params.delta_range.1, a.params.nu_range.0, a.params.nu_range.1
    );
    grid_section(&mut out, "True models", &a.grid);
    grid_section(&mut out, "Null models", &a.null_grid);

    let _ = writeln!(out, "## Top questions by importance\n");
    let _ = writeln!(out, "| imp rank | question | importance | r | r rank |");
    let _ = writeln!(out, "|---|---|---|---|---|");
    for r in a.rank_table.rows.iter().take(TOP_ROWS) {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {:.3} | {} |",
            r.imp_rank, r.question_id, r.importance, r.r, r.r_rank
        );
    }
    let _ = writeln!(out);

    let strong = a.correlation.strong();
    let _ = writeln!(out, "## Correlations\n");
    let _ = writeln!(
        out,
        "{} questions with |r| > 0.15; {:.1}% of questions with |r| >= 0.01 are negative; {} excluded.\n",
        strong.len(),
        100.0 * a.correlation.negative_fraction(),
        a.correlation.excluded.len()
    );
    if !strong.is_empty() {
        let _ = writeln!(out, "| question | r | n |");
        let _ = writeln!(out, "|---|---|---|");
        for r in &strong {
            let _ = writeln!(out, "| {} | {:.3} | {} |", r.question, r.r, r.n_pairs);
        }
        let _ = writeln!(out);
    }

    let experts: HashSet<QuestionId> = pr.experts.iter().copied().collect();
    let ranking = a.importance_ranking();
    let top = ranking.len().min(10);
    let hits = ranking[..top].iter().filter(|q| experts.contains(q)).count();
    if let Ok(p) = expert_overlap_prob(ranking.len() as u64, experts.len() as u64, top as u64, hits as u64) {
        let _ = writeln!(out, "## Expert questions in the top {top}\n");
        let _ = writeln!(
            out,
            "{hits} of {} expert questions; chance probability of exactly {hits} = {} (~{:.4e}).\n",
            experts.len(),
            p.exact,
            p.to_f64()
        );
    }

    let _ = writeln!(out, "## Stepwise linear model\n");
    let _ = writeln!(out, "{} terms selected (intercept {:.4}).\n", a.model.n_terms(), a.model.intercept);
    if a.model.n_terms() > 0 {
        let _ = writeln!(out, "| step | question | beta | AIC |");
        let _ = writeln!(out, "|---|---|---|---|");
        for (i, ((q, b), aic)) in a.model.selected.iter().zip(&a.model.beta).zip(&a.model.aic_trace).enumerate() {
            let _ = writeln!(out, "| {} | {} | {:.4} | {:.2} |", i + 1, q, b, aic);
        }
        let _ = writeln!(out);
    }

    if let Some(r) = &a.recovery {
        let _ = writeln!(out, "## Planted-question recovery\n");
        let _ = writeln!(
            out,
            "top-{}: {} planted questions found, recall {:.2}, precision {:.2}.",
            r.k, r.hits, r.recall, r.precision
        );
    }
    out
}
