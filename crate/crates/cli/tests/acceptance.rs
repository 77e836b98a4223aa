//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Tolerances and seed counts are pinned below.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use crowdkwh_core::audit::fit_stepwise_aic;
use crowdkwh_core::domain::{build_matrix, AnswerMatrix, AnswerValue, MatrixScope, QuestionId, UserId};
use crowdkwh_core::forest::{fit_forest, fit_tree, ForestParams, RegressionTree, TreeLimits};
use crowdkwh_core::pipeline::{run_analysis, AnalysisParams, Dataset, OUTPUT_FILES};
use crowdkwh_core::preprocess::{shuffle_null, standardize_impute, StandardizeOptions, StandardizedMatrix};
use crowdkwh_core::sim::paper_regime;
use crowdkwh_core::stats::{expert_overlap_prob, ks_exact_two_sample, NullMode};
use crowdkwh_oracles::{check_standardized, check_tree, hypergeometric, stepwise_path, NodeView, SplitView};
use ndarray::Array2;
use num::{BigRational, One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const BIN: &str = env!("CARGO_BIN_EXE_crowdkwh");

const KS_REPORTED_P: f64 = 0.00001083;
const FAST_LIMIT: Duration = Duration::from_secs(1);

const E2E_SEEDS: u64 = 10;
const E2E_TREES: usize = 150;
const E2E_REPS: usize = 10;
const KS_ALPHA: f64 = 0.01;
const E2E_MIN_PASSING: usize = 9;
const MIN_MISSING_RANGE: (f64, f64) = (0.30, 0.40);
const SHAPE_RANGE: (usize, usize) = (500, 700);
const PLANTED: usize = 10;
const NULL_SMALL_K: usize = 7;
const NULL_CELL_SHARE: f64 = 0.5;
const NULL_MIN_PASSING: usize = 8;
const RECALL_MIN: f64 = 0.8;
const RECALL_MIN_PASSING: usize = 8;
const E2E_LIMIT: Duration = Duration::from_secs(600);

const STEPWISE_INSTANCES: u64 = 100;
const STEPWISE_TOL: f64 = 1e-8;
const CART_INSTANCES: u64 = 200;
const DEGENERATE_INSTANCES: u64 = 20;
const PREPROCESS_INSTANCES: u64 = 300;
const Z_TOL: f64 = 1e-9;

struct Outcome {
    failures: usize,
}

impl Outcome {
    fn report(&mut self, id: usize, name: &str, ok: bool, detail: String) {
        println!("{} [{id}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failures += 1;
        }
    }
}

fn ks_reproduction() -> (bool, String) {
    let t = Instant::now();
    let a: Vec<f64> = (0..10).map(f64::from).collect();
    let b: Vec<f64> = (10..20).map(f64::from).collect();
    let r = ks_exact_two_sample(&a, &b).expect("valid samples");
    let elapsed = t.elapsed();
    let exact = 2.0 / 184_756.0;
    let three_sig = |v: f64| format!("{v:.2e}");
    let ok = r.d == 1.0
        && ((r.p_value - exact).abs() / exact) < 1e-12
        && three_sig(r.p_value) == three_sig(KS_REPORTED_P)
        && elapsed < FAST_LIMIT;
    (ok, format!("D = {}, p = {:.4e} (reported {KS_REPORTED_P:.4e}), {:.1} ms", r.d, r.p_value, elapsed.as_secs_f64() * 1e3))
}

fn overlap_formula() -> (bool, String) {
    let t = Instant::now();
    let p = expert_overlap_prob(632, 6, 10, 2).expect("valid");
    let matches = p.exact == hypergeometric(632, 6, 10, 2);
    let mut sum = BigRational::zero();
    let mut all_match = true;
    for k in 0..=6 {
        let v = expert_overlap_prob(632, 6, 10, k).expect("valid").exact;
        all_match &= v == hypergeometric(632, 6, 10, k);
        sum += v;
    }
    let elapsed = t.elapsed();
    let ok = matches && all_match && sum == BigRational::one() && elapsed < FAST_LIMIT;
    (ok, format!("P(2 of 6 in top 10 of 632) = {:.6e} exact match {matches}, sum over k = 1 exactly: {}, {:.1} ms", p.to_f64(), sum.is_one(), elapsed.as_secs_f64() * 1e3))
}

struct SeedResult {
    shape_ok: bool,
    signal: bool,
    null_share: f64,
    recall: f64,
    detail: String,
}

fn end_to_end() -> (Vec<SeedResult>, Duration) {
    let t = Instant::now();
    let mut out = Vec::new();
    for seed in 0..E2E_SEEDS {
        let sim = paper_regime(seed).expect("preset simulates");
        let planted = sim.ground_truth.planted.len();
        let params = AnalysisParams {
            seed,
            n_trees: E2E_TREES,
            reps: E2E_REPS,
            log_outcome: true,
            null_mode: NullMode::Single,
            ..AnalysisParams::default()
        };
        let a = run_analysis(&Dataset::from(sim), &params).expect("analysis runs");
        let (n, p) = (a.prepared.z.n_rows(), a.prepared.z.n_cols());
        let min_missing = a.prepared.sparsity.min_missing;
        let in_range = |v: usize| (SHAPE_RANGE.0..=SHAPE_RANGE.1).contains(&v);
        let shape_ok = in_range(n)
            && in_range(p)
            && (MIN_MISSING_RANGE.0..=MIN_MISSING_RANGE.1).contains(&min_missing)
            && planted == PLANTED;
        let c = &a.comparison;
        let signal = c.mean_true() < c.mean_null() && c.ks.p_value < KS_ALPHA;
        let null_share = a.null_grid.fraction_invalid_or_at_most(NULL_SMALL_K);
        let recall = a.recovery.map_or(0.0, |r| r.recall);
        let detail = format!(
            "seed {seed}: {n}x{p}, min missing {min_missing:.3}, MSE {:.4} vs {:.4}, KS p {:.2e}, null cells invalid or k<={NULL_SMALL_K} {:.2}, recall {:.2} at k={}",
            c.mean_true(),
            c.mean_null(),
            c.ks.p_value,
            null_share,
            recall,
            a.recovery.map_or(0, |r| r.k)
        );
        println!("      {detail}");
        out.push(SeedResult { shape_ok, signal, null_share, recall, detail });
    }
    (out, t.elapsed())
}

fn unit_matrix(z: Array2<f64>) -> StandardizedMatrix {
    let (n, p) = z.dim();
    StandardizedMatrix {
        users: (1..=n as u32).map(UserId).collect(),
        questions: (1..=p as u32).map(QuestionId).collect(),
        imputed: Array2::from_elem((n, p), false),
        col_means: vec![0.0; p],
        col_sds: vec![1.0; p],
        missing_fraction: vec![0.0; p],
        outliers_removed: vec![0; p],
        z,
    }
}

fn stepwise_equivalence() -> (bool, String) {
    let mut mismatches = Vec::new();
    let mut max_dev: f64 = 0.0;
    for inst in 0..STEPWISE_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(inst);
        let p = rng.random_range(1..=8usize);
        let n = rng.random_range(12..=50usize);
        let z = Array2::from_shape_fn((n, p), |_| rng.sample::<f64, _>(StandardNormal));
        let k = rng.random_range(0..=p);
        let y: Vec<f64> = (0..n)
            .map(|i| (0..k).map(|c| (c as f64 + 1.0) * 0.4 * z[[i, c]]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let max_terms = rng.random_range(1..=p + 1);
        let fit = fit_stepwise_aic(&unit_matrix(z.clone()), &y, max_terms).expect("fits");
        let (path, trace) = stepwise_path(&z, &y, max_terms);
        for (a, b) in fit.aic_trace.iter().zip(&trace) {
            max_dev = max_dev.max((a - b).abs());
        }
        if fit.selected_cols != path || fit.aic_trace.len() != trace.len() {
            mismatches.push(inst);
        }
    }
    let ok = mismatches.is_empty() && max_dev < STEPWISE_TOL;
    (ok, format!("{} of {STEPWISE_INSTANCES} paths identical, max AIC deviation {max_dev:.1e}", STEPWISE_INSTANCES as usize - mismatches.len()))
}

fn tree_data(seed: u64, n: usize, p: usize, discrete: bool) -> (Array2<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Array2::from_shape_fn((n, p), |_| if discrete { rng.random_range(0..4) as f64 } else { rng.random_range(-1.0..1.0) });
    let y = (0..n).map(|i| x[[i, 0]] * 2.0 - x[[i, p - 1]].powi(2) + rng.random_range(-0.5..0.5)).collect();
    (x, y)
}

fn views(tree: &RegressionTree) -> Vec<NodeView> {
    tree.nodes
        .iter()
        .map(|n| NodeView {
            n_samples: n.n_samples,
            impurity: n.impurity,
            split: n.split.map(|s| SplitView { feature: s.feature, threshold: s.threshold, left: s.left, right: s.right, reduction: s.reduction }),
        })
        .collect()
}

fn forest_degeneracy() -> (bool, String) {
    let mut bitwise = 0;
    for seed in 0..DEGENERATE_INSTANCES {
        let (n, p) = (60, 5);
        let (x, y) = tree_data(seed, n, p, seed % 3 == 0);
        let params = ForestParams { n_trees: 1, mtry: Some(p), bootstrap: false, seed, ..ForestParams::default() };
        let forest = fit_forest(x.view(), &y, &params).expect("fits");
        let rows: Vec<usize> = (0..n).collect();
        let tree = fit_tree(x.view(), &y, &rows, p, params.limits(), seed).expect("fits");
        let same = (0..n).all(|i| {
            let row = x.row(i).to_vec();
            forest.predict(&row).expect("width").to_bits() == tree.predict(&row).to_bits()
        });
        bitwise += usize::from(same);
    }
    let mut cart_ok = 0;
    let mut first_err = String::new();
    for seed in 0..CART_INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let n = rng.random_range(2..=20);
        let p = rng.random_range(1..=4);
        let min_leaf = rng.random_range(1..=4);
        let (x, y) = tree_data(seed, n, p, seed % 2 == 0);
        let rows: Vec<usize> = (0..n).collect();
        let tree = fit_tree(x.view(), &y, &rows, p, TreeLimits { min_node_size: min_leaf, max_depth: None }, seed).expect("fits");
        match check_tree(&views(&tree), &x, &y, min_leaf) {
            Ok(()) => cart_ok += 1,
            Err(e) if first_err.is_empty() => first_err = format!(" (seed {seed}: {e})"),
            Err(_) => {}
        }
    }
    let ok = bitwise == DEGENERATE_INSTANCES as usize && cart_ok == CART_INSTANCES as usize;
    (ok, format!("{bitwise}/{DEGENERATE_INSTANCES} single-tree forests bitwise equal, {cart_ok}/{CART_INSTANCES} CART trees match exhaustive splits{first_err}"))
}

fn random_matrix(seed: u64) -> AnswerMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(3..40usize);
    let p = rng.random_range(1..6usize);
    let cells = (0..n * p)
        .map(|_| match rng.random_range(0..6) {
            0 => None,
            1 => Some([1000.0, -1000.0, 0.0][rng.random_range(0..3)]),
            _ => Some(rng.random_range(-50.0..50.0)),
        })
        .map(|c| c.map(AnswerValue::Numeric))
        .collect();
    AnswerMatrix::from_cells((1..=n as u32).map(UserId).collect(), (1..=p as u32).map(QuestionId).collect(), cells).expect("shape")
}

fn column_multisets_equal(a: &StandardizedMatrix, b: &StandardizedMatrix) -> bool {
    (0..a.n_cols()).all(|c| {
        let mut x = a.z.column(c).to_vec();
        let mut y = b.z.column(c).to_vec();
        x.sort_by(f64::total_cmp);
        y.sort_by(f64::total_cmp);
        x.iter().zip(&y).all(|(u, v)| u.to_bits() == v.to_bits())
    })
}

fn preprocessing() -> (bool, String) {
    let mut bad = Vec::new();
    for seed in 0..PREPROCESS_INSTANCES {
        let s = standardize_impute(&random_matrix(seed), StandardizeOptions::default());
        let shuffled = shuffle_null(&s, seed);
        if let Err(e) = check_standardized(&s.z, &s.imputed, Z_TOL) {
            bad.push(format!("seed {seed}: {e}"));
        } else if !column_multisets_equal(&s, &shuffled) {
            bad.push(format!("seed {seed}: shuffle changed a column"));
        }
    }
    let sim = paper_regime(0).expect("preset simulates");
    let m = build_matrix(&sim.participants, &sim.questions, &sim.answers, MatrixScope::Modeling).matrix;
    let s = standardize_impute(&m, StandardizeOptions::default());
    let full = check_standardized(&s.z, &s.imputed, Z_TOL).is_ok() && column_multisets_equal(&s, &shuffle_null(&s, 7));
    if !full {
        bad.push("simulated matrix".into());
    }
    let ok = bad.is_empty();
    (
        ok,
        format!(
            "{PREPROCESS_INSTANCES} random matrices and a {}x{} simulated matrix: mean 0 and sd 1 within {Z_TOL:e}, imputed cells 0, observed |z| < 3, shuffled columns equal as multisets{}",
            s.n_rows(),
            s.n_cols(),
            bad.first().map(|b| format!("; first failure {b}")).unwrap_or_default()
        ),
    )
}

fn run_bin(args: &[&str]) -> Result<(), String> {
    let o = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} exited {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))
    }
}

fn determinism(tmp: &Path) -> (bool, String) {
    let p = |s: &str| tmp.join(s).to_str().expect("utf-8 path").to_string();
    let steps = run_bin(&["simulate", "--seed", "5", "--out", &p("data")])
        .and_then(|_| run_bin(&["analyze", "--data", &p("data"), "--out", &p("first"), "--seed", "5", "--trees", "25", "--reps", "3"]))
        .and_then(|_| run_bin(&["rerun", "--manifest", &p("first/manifest.json"), "--out", &p("second")]));
    if let Err(e) = steps {
        return (false, e);
    }
    let differing: Vec<&str> = OUTPUT_FILES
        .iter()
        .copied()
        .filter(|f| fs::read(tmp.join("first").join(f)).ok() != fs::read(tmp.join("second").join(f)).ok() || !tmp.join("first").join(f).exists())
        .collect();
    (
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} analysis outputs byte-identical after rerun from manifest", OUTPUT_FILES.len())
        } else {
            format!("differing outputs: {differing:?}")
        },
    )
}

fn main() {
    let mut o = Outcome { failures: 0 };

    let (ok, d) = ks_reproduction();
    o.report(1, "exact KS reproduction", ok, d);
    let (ok, d) = overlap_formula();
    o.report(2, "expert overlap formula", ok, d);

    println!("      end-to-end fixture: {E2E_SEEDS} seeds, {E2E_TREES} trees, {E2E_REPS} replicates, log outcome, single null shuffle");
    let (runs, elapsed) = end_to_end();
    let shapes = runs.iter().filter(|r| r.shape_ok).count();
    let signal = runs.iter().filter(|r| r.signal).count();
    o.report(
        3,
        "end-to-end signal detection",
        shapes == runs.len() && signal >= E2E_MIN_PASSING && elapsed < E2E_LIMIT,
        format!("{signal}/{E2E_SEEDS} seeds with lower true MSE and KS p < {KS_ALPHA} (need {E2E_MIN_PASSING}), {shapes}/{E2E_SEEDS} datasets in shape, {:.0} s", elapsed.as_secs_f64()),
    );
    let null = runs.iter().filter(|r| r.null_share > NULL_CELL_SHARE).count();
    o.report(
        4,
        "null cutoff behavior",
        null >= NULL_MIN_PASSING,
        format!("{null}/{E2E_SEEDS} seeds with > {NULL_CELL_SHARE} of null cells invalid or k <= {NULL_SMALL_K} (need {NULL_MIN_PASSING})"),
    );
    let recalled = runs.iter().filter(|r| r.recall >= RECALL_MIN).count();
    let worst = runs.iter().min_by(|a, b| a.recall.total_cmp(&b.recall)).map(|r| r.detail.clone()).unwrap_or_default();
    o.report(
        5,
        "planted-feature recovery",
        recalled >= RECALL_MIN_PASSING,
        format!("{recalled}/{E2E_SEEDS} seeds with recall >= {RECALL_MIN} (need {RECALL_MIN_PASSING}); weakest {worst}"),
    );

    let (ok, d) = stepwise_equivalence();
    o.report(6, "stepwise oracle equivalence", ok, d);
    let (ok, d) = forest_degeneracy();
    o.report(7, "forest degeneracy and CART splits", ok, d);
    let (ok, d) = preprocessing();
    o.report(8, "preprocessing invariants", ok, d);
    let tmp = tempfile::tempdir().expect("temp dir");
    let (ok, d) = determinism(tmp.path());
    o.report(9, "rerun determinism", ok, d);

    println!("{} of 9 criteria passed", 9 - o.failures);
    if o.failures > 0 {
        std::process::exit(1);
    }
}
