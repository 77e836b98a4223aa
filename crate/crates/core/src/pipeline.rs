//! End-to-end analysis: matrix → outcome → standardize → replicated true and
//! null forests → KS → rankings → cutoff grids → linear audit model.

use std::fs;
use std::io::BufWriter;
use std::ops::RangeInclusive;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::audit::{fit_stepwise_aic, LinearModel, DEFAULT_MAX_TERMS};
use crate::cutoff::{sensitivity_grid, SensitivityGrid, DELTA_RANGE, NU_RANGE};
use crate::domain::{build_matrix, sparsity_stats, Answer, Author, MatrixScope, Participant, Question, QuestionId, SparsityStats};
use crate::error::{Error, Result};
use crate::forest::{ranking_from_scores, ForestParams};
use crate::formats::{self, ColumnStats};
use crate::meter::{DailyUsage, MeterReading};
use crate::preprocess::{
    outcome_delta30, outcome_window_total, shuffle_null, standardize_impute, OutcomeVector, StandardizeOptions,
    StandardizedMatrix, WindowOptions,
};
use crate::seeds::derive_seed;
use crate::sim::{self, evaluate_recovery, participants_from_answers, GroundTruth, Recovery, SimOutput};
use crate::stats::{
    compare_true_vs_null, correlation_ranking, rank_compare_table, CorrelationMode, CorrelationRanking, NullData,
    NullMode, RankTable, ReplicateComparison,
};

const FOREST_STREAM: u64 = 10;
const NULL_SHUFFLE_STREAM: u64 = 11;

/// Questions, answers and meter readings as read from a data directory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub questions: Vec<Question>,
    pub answers: Vec<Answer>,
    pub readings: Vec<MeterReading>,
    pub ground_truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Dataset> {
        let open = |name: &str| -> Result<fs::File> {
            fs::File::open(dir.join(name)).map_err(|e| {
                Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.join(name).display())))
            })
        };
        let questions = formats::read_questions(open(sim::QUESTIONS_FILE)?)?.strict(sim::QUESTIONS_FILE)?;
        let answers = formats::read_answers(open(sim::ANSWERS_FILE)?, &questions)?.strict(sim::ANSWERS_FILE)?;
        let readings = formats::read_meter(open(sim::METER_FILE)?)?.strict(sim::METER_FILE)?;
        let ground_truth = sim::read_ground_truth(dir)?;
        Ok(Dataset { questions, answers, readings, ground_truth })
    }

    pub fn participants(&self) -> Vec<Participant> {
        participants_from_answers(&self.answers)
    }
}

impl From<SimOutput> for Dataset {
    fn from(s: SimOutput) -> Self {
        Dataset { questions: s.questions, answers: s.answers, readings: s.readings, ground_truth: Some(s.ground_truth) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeSpec {
    /// Total over `[start, end)`.
    Window { start: NaiveDate, end: NaiveDate },
    /// 30-day deviation from the group mean ending at `as_of`.
    Delta30 { as_of: NaiveDate },
}

impl Default for OutcomeSpec {
    /// The 2013/14 winter window.
    fn default() -> Self {
        OutcomeSpec::Window {
            start: NaiveDate::from_ymd_opt(2013, 12, 21).expect("valid date"),
            end: NaiveDate::from_ymd_opt(2014, 3, 21).expect("valid date"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisParams {
    pub seed: u64,
    pub n_trees: usize,
    pub mtry: Option<usize>,
    pub min_node_size: usize,
    pub reps: usize,
    pub delta_range: (usize, usize),
    pub nu_range: (usize, usize),
    pub outcome: OutcomeSpec,
    pub min_coverage: f64,
    pub log_outcome: bool,
    pub drop_outliers: bool,
    pub null_mode: NullMode,
    pub correlation_mode: CorrelationMode,
    pub max_terms: usize,
}

impl Default for AnalysisParams {
    fn default() -> Self {
        AnalysisParams {
            seed: 0,
            n_trees: 500,
            mtry: None,
            min_node_size: 5,
            reps: 10,
            delta_range: (*DELTA_RANGE.start(), *DELTA_RANGE.end()),
            nu_range: (*NU_RANGE.start(), *NU_RANGE.end()),
            outcome: OutcomeSpec::default(),
            min_coverage: 0.9,
            log_outcome: false,
            drop_outliers: true,
            null_mode: NullMode::default(),
            correlation_mode: CorrelationMode::default(),
            max_terms: DEFAULT_MAX_TERMS,
        }
    }
}

impl AnalysisParams {
    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            mtry: self.mtry,
            min_node_size: self.min_node_size,
            max_depth: None,
            bootstrap: true,
            seed: derive_seed(self.seed, FOREST_STREAM),
        }
    }

    pub fn null_shuffle_seed(&self) -> u64 {
        derive_seed(self.seed, NULL_SHUFFLE_STREAM)
    }

    fn deltas(&self) -> RangeInclusive<usize> {
        self.delta_range.0..=self.delta_range.1
    }

    fn nus(&self) -> RangeInclusive<usize> {
        self.nu_range.0..=self.nu_range.1
    }
}

/// Modeling inputs: the standardized matrix restricted to users with an
/// outcome, and the aligned outcome values.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub sparsity: SparsityStats,
    pub matrix: crate::domain::AnswerMatrix,
    pub z: StandardizedMatrix,
    pub outcome: OutcomeVector,
    pub y: Vec<f64>,
    pub rejected_answers: usize,
    /// Expert-authored questions among the matrix columns.
    pub experts: Vec<QuestionId>,
    /// Creation dates of the matrix columns.
    pub posed_on: Vec<NaiveDate>,
}

pub fn prepare(data: &Dataset, params: &AnalysisParams) -> Result<Prepared> {
    let participants = data.participants();
    let build = build_matrix(&participants, &data.questions, &data.answers, MatrixScope::Modeling);
    let sparsity = sparsity_stats(&build.matrix)?;
    let daily = DailyUsage::from_readings(&data.readings);
    let users = build.matrix.users().to_vec();
    let outcome = match params.outcome {
        OutcomeSpec::Window { start, end } => outcome_window_total(
            &daily,
            &users,
            start,
            end,
            WindowOptions { min_coverage: params.min_coverage, standardize: true, log_outcome: params.log_outcome },
        )?,
        OutcomeSpec::Delta30 { as_of } => outcome_delta30(&daily, &users, as_of)?,
    };
    let matrix = build.matrix.select_users(&outcome.users);
    let z = standardize_impute(&matrix, StandardizeOptions { drop_outliers: params.drop_outliers });
    let y = outcome.values.clone();
    let experts = data
        .questions
        .iter()
        .filter(|q| q.author == Author::Expert && matrix.col_of(q.id).is_some())
        .map(|q| q.id)
        .collect();
    let posed_on = data
        .questions
        .iter()
        .filter(|q| matrix.col_of(q.id).is_some())
        .map(|q| q.created_at.date_naive())
        .collect();
    Ok(Prepared { sparsity, matrix, z, outcome, y, rejected_answers: build.rejected.len(), experts, posed_on })
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub params: AnalysisParams,
    pub prepared: Prepared,
    pub comparison: ReplicateComparison,
    /// Mean normalized importance over the true replicates, by column.
    pub importance: Vec<f64>,
    pub true_rankings: Vec<Vec<usize>>,
    pub null_rankings: Vec<Vec<usize>>,
    pub grid: SensitivityGrid,
    pub null_grid: SensitivityGrid,
    pub correlation: CorrelationRanking,
    pub rank_table: RankTable,
    pub model: LinearModel,
    pub recovery: Option<Recovery>,
}

impl Analysis {
    pub fn questions(&self) -> &[QuestionId] {
        &self.prepared.z.questions
    }

    /// Question ids by aggregated importance, best first.
    pub fn importance_ranking(&self) -> Vec<QuestionId> {
        ranking_from_scores(&self.importance).into_iter().map(|c| self.questions()[c]).collect()
    }
}

pub fn run_analysis(data: &Dataset, params: &AnalysisParams) -> Result<Analysis> {
    if params.reps < 2 {
        return Err(Error::InvalidParams("at least 2 replicates are needed for rank cutoffs".into()));
    }
    let prepared = prepare(data, params)?;
    let x = prepared.z.z.view();
    let fp = params.forest_params();
    let shuffled;
    let null = match params.null_mode {
        NullMode::Single => {
            shuffled = shuffle_null(&prepared.z.z, params.null_shuffle_seed());
            NullData::Fixed(shuffled.view())
        }
        NullMode::PerReplicate => NullData::Reshuffle,
    };
    let comparison = compare_true_vs_null(x, null, &prepared.y, &fp, params.reps)?;

    let p = prepared.z.n_cols();
    let mut importance = vec![0.0; p];
    for imp in &comparison.true_importance {
        for (a, v) in importance.iter_mut().zip(imp) {
            *a += v / comparison.true_importance.len() as f64;
        }
    }
    let true_rankings: Vec<Vec<usize>> = comparison.true_importance.iter().map(|s| ranking_from_scores(s)).collect();
    let null_rankings: Vec<Vec<usize>> = comparison.null_importance.iter().map(|s| ranking_from_scores(s)).collect();
    let grid = sensitivity_grid(&true_rankings, params.deltas(), params.nus())?;
    let null_grid = sensitivity_grid(&null_rankings, params.deltas(), params.nus())?;

    let correlation = correlation_ranking(&prepared.matrix, &prepared.outcome, params.correlation_mode);
    let scored: Vec<(QuestionId, f64)> = correlation
        .rows
        .iter()
        .map(|r| {
            let c = prepared.z.questions.iter().position(|q| *q == r.question).expect("column exists");
            (r.question, importance[c])
        })
        .collect();
    let rank_table = rank_compare_table(&correlation, &scored)?;
    let model = fit_stepwise_aic(&prepared.z, &prepared.y, params.max_terms)?;

    let mut analysis = Analysis {
        params: params.clone(),
        prepared,
        comparison,
        importance,
        true_rankings,
        null_rankings,
        grid,
        null_grid,
        correlation,
        rank_table,
        model,
        recovery: None,
    };
    if let Some(gt) = &data.ground_truth {
        let k = analysis.grid.consensus_k().unwrap_or(0);
        analysis.recovery = Some(evaluate_recovery(gt, &analysis.importance_ranking(), k));
    }
    Ok(analysis)
}

pub const VALIDATION_FILE: &str = "validation.json";
pub const RANKS_FILE: &str = "ranks.csv";
pub const CUTOFFS_FILE: &str = "cutoffs.csv";
pub const NULL_CUTOFFS_FILE: &str = "null_cutoffs.csv";
pub const REPORT_FILE: &str = "report.md";
pub const MATRIX_FILE: &str = "matrix.csv";
pub const STATS_FILE: &str = "stats.json";
pub const FOREST_FILE: &str = "forest.json";
pub const MODEL_FILE: &str = "model.json";

/// Every file [`Analysis::write_outputs`] produces.
pub const OUTPUT_FILES: [&str; 9] = [
    VALIDATION_FILE,
    RANKS_FILE,
    CUTOFFS_FILE,
    NULL_CUTOFFS_FILE,
    REPORT_FILE,
    MATRIX_FILE,
    STATS_FILE,
    FOREST_FILE,
    MODEL_FILE,
];

#[derive(Debug, Clone, Serialize)]
pub struct StatsExport<'a> {
    pub users: usize,
    pub questions: usize,
    pub answers_in_matrix: usize,
    pub rejected_answers: usize,
    pub min_column_missing: f64,
    pub max_column_missing: f64,
    pub median_answers_per_user: f64,
    pub outcome_users: usize,
    pub outcome_excluded: usize,
    pub outcome_group_mean_kwh: f64,
    pub outcome_group_sd_kwh: f64,
    pub columns: &'a [ColumnStats],
}

#[derive(Debug, Clone, Serialize)]
pub struct ImportanceExport {
    pub question_id: QuestionId,
    pub mean_importance: f64,
    pub rank: usize,
    pub replicate_ranks: Vec<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ForestSummaryExport {
    pub params: ForestParams,
    pub reps: usize,
    pub true_seeds: Vec<u64>,
    pub null_seeds: Vec<u64>,
    pub importance: Vec<ImportanceExport>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes)?;
    Ok(())
}

impl Analysis {
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let pr = &self.prepared;
        write_json(&dir.join(VALIDATION_FILE), &self.comparison.export())?;
        self.rank_table.write_csv(BufWriter::new(fs::File::create(dir.join(RANKS_FILE))?))?;
        self.grid.write_csv(BufWriter::new(fs::File::create(dir.join(CUTOFFS_FILE))?))?;
        self.null_grid.write_csv(BufWriter::new(fs::File::create(dir.join(NULL_CUTOFFS_FILE))?))?;
        formats::write_answer_matrix(BufWriter::new(fs::File::create(dir.join(MATRIX_FILE))?), &pr.matrix)?;

        let columns = formats::column_stats(&pr.z);
        let stats = StatsExport {
            users: pr.z.n_rows(),
            questions: pr.z.n_cols(),
            answers_in_matrix: pr.matrix.filled(),
            rejected_answers: pr.rejected_answers,
            min_column_missing: pr.sparsity.min_missing,
            max_column_missing: pr.sparsity.max_missing,
            median_answers_per_user: pr.sparsity.median_answers_per_user(),
            outcome_users: pr.outcome.users.len(),
            outcome_excluded: pr.outcome.excluded.len(),
            outcome_group_mean_kwh: pr.outcome.group_mean,
            outcome_group_sd_kwh: pr.outcome.group_sd,
            columns: &columns,
        };
        write_json(&dir.join(STATS_FILE), &stats)?;

        let positions: Vec<Vec<usize>> = self
            .true_rankings
            .iter()
            .map(|r| {
                let mut pos = vec![0; r.len()];
                for (i, &c) in r.iter().enumerate() {
                    pos[c] = i + 1;
                }
                pos
            })
            .collect();
        let importance = ranking_from_scores(&self.importance)
            .into_iter()
            .enumerate()
            .map(|(i, c)| ImportanceExport {
                question_id: self.questions()[c],
                mean_importance: self.importance[c],
                rank: i + 1,
                replicate_ranks: positions.iter().map(|p| p[c]).collect(),
            })
            .collect();
        let forest = ForestSummaryExport {
            params: self.params.forest_params(),
            reps: self.params.reps,
            true_seeds: self.comparison.true_seeds.clone(),
            null_seeds: self.comparison.null_seeds.clone(),
            importance,
        };
        write_json(&dir.join(FOREST_FILE), &forest)?;
        write_json(&dir.join(MODEL_FILE), &self.model.export())?;
        fs::write(dir.join(REPORT_FILE), crate::report::render(self))?;
        Ok(())
    }
}
