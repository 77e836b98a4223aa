use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::Utc;
use crowdkwh_core::pipeline::{run_analysis, AnalysisParams, Dataset, OutcomeSpec};
use crowdkwh_core::sim::{simulate, SimConfig, ANSWERS_FILE, METER_FILE, QUESTIONS_FILE};
use crowdkwh_server::AppState;
use crowdkwh_store::{Store, StoreError};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::args::{AnalyzeArgs, ExportArgs, IngestArgs, Preset, RerunArgs, ServeArgs, SimulateArgs};
use crate::failure::Failure;
use crate::manifest::{absolute, merge, RunManifest, MANIFEST_FILE};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SimulateParams {
    preset: Option<String>,
    config: SimConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AnalyzeParams {
    data_dir: PathBuf,
    analysis: AnalysisParams,
}

fn read_overrides<T: Serialize + DeserializeOwned>(base: &T, path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return serde_json::from_value(serde_json::to_value(base).map_err(Failure::internal)?).map_err(Failure::internal);
    };
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let patch: Value = serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    let mut v = serde_json::to_value(base).map_err(Failure::internal)?;
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> Result<Value, Failure> {
    serde_json::to_value(v).map_err(Failure::internal)
}

pub fn simulate_cmd(a: SimulateArgs) -> Result<(), Failure> {
    let preset = match a.preset {
        Preset::PaperRegime => SimConfig::paper_regime(),
    };
    let config = read_overrides(&preset, a.config.as_deref())?;
    config.validate()?;
    let params = SimulateParams { preset: Some("paper-regime".into()), config };
    let manifest = RunManifest::new("simulate", a.config.as_deref(), a.seed, &a.out, to_value(&params)?);
    run_simulate(&manifest, &params)
}

fn run_simulate(manifest: &RunManifest, params: &SimulateParams) -> Result<(), Failure> {
    manifest.write()?;
    let out = simulate(&params.config, manifest.seed)?;
    out.write_dir(&manifest.out_dir).map_err(Failure::internal)?;
    println!(
        "simulated {} participants, {} questions, {} answers, {} meter readings into {}",
        out.participants.len(),
        out.questions.len(),
        out.answers.len(),
        out.readings.len(),
        manifest.out_dir.display()
    );
    Ok(())
}

pub fn analyze_cmd(a: AnalyzeArgs) -> Result<(), Failure> {
    let mut p = read_overrides(&AnalysisParams::default(), a.config.as_deref())?;
    if let Some(v) = a.seed {
        p.seed = v;
    }
    if let Some(v) = a.trees {
        p.n_trees = v;
    }
    if a.mtry.is_some() {
        p.mtry = a.mtry;
    }
    if let Some(v) = a.min_node_size {
        p.min_node_size = v;
    }
    if let Some(v) = a.reps {
        p.reps = v;
    }
    if let Some(v) = a.delta_range {
        p.delta_range = v;
    }
    if let Some(v) = a.nu_range {
        p.nu_range = v;
    }
    if a.log_outcome {
        p.log_outcome = true;
    }
    if let Some(m) = a.null_mode {
        p.null_mode = m.into();
    }
    if let Some((start, end)) = a.window {
        p.outcome = OutcomeSpec::Window { start, end };
    }
    if p.n_trees == 0 {
        return Err(Failure::Usage("--trees must be at least 1".into()));
    }
    if p.reps < 2 {
        return Err(Failure::Usage("--reps must be at least 2".into()));
    }
    let params = AnalyzeParams { data_dir: absolute(&a.data), analysis: p };
    let manifest = RunManifest::new("analyze", a.config.as_deref(), params.analysis.seed, &a.out, to_value(&params)?);
    run_analyze(manifest, &params)
}

fn dataset_inputs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = [QUESTIONS_FILE, ANSWERS_FILE, METER_FILE].iter().map(|f| dir.join(f)).collect();
    let gt = dir.join(crowdkwh_core::sim::GROUND_TRUTH_FILE);
    if gt.exists() {
        v.push(gt);
    }
    v
}

fn run_analyze(manifest: RunManifest, params: &AnalyzeParams) -> Result<(), Failure> {
    if !params.data_dir.is_dir() {
        return Err(Failure::Data(format!("{}: not a directory", params.data_dir.display())));
    }
    let manifest = if manifest.inputs.is_empty() { manifest.with_inputs(&dataset_inputs(&params.data_dir))? } else { manifest };
    manifest.write()?;
    let data = Dataset::load(&params.data_dir)?;
    let analysis = run_analysis(&data, &params.analysis)?;
    analysis.write_outputs(&manifest.out_dir).map_err(Failure::internal)?;
    let c = &analysis.comparison;
    println!(
        "OOB MSE true {:.4} null {:.4}; KS D = {:.3}, p = {:.4e}; cutoff grid {} of {} cells valid; outputs in {}",
        c.mean_true(),
        c.mean_null(),
        c.ks.d,
        c.ks.p_value,
        analysis.grid.summary.cells - analysis.grid.summary.invalid,
        analysis.grid.summary.cells,
        manifest.out_dir.display()
    );
    Ok(())
}

pub fn rerun_cmd(a: RerunArgs) -> Result<(), Failure> {
    let path = if a.manifest.is_dir() { a.manifest.join(MANIFEST_FILE) } else { a.manifest.clone() };
    let old = RunManifest::read(&path)?;
    if absolute(&a.out) == old.out_dir {
        return Err(Failure::Usage("rerun needs an output directory other than the recorded one".into()));
    }
    let mut manifest = old.clone();
    manifest.out_dir = absolute(&a.out);
    manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
    match old.subcommand.as_str() {
        "simulate" => {
            let params: SimulateParams = serde_json::from_value(old.params).map_err(Failure::data)?;
            run_simulate(&manifest, &params)
        }
        "analyze" => {
            old.verify_inputs()?;
            let params: AnalyzeParams = serde_json::from_value(old.params).map_err(Failure::data)?;
            run_analyze(manifest, &params)
        }
        other => Err(Failure::Data(format!("cannot rerun a {other:?} manifest"))),
    }
}

pub fn ingest_cmd(a: IngestArgs) -> Result<(), Failure> {
    let store = Store::open(&a.store)?;
    let report = store.ingest_meter_csv(&a.file)?;
    for e in &report.rejected {
        eprintln!("{}:{}: {}", a.file.display(), e.line, e.message);
    }
    println!("accepted {} rows, rejected {}, {} readings stored", report.accepted, report.rejected.len(), report.stored);
    Ok(())
}

pub fn export_cmd(a: ExportArgs) -> Result<(), Failure> {
    if !a.store.is_dir() {
        return Err(Failure::Data(format!("{}: no store here", a.store.display())));
    }
    let as_of = a.as_of.unwrap_or_else(Utc::now);
    let params = serde_json::json!({"store": absolute(&a.store), "as_of": as_of});
    let manifest = RunManifest::new("export", None, 0, &a.out, params);
    manifest.write()?;
    let store = Store::open(&a.store)?;
    let snap = store.snapshot(as_of);
    snap.write_dir(&manifest.out_dir)?;
    println!(
        "exported {} questions, {} answers, {} readings as of {as_of}",
        snap.questions.len(),
        snap.answers.len(),
        snap.readings.len()
    );
    Ok(())
}

pub fn serve_cmd(a: ServeArgs) -> Result<(), Failure> {
    let store = Store::open(&a.store)?;
    if let Some(dir) = &a.import {
        let data = Dataset::load(dir)?;
        match store.import(&data.questions, &data.answers, &data.readings) {
            Ok(()) => tracing::info!(dir = %dir.display(), "imported dataset"),
            Err(StoreError::Conflict(_)) => tracing::warn!("store already holds data; skipping import"),
            Err(e) => return Err(e.into()),
        }
    }
    if store.seed_if_empty(Utc::now())? {
        tracing::info!("seeded expert questions");
    }
    let state = AppState::new(Arc::new(store));
    let rt = tokio::runtime::Runtime::new().map_err(Failure::internal)?;
    rt.block_on(async move {
        let addr = format!("{}:{}", a.bind, a.port);
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| Failure::Internal(format!("cannot listen on {addr}: {e}")))?;
        tracing::info!(%addr, "listening");
        state.start_refresh();
        let every = (a.refresh_minutes > 0).then(|| Duration::from_secs(60 * a.refresh_minutes));
        crowdkwh_server::serve(listener, state, every).await.map_err(Failure::internal)
    })
}
