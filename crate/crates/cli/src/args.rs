use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crowdkwh_core::stats::NullMode;

#[derive(Debug, Parser)]
#[command(name = "crowdkwh", version, about = "Crowdsourced energy survey modeling and audit service")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset with planted effects.
    Simulate(SimulateArgs),
    /// Run the forest validation, rank-cutoff and stepwise pipeline on a dataset.
    Analyze(AnalyzeArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
    /// Serve the JSON API over a store directory.
    Serve(ServeArgs),
    /// Load a meter CSV into a store.
    IngestMeter(IngestArgs),
    /// Write a store snapshot as dataset files.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    PaperRegime,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Built-in configuration, used when no --config is given.
    #[arg(long, value_enum, default_value = "paper-regime")]
    pub preset: Preset,
    /// JSON file overriding fields of the preset.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NullModeArg {
    Single,
    PerReplicate,
}

impl From<NullModeArg> for NullMode {
    fn from(m: NullModeArg) -> Self {
        match m {
            NullModeArg::Single => NullMode::Single,
            NullModeArg::PerReplicate => NullMode::PerReplicate,
        }
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Directory holding questions.csv, answers.csv and meter.csv.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON file overriding analysis parameters; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trees: Option<usize>,
    #[arg(long)]
    pub mtry: Option<usize>,
    #[arg(long)]
    pub min_node_size: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Inclusive δ range as a:b.
    #[arg(long, value_parser = parse_range)]
    pub delta_range: Option<(usize, usize)>,
    /// Inclusive ν range as a:b.
    #[arg(long, value_parser = parse_range)]
    pub nu_range: Option<(usize, usize)>,
    /// Model the log of window usage.
    #[arg(long)]
    pub log_outcome: bool,
    #[arg(long, value_enum)]
    pub null_mode: Option<NullModeArg>,
    /// Outcome window as YYYY-MM-DD:YYYY-MM-DD, end exclusive.
    #[arg(long, value_parser = parse_window)]
    pub window: Option<(chrono::NaiveDate, chrono::NaiveDate)>,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
    /// Dataset directory loaded into an empty store on first boot.
    #[arg(long)]
    pub import: Option<PathBuf>,
    /// Minutes between background model refits; 0 disables them.
    #[arg(long, default_value_t = 60)]
    pub refresh_minutes: u64,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub store: PathBuf,
    /// CSV with user_id,interval_start,kwh.
    pub file: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// RFC 3339 timestamp or date; defaults to now.
    #[arg(long, value_parser = parse_instant)]
    pub as_of: Option<chrono::DateTime<chrono::Utc>>,
}

pub fn parse_range(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected a:b")?;
    let a: usize = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
    if a > b {
        return Err(format!("empty range {a}:{b}"));
    }
    Ok((a, b))
}

fn parse_window(s: &str) -> Result<(chrono::NaiveDate, chrono::NaiveDate), String> {
    let (a, b) = s.split_once(':').ok_or("expected start:end")?;
    let a: chrono::NaiveDate = a.parse().map_err(|e| format!("{a:?}: {e}"))?;
    let b: chrono::NaiveDate = b.parse().map_err(|e| format!("{b:?}: {e}"))?;
    if a >= b {
        return Err(format!("empty window {a}:{b}"));
    }
    Ok((a, b))
}

pub fn parse_instant(s: &str) -> Result<chrono::DateTime<chrono::Utc>, String> {
    if let Ok(t) = chrono::DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&chrono::Utc));
    }
    let d: chrono::NaiveDate = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
}
