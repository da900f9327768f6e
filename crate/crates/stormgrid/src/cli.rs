//! Command-line front end: `ingest -> train -> evaluate -> predict`, plus a
//! `synth` subcommand that writes the bundled synthetic archive. One JSON
//! config file drives every stage; any field can be overridden by flag and
//! `CGF_SEED` overrides every seed at once. Outputs land under `--out` with
//! stable filenames (`summary.json`, `dataset.cgf`, `checkpoint.cgf`,
//! `metrics.json`, `trajectory.geojson`, `train_log.jsonl`).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainingMeta};
use crate::dataset::{
    self, fit_normalizer, normalize_split, split_by_storm, window_storms, CachedStorm,
};
use crate::forecast::{self, ExportFormat};
use crate::geo::fit_grid;
use crate::hurdat::{dataset_summary, filter_tracks, parse_hurdat2};
use crate::model::ModelConfig;
use crate::synth::{generate_hurdat2, SynthConfig};
use crate::train::{evaluate, train, TrainConfig, TrainError};

/// Exit codes: 0 success, 2 input error, 3 numeric failure.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numeric(m) => m,
        }
    }
}

fn input_err(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn numeric_err(e: impl std::fmt::Display) -> CliError {
    CliError::Numeric(e.to_string())
}

/// Everything one run needs; defaults mirror the standard pipeline settings
/// (1944-2022, one-degree grid, 12-step windows padded to 100, 85:15 split).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CliConfig {
    pub data: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub min_year: i32,
    pub max_year: i32,
    pub grid_resolution: f64,
    pub window: usize,
    pub horizon: usize,
    pub pad_len: usize,
    pub split_ratio: f64,
    pub split_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            data: None,
            out_dir: PathBuf::from("out"),
            min_year: 1944,
            max_year: 2022,
            grid_resolution: 1.0,
            window: 12,
            horizon: 1,
            pad_len: 100,
            split_ratio: 0.85,
            split_seed: 7,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl CliConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut cfg = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| input_err(format!("config {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| input_err(format!("config {}: {e}", p.display())))?
            }
            None => Self::default(),
        };
        if let Ok(seed) = std::env::var("CGF_SEED") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| input_err(format!("CGF_SEED {seed:?} is not an integer")))?;
            cfg.model.seed = seed;
            cfg.train.seed = seed;
            cfg.split_seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "stormgrid",
    about = "Grid-based tropical cyclone track forecasting",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Parse and filter a HURDAT2 file into the dataset cache.
    Ingest(IngestArgs),
    /// Train a model on an ingested cache.
    Train(TrainArgs),
    /// Evaluate a checkpoint on its held-out test split.
    Evaluate(EvaluateArgs),
    /// Forecast one storm and export the trajectory.
    Predict(PredictArgs),
    /// Write a deterministic synthetic best-track archive.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// HURDAT2 input file.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub min_year: Option<i32>,
    #[arg(long)]
    pub max_year: Option<i32>,
    /// Grid resolution in degrees per cell.
    #[arg(long)]
    pub resolution: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset cache (defaults to <out>/dataset.cgf).
    #[arg(long)]
    pub cache: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset cache (defaults to <out>/dataset.cgf).
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    /// Trained checkpoint file.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Storm to forecast, e.g. AL092004.
    #[arg(long)]
    pub storm_id: String,
    /// Forecast steps (6-hour units).
    #[arg(long, default_value_t = 8)]
    pub steps: usize,
    /// geojson or csv.
    #[arg(long, default_value = "geojson")]
    pub format: String,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset cache (defaults to <out>/dataset.cgf).
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output text file.
    #[arg(long, default_value = "synthetic_hurdat2.txt")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1851)]
    pub start_year: i32,
    #[arg(long, default_value_t = 2022)]
    pub end_year: i32,
    #[arg(long, default_value_t = 1851)]
    pub seed: u64,
    #[arg(long, default_value_t = 8)]
    pub storms_per_year: usize,
}

fn ensure_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| input_err(format!("out dir {}: {e}", dir.display())))
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(y) = args.min_year {
        cfg.min_year = y;
    }
    if let Some(y) = args.max_year {
        cfg.max_year = y;
    }
    if let Some(r) = args.resolution {
        cfg.grid_resolution = r;
    }

    let text = fs::read_to_string(&args.data)
        .map_err(|e| input_err(format!("data file {}: {e}", args.data.display())))?;
    let tracks = parse_hurdat2(&text).map_err(input_err)?;
    let filtered = filter_tracks(&tracks, cfg.min_year, cfg.max_year);
    if filtered.is_empty() {
        return Err(input_err(format!(
            "no storms survive filtering to [{}, {}]",
            cfg.min_year, cfg.max_year
        )));
    }
    let summary = dataset_summary(&filtered);
    let positions: Vec<_> = filtered
        .iter()
        .flat_map(|t| t.points.iter().map(|p| p.position))
        .collect();
    let grid = fit_grid(&positions, cfg.grid_resolution).map_err(input_err)?;
    let storms: Vec<CachedStorm> = filtered
        .iter()
        .map(CachedStorm::from_track)
        .collect::<Result<_, _>>()
        .map_err(input_err)?;

    ensure_out_dir(&cfg.out_dir)?;
    let cache_path = cfg.out_dir.join("dataset.cgf");
    dataset::write_cache(&storms, &grid, &summary, &cache_path).map_err(input_err)?;

    let report = json!({
        "storms": summary.storms,
        "points": summary.points,
        "min_year": summary.min_year,
        "max_year": summary.max_year,
        "max_track_len": summary.max_track_len,
        "grid": grid,
        "cell_count": grid.cell_count(),
        "max_step_displacement_miles": dataset::max_step_displacement_miles(&storms),
        "cache": cache_path,
    });
    let pretty = serde_json::to_string_pretty(&report).expect("json");
    fs::write(cfg.out_dir.join("summary.json"), &pretty)
        .map_err(|e| input_err(format!("summary.json: {e}")))?;
    println!("{pretty}");
    Ok(())
}

struct PreparedData {
    storms: Vec<CachedStorm>,
    sidecar: dataset::CacheSidecar,
}

fn load_cache(cache: &Path) -> Result<PreparedData, CliError> {
    let (storms, sidecar) = dataset::read_cache(cache)
        .map_err(|e| input_err(format!("cache {}: {e}", cache.display())))?;
    Ok(PreparedData { storms, sidecar })
}

fn cache_path(cfg: &CliConfig, flag: &Option<PathBuf>) -> PathBuf {
    flag.clone().unwrap_or_else(|| cfg.out_dir.join("dataset.cgf"))
}

pub fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = args.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        cfg.train.learning_rate = lr;
    }
    if let Some(s) = args.seed {
        cfg.train.seed = s;
        cfg.model.seed = s;
        cfg.split_seed = s;
    }

    let cache = cache_path(&cfg, &args.cache);
    let data = load_cache(&cache)?;
    let grid = data.sidecar.grid.clone();

    let groups = window_storms(&data.storms, &grid, cfg.window, cfg.horizon, cfg.pad_len)
        .map_err(numeric_err)?;
    let split = split_by_storm(groups, cfg.split_ratio, cfg.split_seed).map_err(input_err)?;
    let normalizer = fit_normalizer(&split.train, &grid).map_err(numeric_err)?;
    let sets = normalize_split(&split, &normalizer);
    eprintln!(
        "training on {} windows from {} storms ({} test windows held out)",
        sets.train.len(),
        split.train.len(),
        sets.test.len()
    );

    ensure_out_dir(&cfg.out_dir)?;
    let mut log_file = fs::File::create(cfg.out_dir.join("train_log.jsonl"))
        .map_err(|e| input_err(format!("train_log.jsonl: {e}")))?;

    let checkpoint_path = cfg.out_dir.join("checkpoint.cgf");
    let make_checkpoint = |params, epochs, final_train_mse, train_samples| Checkpoint {
        config: cfg.model.clone(),
        params,
        normalizer: normalizer.clone(),
        grid: grid.clone(),
        meta: TrainingMeta {
            epochs,
            final_train_mse,
            train_seed: cfg.train.seed,
            split_seed: cfg.split_seed,
            train_samples,
        },
    };

    match train(&cfg.model, &sets.train, &cfg.train, Some(&mut log_file)) {
        Ok(output) => {
            let final_mse = *output.loss_curve.last().unwrap_or(&f64::NAN);
            let ckpt = make_checkpoint(
                output.params,
                cfg.train.epochs,
                final_mse,
                sets.train.len(),
            );
            save_checkpoint(&ckpt, &checkpoint_path).map_err(numeric_err)?;
            // record the fitted normalizer next to the cache
            let mut sidecar = data.sidecar;
            sidecar.normalizer = Some(normalizer.clone());
            let sidecar_file = dataset::sidecar_path(&cache);
            fs::write(
                &sidecar_file,
                serde_json::to_string_pretty(&sidecar).expect("json"),
            )
            .map_err(|e| input_err(format!("{}: {e}", sidecar_file.display())))?;
            println!(
                "{}",
                json!({
                    "checkpoint": checkpoint_path,
                    "epochs": cfg.train.epochs,
                    "final_train_mse": final_mse,
                    "train_windows": sets.train.len(),
                    "test_windows": sets.test.len(),
                })
            );
            Ok(())
        }
        Err(TrainError::Diverged {
            epoch,
            reason,
            last_good,
        }) => {
            let ckpt = make_checkpoint(*last_good, epoch, f64::NAN, sets.train.len());
            save_checkpoint(&ckpt, &checkpoint_path).map_err(numeric_err)?;
            Err(numeric_err(format!(
                "training diverged at epoch {epoch} ({reason}); last good checkpoint kept at {}",
                checkpoint_path.display()
            )))
        }
        Err(e) => Err(numeric_err(e)),
    }
}

/// Rebuild the exact train/test split a checkpoint was fitted against.
fn rebuild_split(
    cfg: &CliConfig,
    ckpt: &Checkpoint,
    storms: &[CachedStorm],
) -> Result<(dataset::StormSplit, dataset::SplitDataset), CliError> {
    let groups = window_storms(
        storms,
        &ckpt.grid,
        ckpt.config.seq_len,
        cfg.horizon,
        cfg.pad_len,
    )
    .map_err(numeric_err)?;
    let split = split_by_storm(groups, cfg.split_ratio, ckpt.meta.split_seed).map_err(input_err)?;
    let sets = normalize_split(&split, &ckpt.normalizer);
    Ok((split, sets))
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let ckpt = load_checkpoint(&args.checkpoint)
        .map_err(|e| input_err(format!("checkpoint {}: {e}", args.checkpoint.display())))?;
    let cache = cache_path(&cfg, &args.cache);
    let data = load_cache(&cache)?;

    let (split, sets) = rebuild_split(&cfg, &ckpt, &data.storms)?;
    let metrics = evaluate(
        &ckpt.params,
        &ckpt.config,
        &sets.test,
        &ckpt.normalizer,
        &ckpt.grid,
    )
    .map_err(numeric_err)?;
    let baseline_accuracy =
        forecast::persistence_accuracy(&split.test, &ckpt.grid).map_err(numeric_err)?;

    let report = json!({
        "mse": metrics.mse,
        "accuracy": metrics.accuracy,
        "accuracy_within_1": metrics.accuracy_within_1,
        "baseline_accuracy": baseline_accuracy,
        "test_windows": sets.test.len(),
    });
    ensure_out_dir(&cfg.out_dir)?;
    let pretty = serde_json::to_string_pretty(&report).expect("json");
    fs::write(cfg.out_dir.join("metrics.json"), &pretty)
        .map_err(|e| input_err(format!("metrics.json: {e}")))?;
    println!("{pretty}");
    Ok(())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(args.config.as_deref())?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let format = match args.format.as_str() {
        "geojson" => ExportFormat::GeoJson,
        "csv" => ExportFormat::Csv,
        other => return Err(input_err(format!("format must be geojson or csv, got {other:?}"))),
    };
    if args.steps == 0 {
        return Err(input_err("--steps must be at least 1"));
    }
    let ckpt = load_checkpoint(&args.checkpoint)
        .map_err(|e| input_err(format!("checkpoint {}: {e}", args.checkpoint.display())))?;
    let cache = cache_path(&cfg, &args.cache);
    let data = load_cache(&cache)?;

    let storm = data
        .storms
        .iter()
        .find(|s| s.storm_id == args.storm_id)
        .ok_or_else(|| {
            let mut ids: Vec<&str> = data.storms.iter().map(|s| s.storm_id.as_str()).collect();
            ids.sort_unstable();
            input_err(format!(
                "storm {} not in cache; available: {}",
                args.storm_id,
                ids.join(", ")
            ))
        })?;

    let trajectory = forecast::forecast_storm(&ckpt, storm, args.steps).map_err(|e| match e {
        // unusable storm or history is an input problem, not a numeric one
        forecast::ForecastError::StormTooShort { .. }
        | forecast::ForecastError::HistoryLength { .. } => input_err(e),
        other => numeric_err(other),
    })?;
    ensure_out_dir(&cfg.out_dir)?;
    let path = cfg
        .out_dir
        .join(format!("trajectory.{}", format.extension()));
    forecast::export_trajectory(&trajectory, format, &path)
        .map_err(|e| input_err(format!("{}: {e}", path.display())))?;
    println!(
        "{}",
        json!({
            "storm_id": trajectory.storm_id,
            "observed_points": trajectory.observed.len(),
            "forecast_steps": trajectory.forecast.len(),
            "file": path,
        })
    );
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), CliError> {
    if args.start_year > args.end_year {
        return Err(input_err("start year is after end year"));
    }
    let cfg = SynthConfig {
        start_year: args.start_year,
        end_year: args.end_year,
        seed: args.seed,
        storms_per_year: args.storms_per_year,
    };
    let text = generate_hurdat2(&cfg);
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)
                .map_err(|e| input_err(format!("{}: {e}", parent.display())))?;
        }
    }
    fs::write(&args.out, &text).map_err(|e| input_err(format!("{}: {e}", args.out.display())))?;
    println!(
        "{}",
        json!({
            "file": args.out,
            "years": [args.start_year, args.end_year],
            "bytes": text.len(),
        })
    );
    Ok(())
}

/// Parse arguments, dispatch, and map errors onto the exit-code contract.
pub fn run() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ingest(args) => cmd_ingest(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Predict(args) => cmd_predict(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_mirrors_pipeline_settings() {
        let cfg = CliConfig::default();
        assert_eq!(cfg.min_year, 1944);
        assert_eq!(cfg.max_year, 2022);
        assert_eq!(cfg.grid_resolution, 1.0);
        assert_eq!(cfg.window, 12);
        assert_eq!(cfg.horizon, 1);
        assert_eq!(cfg.pad_len, 100);
        assert_eq!(cfg.split_ratio, 0.85);
        assert_eq!(cfg.model.n_layers, 3);
        assert_eq!(cfg.model.head_hidden, 12);
        assert_eq!(cfg.train.epochs, 100);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = CliConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: CliConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn partial_config_files_fill_defaults() {
        let cfg: CliConfig = serde_json::from_str(r#"{"min_year": 1990}"#).unwrap();
        assert_eq!(cfg.min_year, 1990);
        assert_eq!(cfg.max_year, 2022);
    }
}
