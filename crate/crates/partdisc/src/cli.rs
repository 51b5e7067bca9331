//! Command line: `synth`, `sim`, `train`, `infer`, `eval` and `align`.
//!
//! Every stage writes its artifacts under `--out-dir` together with a
//! `config.toml` echo of the effective configuration.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use partdisc_core::synth::{generate_dataset, SynthConfig};
use serde::Serialize;

use crate::error::{AppError, Result};
use crate::settings::RunConfig;
use crate::train::{cluster_init, similarity_matrix, train, with_threads, Dataset};
use crate::{checkpoint, evaluate, infer, inspect, simcache, synthio};

pub const CONFIG_ECHO: &str = "config.toml";
pub const INIT_CHECKPOINT: &str = "init.ckpt";
pub const CHECKPOINT: &str = "checkpoint.ckpt";
pub const TRAIN_LOG: &str = "train_log.json";
pub const DETECTIONS: &str = "detections.jsonl";
pub const METRICS: &str = "metrics.json";
pub const ALIGNMENTS: &str = "alignments.jsonl";

#[derive(Debug, Parser)]
#[command(name = "partdisc", version, about = "Unsupervised part discovery on serialized feature maps")]
pub struct Cli {
    /// TOML file with flat configuration keys.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, wins over --config.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Seed for every random choice of the stage.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores, 1 is fully deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted parts.
    Synth(SynthArgs),
    /// Cluster-initialize the part layer and cache the similarity matrix.
    Sim(DataArgs),
    /// Train the part layer.
    Train(TrainArgs),
    /// Detect parts with a trained layer.
    Infer(InferArgs),
    /// Score detections against the manifest annotations.
    Eval(EvalArgs),
    /// Inspect the alignments of the similar pools.
    Align(AlignArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    n_images: Option<usize>,
    #[arg(long)]
    n_parts: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    max_rotation_deg: Option<f64>,
    /// Largest shift along each axis, in cells.
    #[arg(long)]
    max_translation: Option<f64>,
    #[arg(long)]
    decoys: Option<usize>,
    /// Marker weight inside a decoy.
    #[arg(long)]
    decoy_marker: Option<f64>,
    /// Lower bound of the per-image part visibility.
    #[arg(long)]
    min_part_strength: Option<f64>,
    /// Side of the ground-truth part boxes, in pixels.
    #[arg(long)]
    box_side: Option<f64>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Directory written by `sim`; reused when present.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Starting checkpoint; defaults to the cached initialization.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// JSON-lines file written by `infer`.
    #[arg(long)]
    detections: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AlignArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Write every pair's transform and match counts.
    #[arg(long)]
    dump: bool,
}

/// Parses `args` (program name first) and runs the stage.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return Ok(());
        }
        Err(e) => {
            let msg = e.to_string();
            let msg = msg.strip_prefix("error: ").unwrap_or(&msg).trim_end();
            return Err(AppError::Usage(msg.to_string()));
        }
    };
    let mut cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(AppError::Usage("no subcommand given; see --help".into()));
    };
    with_threads(cli.threads, || dispatch(command, &cfg, cli.seed))?
}

fn dispatch(command: Command, cfg: &RunConfig, seed: Option<u64>) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a, seed),
        Command::Sim(a) => sim(a, cfg),
        Command::Train(a) => train_cmd(a, cfg),
        Command::Infer(a) => infer_cmd(a, cfg),
        Command::Eval(a) => eval_cmd(a, cfg),
        Command::Align(a) => align_cmd(a, cfg),
    }
}

fn prepare_out_dir(dir: &Path, cfg: Option<&RunConfig>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| AppError::io(dir, e))?;
    if let Some(cfg) = cfg {
        let path = dir.join(CONFIG_ECHO);
        fs::write(&path, cfg.to_toml()).map_err(|e| AppError::io(&path, e))?;
    }
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| AppError::Internal(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| AppError::io(path, e))
}

fn synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        n_images: a.n_images.unwrap_or(d.n_images),
        n_parts: a.n_parts.unwrap_or(d.n_parts),
        channels: a.channels.unwrap_or(d.channels),
        grid: a.grid.unwrap_or(d.grid),
        noise: a.noise.unwrap_or(d.noise),
        max_rotation_deg: a.max_rotation_deg.unwrap_or(d.max_rotation_deg),
        max_translation: a.max_translation.unwrap_or(d.max_translation),
        decoys: a.decoys.unwrap_or(d.decoys),
        decoy_marker: a.decoy_marker.unwrap_or(d.decoy_marker),
        min_part_strength: a.min_part_strength.unwrap_or(d.min_part_strength),
        box_side: a.box_side.unwrap_or(d.box_side),
        seed: seed.unwrap_or(d.seed),
        ..d
    };
    cfg.validate().map_err(|e| AppError::Usage(e.to_string()))?;
    prepare_out_dir(&a.out_dir, None)?;
    let ds = generate_dataset(&cfg)?;
    let path = synthio::write_dataset(&ds, &a.out_dir)?;
    eprintln!("wrote {} images to {}", ds.scenes.len(), path.display());
    Ok(())
}

fn sim(a: DataArgs, cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(&a.manifest)?;
    prepare_out_dir(&a.out_dir, Some(cfg))?;
    let layer = cluster_init(&data, &cfg.train)?;
    checkpoint::save(&a.out_dir.join(INIT_CHECKPOINT), &layer, 0, &cfg.train)?;
    let matrix = similarity_matrix(&data, &layer, cfg.train.common_size)?;
    simcache::save(&a.out_dir, &matrix)?;
    eprintln!(
        "{} part channels, similarity over {} images written to {}",
        layer.c_out(),
        matrix.len(),
        a.out_dir.display()
    );
    Ok(())
}

/// Starting layer and cached matrix for `train` and `align`.
fn starting_point(
    data: &Dataset,
    cfg: &RunConfig,
    cache_dir: Option<&Path>,
    ckpt: Option<&Path>,
) -> Result<(partdisc_core::part_layer::PartLayer, Option<partdisc_core::similarity::SimilarityMatrix>)> {
    let cached_init = cache_dir.map(|d| d.join(INIT_CHECKPOINT)).filter(|p| p.is_file());
    let layer = match ckpt.map(Path::to_path_buf).or(cached_init) {
        Some(p) => checkpoint::load(&p)?.0,
        None => cluster_init(data, &cfg.train)?,
    };
    let matrix = match cache_dir.filter(|d| simcache::exists(d)) {
        Some(d) => Some(simcache::load(d)?),
        None => None,
    };
    Ok((layer, matrix))
}

fn train_cmd(a: TrainArgs, cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(&a.manifest)?;
    prepare_out_dir(&a.out_dir, Some(cfg))?;
    let (layer, matrix) = starting_point(&data, cfg, a.cache_dir.as_deref(), a.checkpoint.as_deref())?;
    let outcome = train(&data, layer, matrix, &cfg.train, |log, _| {
        eprintln!(
            "epoch {}: loss {:.6} lr {:.2e} fallback {:.3} inliers {:.1}",
            log.epoch, log.mean_loss, log.learning_rate, log.fallback_rate, log.mean_inliers
        );
        Ok(())
    })?;
    checkpoint::save(&a.out_dir.join(CHECKPOINT), &outcome.layer, cfg.train.epochs, &cfg.train)?;
    write_json(&a.out_dir.join(TRAIN_LOG), &outcome.log)
}

fn infer_cmd(a: InferArgs, cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(&a.manifest)?;
    let (layer, _) = checkpoint::load(&a.checkpoint)?;
    if layer.c_in() != data.channels() {
        return Err(AppError::Usage(format!(
            "checkpoint expects {} backbone channels, data has {}",
            layer.c_in(),
            data.channels()
        )));
    }
    prepare_out_dir(&a.out_dir, Some(cfg))?;
    let records = infer::detect_dataset(&data, &layer, &cfg.infer)?;
    infer::write_jsonl(&a.out_dir.join(DETECTIONS), &records)?;
    eprintln!("{} detections over {} images", records.len(), data.maps.len());
    Ok(())
}

fn eval_cmd(a: EvalArgs, cfg: &RunConfig) -> Result<()> {
    let manifest = crate::manifest::Manifest::load(&a.manifest)?;
    let records = infer::read_jsonl(&a.detections)?;
    prepare_out_dir(&a.out_dir, Some(cfg))?;
    let report = evaluate::evaluate(&manifest, &records, &cfg.eval)?;
    write_json(&a.out_dir.join(METRICS), &report)?;
    let show = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    eprintln!(
        "mAP@IoU{}: {}  mAP@L2-{}: {}  landmark error: {}",
        cfg.eval.iou_threshold,
        show(report.map_iou),
        cfg.eval.l2_threshold,
        show(report.map_l2),
        show(report.landmarks.mean_error)
    );
    Ok(())
}

fn align_cmd(a: AlignArgs, cfg: &RunConfig) -> Result<()> {
    let data = Dataset::load(&a.manifest)?;
    prepare_out_dir(&a.out_dir, Some(cfg))?;
    let (layer, matrix) = starting_point(&data, cfg, a.cache_dir.as_deref(), a.checkpoint.as_deref())?;
    let matrix = match matrix {
        Some(m) => m,
        None => similarity_matrix(&data, &layer, cfg.train.common_size)?,
    };
    let records = inspect::pool_alignments(&data, &layer, &matrix, &cfg.train)?;
    let fallbacks = records.iter().filter(|r| r.fallback).count();
    eprintln!("{} pairs aligned, {} fell back to stretching", records.len(), fallbacks);
    if a.dump {
        inspect::write_jsonl(&a.out_dir.join(ALIGNMENTS), &records)?;
    }
    Ok(())
}
