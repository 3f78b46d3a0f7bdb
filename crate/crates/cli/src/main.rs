//! Command-line entry point for the full pipeline: dataset building, encoder
//! pretraining, adversarial training, evaluation, ablation sweeps, and
//! figure emitters.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use storyviz::config::{DatasetConfig, TrainConfig};
use storyviz::data::{build_dataset, load_manifest, SplitName};
use storyviz::metrics::ExtractorConfig;
use storyviz::pipeline::{
    evaluate_checkpoint, load_run, pretrain_and_save, run_ablation, text_dims_for,
};
use storyviz::text::PretrainConfig;
use storyviz::train::train;
use storyviz::viz::{emit_heatmap, emit_story_grid};

#[derive(Parser)]
#[command(
    name = "storyviz",
    about = "Word-level story visualization: synthetic dataset, GAN training, evaluation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic shape-story dataset.
    GenData(GenDataArgs),
    /// Pretrain the contrastive text/image encoders and the metric extractor.
    PretrainEncoder(PretrainArgs),
    /// Train the generator and discriminators.
    Train(TrainArgs),
    /// Evaluate a checkpoint: FID, FSD, cosine alignment, keyword consistency.
    Eval(EvalArgs),
    /// Run the ablation grid (5 configurations x seeds) and emit a table.
    Ablate(AblateArgs),
    /// Emit the attention heatmap and sigma table for one story.
    Heatmap(HeatmapArgs),
    /// Emit a generated-vs-real story grid image.
    StoryGrid(StoryGridArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// JSON file with the dataset configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the reduced CPU-scale profile instead of the defaults.
    #[arg(long)]
    small: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Replace an existing non-empty output directory.
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct PretrainArgs {
    /// Dataset directory produced by gen-data.
    #[arg(long)]
    data: PathBuf,
    /// JSON file: {"pretrain": {...}, "extractor": {...}, "model": {...}}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the encoder/extractor checkpoints
    /// (defaults to the dataset directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use the reduced CPU-scale model dimensions.
    #[arg(long)]
    small: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON file with the full training configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for checkpoints and the metrics log.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint path stem (without .json/.bin).
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Where to write the metric report JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Dataset directory with pretrained encoder/extractor checkpoints.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for all runs and the comparison table.
    #[arg(long)]
    out: PathBuf,
    /// Ablation grid name.
    #[arg(long, default_value = "default")]
    grid: String,
    /// Comma-separated seeds.
    #[arg(long, default_value = "0,1,2")]
    seeds: String,
    /// Use the reduced CPU-scale training profile.
    #[arg(long)]
    small: bool,
    #[arg(long, default_value = "test")]
    split: String,
    /// Base training config JSON (optional; profile defaults otherwise).
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct HeatmapArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    story_id: u64,
    #[arg(long, default_value = "test")]
    split: String,
    /// Keyword for the sigma table (defaults to the story's style word).
    #[arg(long)]
    keyword: Option<String>,
    /// Output PNG path (a JSON sidecar is written next to it).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StoryGridArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    story_id: u64,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
struct PretrainFileConfig {
    pretrain: Option<PretrainConfig>,
    extractor: Option<ExtractorConfig>,
    model: Option<storyviz::config::ModelConfig>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> anyhow::Result<T> {
    let body = fs::read(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(serde_json::from_slice(&body)?)
}

fn parse_split(s: &str) -> anyhow::Result<SplitName> {
    Ok(s.parse::<SplitName>()?)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::GenData(args) => {
            let mut cfg = match (&args.config, args.small) {
                (Some(path), _) => read_json::<DatasetConfig>(path)?,
                (None, true) => DatasetConfig::small(0),
                (None, false) => DatasetConfig::default(),
            };
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let manifest = build_dataset(&cfg, &args.out, args.overwrite)?;
            println!(
                "dataset written to {} ({} train / {} val / {} test stories, digest {:016x})",
                args.out.display(),
                manifest.train_ids.len(),
                manifest.val_ids.len(),
                manifest.test_ids.len(),
                manifest.digest()
            );
        }
        Command::PretrainEncoder(args) => {
            let file_cfg: PretrainFileConfig = match &args.config {
                Some(path) => read_json(path)?,
                None => PretrainFileConfig::default(),
            };
            let manifest = load_manifest(&args.data)?;
            let model = file_cfg.model.unwrap_or_else(|| {
                if args.small {
                    storyviz::config::ModelConfig::small()
                } else {
                    storyviz::config::ModelConfig::for_image_size(manifest.image_size)
                }
            });
            let mut pretrain_cfg = file_cfg.pretrain.unwrap_or_default();
            let mut extractor_cfg = file_cfg.extractor.unwrap_or_default();
            if let Some(seed) = args.seed {
                pretrain_cfg.seed = seed;
                extractor_cfg.seed = seed;
            }
            let out = args.out.clone().unwrap_or_else(|| args.data.clone());
            fs::create_dir_all(&out)?;
            let dims = text_dims_for(&args.data, &model)?;
            let (report, gate) = pretrain_and_save(
                &args.data,
                &dims,
                &pretrain_cfg,
                &extractor_cfg,
                &out.join("encoders"),
                &out.join("extractor"),
            )?;
            println!(
                "encoders saved: retrieval top-1 {:.3}, matched-vs-mismatched {:.3}; extractor gate accuracy {:.4}",
                report.val_retrieval_top1, report.matched_beats_mismatched, gate
            );
        }
        Command::Train(args) => {
            let mut cfg: TrainConfig = read_json(&args.config)?;
            if let Some(seed) = args.seed {
                cfg.seed = seed;
            }
            let report = train(&cfg, &args.out)?;
            println!(
                "training done: {} steps, best step {} (val FID {:.3}, FSD {:.3}); checkpoints in {}",
                report.steps,
                report.best_step,
                report.best_val_fid,
                report.best_val_fsd,
                args.out.display()
            );
        }
        Command::Eval(args) => {
            let split = parse_split(&args.split)?;
            let report = evaluate_checkpoint(&args.checkpoint, split, args.out.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate(args) => {
            if args.grid != "default" {
                anyhow::bail!("unknown ablation grid `{}` (only `default` exists)", args.grid);
            }
            let seeds: Vec<u64> = args
                .seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|e| anyhow::anyhow!("bad --seeds: {e}"))?;
            let split = parse_split(&args.split)?;
            let base = match (&args.config, args.small) {
                (Some(path), _) => read_json::<TrainConfig>(path)?,
                (None, true) => TrainConfig::small_profile(args.data.clone()),
                (None, false) => {
                    let manifest = load_manifest(&args.data)?;
                    TrainConfig::defaults(args.data.clone(), manifest.image_size)
                }
            };
            let table = run_ablation(&base, &seeds, &args.out, split)?;
            println!("{}", table.to_markdown());
            println!(
                "full table written to {}",
                args.out.join("ablation_table.json").display()
            );
        }
        Command::Heatmap(args) => {
            let run = load_run(&args.checkpoint)?;
            let split = parse_split(&args.split)?;
            let sidecar =
                emit_heatmap(&run, split, args.story_id, args.keyword.as_deref(), &args.out)?;
            println!(
                "heatmap for story {} written to {} ({} words x {} regions, sigma keyword `{}`)",
                args.story_id,
                args.out.display(),
                sidecar.words.len(),
                sidecar.n_regions,
                sidecar.sigma.keyword
            );
        }
        Command::StoryGrid(args) => {
            let run = load_run(&args.checkpoint)?;
            let split = parse_split(&args.split)?;
            emit_story_grid(&run, split, args.story_id, &args.out)?;
            println!("story grid written to {}", args.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match Cli::try_parse() {
        Ok(cli) => match run(cli) {
            Ok(()) => ExitCode::SUCCESS,
            Err(err) => {
                eprintln!("error: {err:#}");
                ExitCode::from(2)
            }
        },
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            ExitCode::from(code)
        }
    }
}
