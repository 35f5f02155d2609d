use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use msba_clip::dataset::{generate_synthetic_corpus, load_manifest, Corpus, Split, SyntheticConfig, MANIFEST_FILE};
use msba_clip::harness::{
    ablation_run, augment_preview, evaluate, export_intensity_maps, robustness_sweep, train, write_scores_csv,
    TrainConfig, Variant,
};
use msba_clip::model::load_checkpoint;
use msba_clip::{Error, Result};

const SNAPSHOT_FILE: &str = "run_config.json";

#[derive(Parser, Debug)]
#[command(name = "msba-clip", version, about = "Synthetic face-forgery corpus, training and evaluation")]
struct Cli {
    /// TrainConfig JSON; the toy preset when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "snake_case")]
enum Command {
    /// Generate a synthetic corpus and its manifest.
    Synth(SynthArgs),
    /// Train a detector; writes logs and the best checkpoint.
    Train(DataArgs),
    /// Score a split; writes the report and the per-frame score file.
    Eval(EvalArgs),
    /// Test-split AUC under each perturbation kind and level.
    Robustness(ModelArgs),
    /// Leave-one-method-out ablation.
    Ablate(AblateArgs),
    /// Write input, ground-truth and predicted intensity maps.
    ExportMaps(ExportArgs),
    /// Write example MSBA samples with their blended maps.
    AugmentPreview(PreviewArgs),
}

#[derive(Args, Debug, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 400)]
    groups: usize,
    /// Square image side in pixels.
    #[arg(long, default_value_t = 64)]
    size: usize,
}

#[derive(Args, Debug, Serialize)]
struct DataArgs {
    /// Corpus manifest, or a directory holding manifest.jsonl.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ModelArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value = "test")]
    split: String,
}

#[derive(Args, Debug, Serialize)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_delimiter = ',', default_value = "full,no_msba,no_mfie")]
    variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
    /// Methods to hold out; all when absent.
    #[arg(long, value_delimiter = ',')]
    held_out: Option<Vec<usize>>,
}

#[derive(Args, Debug, Serialize)]
struct ExportArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    ids: Vec<String>,
}

#[derive(Args, Debug, Serialize)]
struct PreviewArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 8)]
    count: usize,
}

#[derive(Serialize)]
struct Snapshot<'a> {
    command: &'a Command,
    seed: u64,
    train_config: &'a TrainConfig,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let config = match resolve_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let Some(out) = cli.out.clone() else {
        eprintln!("error: --out <DIR> is required");
        return ExitCode::from(1);
    };
    match run(&cli.command, &config, &out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<TrainConfig> {
    let mut config = match &cli.config {
        Some(p) if !p.is_file() => return Err(Error::invalid(format!("config file {} not found", p.display()))),
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::toy(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn load_corpus(path: &Path) -> Result<Corpus> {
    let path = if path.is_dir() { path.join(MANIFEST_FILE) } else { path.to_path_buf() };
    Corpus::load(&load_manifest(&path)?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn run(command: &Command, config: &TrainConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let snapshot = Snapshot { command, seed: config.seed, train_config: config };
    write_json(&out.join(SNAPSHOT_FILE), &snapshot)?;
    match command {
        Command::Synth(a) => {
            let mut sc = SyntheticConfig::new(a.groups, (a.size, a.size), config.seed);
            sc.patch_size = config.model.patch_size;
            let m = generate_synthetic_corpus(&sc, out)?;
            println!("{} records in {}", m.records.len(), out.join(MANIFEST_FILE).display());
        }
        Command::Train(a) => {
            let corpus = load_corpus(&a.manifest)?;
            let o = train(config, &corpus, Some(out))?;
            for h in &o.history {
                println!("epoch {:>3}  loss {:.5}  val auc {:.4}  val acc {:.4}", h.epoch, h.mean_loss, h.val_auc, h.val_acc);
            }
            println!("best epoch {} (val auc {:.4})", o.best_epoch, o.best_val_auc);
            if let Some(p) = &o.checkpoint {
                println!("checkpoint {}", p.display());
            }
        }
        Command::Eval(a) => {
            let split: Split = a.split.parse()?;
            let det = load_checkpoint(&a.model.checkpoint)?;
            let corpus = load_corpus(&a.model.data.manifest)?;
            let (report, scores) = evaluate(&det, &corpus, split)?;
            write_scores_csv(&scores, &out.join("scores.csv"))?;
            write_json(&out.join("report.json"), &report)?;
            println!(
                "{split}: frame acc {:.4} auc {:.4}  video acc {:.4} auc {:.4}",
                report.frame_acc, report.frame_auc, report.video_acc, report.video_auc
            );
        }
        Command::Robustness(a) => {
            let det = load_checkpoint(&a.checkpoint)?;
            let corpus = load_corpus(&a.data.manifest)?;
            let r = robustness_sweep(&det, &corpus, config.seed)?;
            r.write_csv(&out.join("robustness.csv"))?;
            println!("clean auc {:.4}, {} cells", r.clean_auc, r.cells.len());
        }
        Command::Ablate(a) => {
            let corpus = load_corpus(&a.data.manifest)?;
            let variants = a.variants.iter().map(|n| Variant::by_name(n, config)).collect::<Result<Vec<_>>>()?;
            let table = ablation_run(config, &variants, &corpus, &a.seeds, a.held_out.as_deref(), Some(out))?;
            for r in &table.rows {
                println!("{:<8} held-out {}  auc {:.4} ± {:.4}", r.variant, r.held_out, r.mean_auc, r.std_auc);
            }
        }
        Command::ExportMaps(a) => {
            let det = load_checkpoint(&a.model.checkpoint)?;
            let corpus = load_corpus(&a.model.data.manifest)?;
            let files = export_intensity_maps(&det, &corpus, &a.ids, out)?;
            println!("{} files", files.len());
        }
        Command::AugmentPreview(a) => {
            let corpus = load_corpus(&a.data.manifest)?;
            let n = augment_preview(&corpus, &config.msba, a.count, config.seed, out)?;
            println!("{n} samples");
        }
    }
    Ok(())
}
