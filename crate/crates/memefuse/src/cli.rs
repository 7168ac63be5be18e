//! Command-line interface: `stats`, `synth`, `train`, `eval`, `compare`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use memefuse_core::corpus::class_distribution;
use memefuse_core::models::{Approach, PaperConfig};
use memefuse_core::stats::compute_caption_stats;
use memefuse_core::Label;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::manifest::load_manifest;
use crate::runs::{self, RunError, COMPARISON_FILE};
use crate::synth::generate_synthetic_corpus;

fn configurations_help() -> String {
    let mut s = String::from("Configurations (--approach / --model):\n");
    for c in PaperConfig::ALL {
        let _ = writeln!(s, "  {:<11} {:<18} {}", c.approach().as_str(), c.key(), c.display_name());
    }
    s.push_str("\nExit codes: 0 success, 1 runtime failure, 2 invalid input.");
    s
}

#[derive(Debug, Parser)]
#[command(name = "memefuse", version, about = "Troll-meme classification experiments: visual, textual and fused.")]
#[command(after_help = configurations_help())]
pub struct Cli {
    /// Experiment config JSON; command-line flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use stand-in backbones and transformers (the default).
    #[arg(long, global = true, conflicts_with = "online")]
    pub offline: bool,
    /// Load pretrained weights from the cache ($MEMEFUSE_CACHE).
    #[arg(long, global = true)]
    pub online: bool,
    /// Output directory: runs for `train`, the corpus for `synth`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Caption statistics of the training split and class counts per split.
    Stats(StatsArgs),
    /// Write a synthetic corpus.
    Synth(SynthArgs),
    /// Train a model and write `<out>/<run-id>/`.
    Train(TrainArgs),
    /// Score a run on the test split.
    Eval(EvalArgs),
    /// Print the cross-run comparison table.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Defaults to the manifest's directory.
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 8)]
    pub n_per_class: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    #[arg(long)]
    pub approach: Option<Approach>,
    /// Configuration key or name, e.g. `inception-bilstm` or "Inception + BiLSTM".
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    /// Early-stopping patience; 0 disables it.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub allow_nonpaper: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub run_dir: PathBuf,
    /// Manifest to score against; defaults to the one the run trained on.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Score this `id,probability` CSV instead of the checkpoint's predictions.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Print CSV instead of the aligned table.
    #[arg(long)]
    pub csv: bool,
}

/// A failure with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn experiment(cli: &Cli, args: &TrainArgs) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<ExperimentConfig>(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?
        }
        None => {
            let missing: Vec<&str> = [
                ("--manifest", args.manifest.is_none()),
                ("--approach", args.approach.is_none()),
                ("--model", args.model.is_none()),
            ]
            .into_iter()
            .filter_map(|(f, m)| m.then_some(f))
            .collect();
            if !missing.is_empty() {
                return Err(Failure::usage(format!("train needs {} (or --config)", missing.join(", "))));
            }
            ExperimentConfig::new(PathBuf::new(), Approach::Visual, String::new())
        }
    };
    if let Some(m) = &args.manifest {
        cfg.manifest = m.clone();
    }
    if let Some(r) = &args.image_root {
        cfg.image_root = Some(r.clone());
    }
    if let Some(a) = args.approach {
        cfg.approach = a;
    }
    if let Some(m) = &args.model {
        cfg.model = m.clone();
    }
    cfg.plan.epochs = args.epochs.or(cfg.plan.epochs);
    cfg.plan.batch = args.batch.or(cfg.plan.batch);
    cfg.plan.lr = args.lr.or(cfg.plan.lr);
    cfg.plan.patience = args.patience.or(cfg.plan.patience);
    cfg.allow_nonpaper |= args.allow_nonpaper;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if cli.online {
        cfg.offline = false;
    } else if cli.offline {
        cfg.offline = true;
    }
    // normalize display names so equal experiments share a run id
    if let Ok(p) = cfg.model.parse::<PaperConfig>() {
        cfg.model = p.key().into();
    }
    Ok(cfg)
}

fn stats(args: &StatsArgs) -> Result<(), Failure> {
    let root = args
        .image_root
        .clone()
        .unwrap_or_else(|| args.manifest.parent().unwrap_or(Path::new(".")).to_path_buf());
    let corpus = load_manifest(&args.manifest, &root).map_err(RunError::from)?;
    let caption = compute_caption_stats(corpus.train()).map_err(|e| Failure::usage(e.to_string()))?;
    let dist = class_distribution(&corpus);
    if args.json {
        let doc = json!({ "caption_stats": caption, "class_distribution": dist });
        println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
        return Ok(());
    }
    println!("{:<22} {:>10} {:>10}", "training captions", "troll", "not-troll");
    let row = |name: &str, f: &dyn Fn(Label) -> String| {
        println!("{name:<22} {:>10} {:>10}", f(Label::Troll), f(Label::NotTroll));
    };
    row("total words", &|l| caption.get(l).total_words.to_string());
    row("unique words", &|l| caption.get(l).unique_words.to_string());
    row("max caption length", &|l| caption.get(l).max_caption_len.to_string());
    row("avg words/caption", &|l| format!("{:.2}", caption.get(l).avg_words_per_caption));
    println!();
    println!("{:<22} {:>10} {:>10}", "records", "troll", "not-troll");
    for split in memefuse_core::corpus::Split::ALL {
        let c = dist.get(split);
        println!("{:<22} {:>10} {:>10}", split.as_str(), c.troll, c.not_troll);
    }
    Ok(())
}

fn compare(out: &Path, csv: bool) -> Result<(), Failure> {
    let path = out.join(COMPARISON_FILE);
    if !path.is_file() {
        return Err(Failure::usage(format!("{} does not exist; run `eval` first", path.display())));
    }
    let rows: Vec<_> = runs::read_comparison(&path)?.iter().map(runs::ComparisonEntry::row).collect();
    let table = memefuse_core::metrics::render_comparison(&rows);
    print!("{}", if csv { &table.csv } else { &table.text });
    Ok(())
}

pub fn execute(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Stats(args) => stats(args),
        Command::Synth(args) => {
            if args.n_per_class == 0 {
                return Err(Failure::usage("--n-per-class must be at least 1"));
            }
            let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("synthetic"));
            let s = generate_synthetic_corpus(args.n_per_class, cli.seed.unwrap_or(0), &out).map_err(|e| Failure {
                code: 1,
                message: format!("{e:#}"),
            })?;
            println!("{}", s.manifest.display());
            Ok(())
        }
        Command::Train(args) => {
            let cfg = experiment(cli, args)?;
            let outcome = runs::run_training(&cfg)?;
            let s = &outcome.summary;
            eprintln!(
                "{} epochs, best epoch {} (val loss {:.4}){}",
                s.epochs_run,
                s.best_epoch,
                s.best_val_loss,
                if s.stopped_early { ", stopped early" } else { "" }
            );
            println!("{}", outcome.run_dir.display());
            Ok(())
        }
        Command::Eval(args) => {
            let outcome = runs::run_eval(&args.run_dir, args.manifest.as_deref(), args.predictions.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&outcome.report).expect("serializable"));
            Ok(())
        }
        Command::Compare(args) => compare(cli.out.as_deref().unwrap_or(Path::new("runs")), args.csv),
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn help_lists_configuration_names() {
        let help = Cli::command().render_long_help().to_string();
        for c in PaperConfig::ALL {
            assert!(help.contains(c.display_name()), "{}", c.display_name());
        }
    }

    #[test]
    fn flags_override_config_and_names_normalize() {
        let cli = Cli::parse_from([
            "memefuse", "train", "--manifest", "m.csv", "--approach", "multimodal", "--model",
            "Inception + BiLSTM", "--epochs", "2", "--seed", "4", "--online",
        ]);
        let Command::Train(args) = &cli.command else { panic!() };
        let cfg = experiment(&cli, args).unwrap();
        assert_eq!(cfg.model, "inception-bilstm");
        assert_eq!((cfg.seed, cfg.plan.epochs, cfg.offline), (4, Some(2), false));
    }

    #[test]
    fn train_without_inputs_is_a_usage_error() {
        let cli = Cli::parse_from(["memefuse", "train", "--model", "cnn"]);
        let Command::Train(args) = &cli.command else { panic!() };
        assert_eq!(experiment(&cli, args).unwrap_err().code, 2);
    }
}
