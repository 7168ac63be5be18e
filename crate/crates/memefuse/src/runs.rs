//! Training and evaluation runs and the files they leave in `<out>/<run-id>/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use memefuse_core::checkpoint;
use memefuse_core::corpus::{MemeRecord, SplitCorpus};
use memefuse_core::metrics::{confusion_matrix, weighted_report, ComparisonRow, EvaluationReport};
use memefuse_core::models::{build_model, Approach, MemeClassifier, Model, ModelSpec, PaperConfig};
use memefuse_core::plan::TrainingPlan;
use memefuse_core::seed::Seeds;
use memefuse_core::text::{Vocabulary, DEFAULT_MIN_COUNT};
use memefuse_core::train::{self, EpochRecord, Example, Prediction};
use memefuse_core::Label;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, Resolved};
use crate::imageio::{self, DecodeFailure};
use crate::manifest::{load_manifest, ManifestError};
use crate::plot;
use crate::providers::ProviderSet;

pub const CONFIG_FILE: &str = "config.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const VOCAB_FILE: &str = "vocab.json";
pub const ARCH_FILE: &str = "arch.json";
pub const RUN_FILE: &str = "run.json";
pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.png";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("no checkpoint at {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("record {0}: {1}")]
    Decode(String, DecodeFailure),
    #[error(transparent)]
    Model(#[from] memefuse_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

impl RunError {
    /// 2 for bad input, 1 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Manifest(_)
            | RunError::Config(_)
            | RunError::Invalid(_)
            | RunError::MissingCheckpoint(_)
            | RunError::Format { .. } => 2,
            RunError::Decode(..) | RunError::Model(_) | RunError::Io { .. } => 1,
        }
    }
}

fn io<T>(path: &Path, r: std::io::Result<T>) -> Result<T, RunError> {
    r.map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn format_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    io(path, fs::write(path, text))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, RunError> {
    let text = io(path, fs::read_to_string(path))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

/// `config.json`: the experiment as given plus what it resolved to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub run_id: String,
    pub experiment: ExperimentConfig,
    pub spec: ModelSpec,
    pub plan: TrainingPlan,
    pub paper_config: Option<PaperConfig>,
}

/// `run.json`: outcome of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub checkpoint: String,
    pub wall_clock_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// `arch.json`: parameter inventory of the built model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSummary {
    pub trainable_params: usize,
    pub frozen_params: usize,
    pub params: Vec<ParamInfo>,
}

impl ArchSummary {
    pub fn of(model: &dyn Model) -> Self {
        let store = model.store();
        Self {
            trainable_params: store.trainable_count(),
            frozen_params: store.frozen_count(),
            params: store
                .iter()
                .map(|(_, p)| ParamInfo {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub config: RunConfig,
    pub summary: RunSummary,
    pub history: Vec<EpochRecord>,
    pub predictions: Vec<Prediction>,
}

fn needs_vocabulary(spec: &ModelSpec) -> bool {
    spec.approach() == Approach::Multimodal
}

fn examples(model: &dyn Model, records: &[MemeRecord], image_root: &Path) -> Result<Vec<Example>, RunError> {
    if model.input_kind().needs_image() {
        imageio::load_examples(records, image_root).map_err(|(id, e)| RunError::Decode(id, e))
    } else {
        Ok(imageio::text_examples(records))
    }
}

struct Prepared {
    corpus: SplitCorpus,
    vocab: Option<Vocabulary>,
    resolved: Resolved,
    model: MemeClassifier,
}

fn prepare(cfg: &ExperimentConfig, vocab: Option<Vocabulary>) -> Result<Prepared, RunError> {
    let corpus = load_manifest(&cfg.manifest, &cfg.image_root())?;
    let needs_vocab = cfg.approach == Approach::Multimodal;
    let vocab = match vocab {
        Some(v) => Some(v),
        None if needs_vocab => Some(Vocabulary::from_training(&corpus, DEFAULT_MIN_COUNT)),
        None => None,
    };
    let resolved = cfg.resolve(vocab.as_ref().map_or(0, Vocabulary::len))?;
    let providers = ProviderSet::new(cfg.offline, &cfg.checkpoints);
    let mut rng = Seeds::new(cfg.seed).init_rng();
    let model = build_model(&resolved.spec, providers.providers(), vocab.as_ref(), &mut rng)?;
    Ok(Prepared {
        corpus,
        vocab,
        resolved,
        model,
    })
}

pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), RunError> {
    let mut w = io(path, csv::Writer::from_path(path).map_err(std::io::Error::from))?;
    let rows = history.iter().map(|r| {
        [
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.train_acc.to_string(),
            r.val_loss.to_string(),
            r.val_acc.to_string(),
        ]
    });
    let result = (|| {
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    io(path, result.map_err(std::io::Error::from))
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), RunError> {
    let mut w = io(path, csv::Writer::from_path(path).map_err(std::io::Error::from))?;
    let result = (|| {
        w.write_record(["id", "probability", "predicted_label"])?;
        for p in predictions {
            w.write_record([p.id.as_str(), &p.probability.to_string(), p.label().as_str()])?;
        }
        w.flush()?;
        Ok::<_, csv::Error>(())
    })();
    io(path, result.map_err(std::io::Error::from))
}

/// Reads `id,probability[,predicted_label]`; the label column, if present, is ignored.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, RunError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    let headers = r.headers().map_err(|e| format_err(path, e))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format_err(path, format!("missing column `{name}`")))
    };
    let (id, prob) = (col("id")?, col("probability")?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| format_err(path, e))?;
        let p: f32 = rec[prob]
            .trim()
            .parse()
            .map_err(|_| format_err(path, format!("bad probability `{}`", &rec[prob])))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(format_err(path, format!("probability {p} outside [0, 1]")));
        }
        out.push(Prediction {
            id: rec[id].trim().to_string(),
            probability: p,
        });
    }
    Ok(out)
}

/// Trains the configured model and writes the run directory.
pub fn run_training(cfg: &ExperimentConfig) -> Result<TrainOutcome, RunError> {
    let started = Instant::now();
    let Prepared {
        corpus,
        vocab,
        resolved,
        mut model,
    } = prepare(cfg, None)?;
    for (name, split) in [("train", corpus.train()), ("valid", corpus.valid())] {
        if split.is_empty() {
            return Err(RunError::Invalid(format!("{name} split is empty")));
        }
    }
    let root = cfg.image_root();
    let train_set = examples(&model, corpus.train(), &root)?;
    let valid_set = examples(&model, corpus.valid(), &root)?;
    let test_set = examples(&model, corpus.test(), &root)?;
    let arch = ArchSummary::of(&model);

    let plan = resolved.plan;
    let record = train::train(&mut model, plan, &train_set, &valid_set)?;
    let predictions = train::predict(&model, &test_set, plan.batch)?;

    let run_id = cfg.run_id();
    let run_dir = cfg.run_dir();
    io(&run_dir, fs::create_dir_all(&run_dir))?;
    let config = RunConfig {
        run_id: run_id.clone(),
        experiment: cfg.clone(),
        spec: resolved.spec,
        plan,
        paper_config: resolved.paper_config,
    };
    write_json(&run_dir.join(CONFIG_FILE), &config)?;
    write_json(&run_dir.join(ARCH_FILE), &arch)?;
    if let Some(v) = &vocab {
        write_json(&run_dir.join(VOCAB_FILE), &v.tokens())?;
    }
    write_history(&run_dir.join(HISTORY_FILE), &record.history)?;
    let ckpt = run_dir.join(CHECKPOINT_FILE);
    io(&ckpt, fs::write(&ckpt, checkpoint::encode(&record.best)))?;
    write_predictions(&run_dir.join(PREDICTIONS_FILE), &predictions)?;
    let summary = RunSummary {
        run_id,
        epochs_run: record.history.len(),
        best_epoch: record.best_epoch,
        best_val_loss: record.best_val_loss,
        stopped_early: record.stopped_early,
        checkpoint: CHECKPOINT_FILE.into(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write_json(&run_dir.join(RUN_FILE), &summary)?;
    Ok(TrainOutcome {
        run_dir,
        config,
        summary,
        history: record.history,
        predictions,
    })
}

pub fn read_run_config(run_dir: &Path) -> Result<RunConfig, RunError> {
    read_json(&run_dir.join(CONFIG_FILE))
}

/// Rebuilds a run's model with its best checkpoint loaded.
pub fn load_run_model(run_dir: &Path, manifest: Option<&Path>) -> Result<(RunConfig, SplitCorpus, MemeClassifier), RunError> {
    let config = read_run_config(run_dir)?;
    let ckpt = run_dir.join(CHECKPOINT_FILE);
    if !ckpt.is_file() {
        return Err(RunError::MissingCheckpoint(ckpt));
    }
    let mut exp = config.experiment.clone();
    if let Some(m) = manifest {
        exp.manifest = m.to_path_buf();
    }
    let vocab = if needs_vocabulary(&config.spec) {
        let tokens: Vec<String> = read_json(&run_dir.join(VOCAB_FILE))?;
        Some(Vocabulary::from_tokens(tokens))
    } else {
        None
    };
    let mut prepared = prepare(&exp, vocab)?;
    if prepared.resolved.spec != config.spec {
        return Err(RunError::Invalid(format!(
            "{} no longer resolves to the architecture it was trained with",
            run_dir.display()
        )));
    }
    let bytes = io(&ckpt, fs::read(&ckpt))?;
    checkpoint::load_into(prepared.model.store_mut(), &bytes)?;
    Ok((config, prepared.corpus, prepared.model))
}

/// One row of `comparison.csv`; counts are `[actual][predicted]`, troll first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub run_id: String,
    pub approach: String,
    pub classifier: String,
    pub troll_troll: u64,
    pub troll_not_troll: u64,
    pub not_troll_troll: u64,
    pub not_troll_not_troll: u64,
}

impl ComparisonEntry {
    pub fn new(run_id: &str, config: &RunConfig, report: &EvaluationReport) -> Self {
        let [[tt, tn], [nt, nn]] = report.confusion.counts;
        Self {
            run_id: run_id.into(),
            approach: config.experiment.approach.as_str().into(),
            classifier: config
                .paper_config
                .map_or_else(|| config.experiment.model.clone(), |c| c.display_name().into()),
            troll_troll: tt,
            troll_not_troll: tn,
            not_troll_troll: nt,
            not_troll_not_troll: nn,
        }
    }

    pub fn row(&self) -> ComparisonRow {
        let cm = memefuse_core::metrics::ConfusionMatrix::from_counts([
            [self.troll_troll, self.troll_not_troll],
            [self.not_troll_troll, self.not_troll_not_troll],
        ]);
        ComparisonRow {
            approach: self.approach.clone(),
            classifier: self.classifier.clone(),
            report: weighted_report(&cm),
        }
    }
}

pub fn read_comparison(path: &Path) -> Result<Vec<ComparisonEntry>, RunError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| format_err(path, e))?;
    r.deserialize().map(|e| e.map_err(|e| format_err(path, e))).collect()
}

/// Replaces the row with the same run id, or appends.
pub fn upsert_comparison(path: &Path, entry: ComparisonEntry) -> Result<Vec<ComparisonEntry>, RunError> {
    let mut rows = read_comparison(path)?;
    match rows.iter_mut().find(|r| r.run_id == entry.run_id) {
        Some(r) => *r = entry,
        None => rows.push(entry),
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| format_err(path, e))?;
    for r in &rows {
        w.serialize(r).map_err(|e| format_err(path, e))?;
    }
    io(path, w.flush())?;
    Ok(rows)
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: EvaluationReport,
    pub comparison: PathBuf,
}

/// Scores predictions against the labeled test split and writes the report, plot and comparison row.
///
/// With `injected`, those predictions are scored instead of the checkpoint's.
pub fn run_eval(run_dir: &Path, manifest: Option<&Path>, injected: Option<&Path>) -> Result<EvalOutcome, RunError> {
    let (config, corpus, predictions) = match injected {
        Some(path) => {
            let config = read_run_config(run_dir)?;
            let m = manifest.map_or_else(|| config.experiment.manifest.clone(), Path::to_path_buf);
            let corpus = load_manifest(&m, &config.experiment.image_root())?;
            (config, corpus, read_predictions(path)?)
        }
        None => {
            let (config, corpus, model) = load_run_model(run_dir, manifest)?;
            let root = config.experiment.image_root();
            let test = examples(&model, corpus.test(), &root)?;
            let predictions = train::predict(&model, &test, config.plan.batch)?;
            (config, corpus, predictions)
        }
    };
    let labels: BTreeMap<&str, Option<Label>> =
        corpus.test().iter().map(|r| (r.id.as_str(), r.label)).collect();
    if predictions.len() != labels.len() {
        return Err(RunError::Invalid(format!(
            "{} predictions for {} test records",
            predictions.len(),
            labels.len()
        )));
    }
    let mut pairs = Vec::with_capacity(predictions.len());
    for p in &predictions {
        let actual = match labels.get(p.id.as_str()) {
            None => return Err(RunError::Invalid(format!("prediction for unknown test id `{}`", p.id))),
            Some(None) => return Err(RunError::Invalid(format!("test record `{}` has no label", p.id))),
            Some(Some(l)) => *l,
        };
        pairs.push((actual, p.label()));
    }
    let cm = confusion_matrix(&pairs).map_err(|_| RunError::Invalid("test split is empty".into()))?;
    let report = weighted_report(&cm);
    write_json(&run_dir.join(REPORT_FILE), &report)?;
    let png = run_dir.join(CONFUSION_FILE);
    plot::plot_confusion(&cm, &png).map_err(|e| RunError::Io {
        path: png.clone(),
        source: std::io::Error::other(e),
    })?;
    let comparison = run_dir.parent().unwrap_or(Path::new(".")).join(COMPARISON_FILE);
    upsert_comparison(&comparison, ComparisonEntry::new(&config.run_id, &config, &report))?;
    Ok(EvalOutcome { report, comparison })
}
