//! Command-line front end: `synth`, `prepare`, `train`, `eval`, `predict`.
//!
//! Each command resolves a [`RunConfig`] (defaults, then `--config`, then
//! `--set key=value`, then dedicated flags such as `--seed`), echoes it to
//! `resolved_config.txt` in its output directory, and writes nothing outside
//! that directory. Exit codes: 0 success, 2 usage, 3 data, 4 divergence.

pub mod prepared;

use crate::config::RunConfig;
use crate::evaluator::{self, ReportFiles};
use crate::signal_io::{
    self, encode_raw_f64le, load_signal, split_dataset, FaultLabel, LoadOptions, Manifest, ManifestEntry,
    Segment, SignalFormat,
};
use crate::stft::{encode_tfimage, segment_to_image, TFImage};
use crate::synth::{default_suite, generate_class_signals};
use crate::trainer::{self, decode_training_checkpoint, encode_training_checkpoint, TrainError, TrainHistory};
use crate::vit::{self, encode_checkpoint, softmax_rows, ViTModel};
use clap::{Args, Parser, Subcommand};
use prepared::{load_prepared, IndexEntry, SplitIndex, SPLIT_FILE, SPLIT_NAMES};
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

pub const RESOLVED_CONFIG: &str = "resolved_config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const HISTORY_FILE: &str = "history.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
const CONFUSION_PGM_SCALE: usize = 16;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DivergedLoss { .. } => CliError::Diverged(e.to_string()),
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

fn data<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Data(format!("{context}: {e}"))
}

#[derive(Debug, Parser)]
#[command(name = "bearing-vit", version, about = "Bearing fault classification from vibration spectrograms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled dataset and its manifest.
    Synth(SynthArgs),
    /// Segment recordings, build spectrogram images and split them.
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a prepared dataset.
    Eval(EvalArgs),
    /// Classify every segment of one recording.
    Predict(PredictArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// Config file of `section.key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `synth.classes` (2 to 4).
    #[arg(long)]
    pub classes: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    /// Directory written by `prepare`.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `train.epochs`.
    #[arg(long)]
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// One of train, val, test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub cfg: ConfigArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub signal: PathBuf,
    /// mat, csv or raw; inferred from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
    /// Optional directory for `predictions.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn resolve_config(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => RunConfig::default(),
    };
    for s in &args.set {
        cfg.apply_override(s).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(data(dir.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    std::fs::write(path, bytes).map_err(data(path.display()))
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub manifest: PathBuf,
    pub labels: Vec<FaultLabel>,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SynthOutcome, CliError> {
    let mut cfg = resolve_config(&args.cfg)?;
    if let Some(c) = args.classes {
        cfg.synth.classes = c;
    }
    let suite = default_suite();
    if !(2..=suite.len()).contains(&cfg.synth.classes) {
        return Err(CliError::Usage(format!(
            "synth.classes must lie in 2..={}, got {}",
            suite.len(),
            cfg.synth.classes
        )));
    }
    let specs = &suite[..cfg.synth.classes];
    let signals = generate_class_signals(
        specs,
        cfg.synth.segments_per_class,
        cfg.signal.segment_len,
        cfg.signal.sample_rate,
        cfg.seed,
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&args.out)?;
    let mut manifest = Manifest::default();
    for (label, sig) in &signals {
        let rel = format!("signals/{label}.f64");
        write_file(&args.out.join(&rel), &encode_raw_f64le(&sig.samples))?;
        manifest.entries.push(ManifestEntry {
            path: rel,
            label: *label,
            channel: cfg.signal.channel,
            sample_rate: cfg.signal.sample_rate,
            var_hint: None,
            format: SignalFormat::RawF64LE,
        });
    }
    let manifest_path = args.out.join(MANIFEST_FILE);
    write_file(&manifest_path, manifest.to_text().as_bytes())?;
    write_file(&args.out.join(RESOLVED_CONFIG), cfg.to_text().as_bytes())?;
    Ok(SynthOutcome {
        manifest: manifest_path,
        labels: manifest.labels(),
    })
}

#[derive(Debug, Clone)]
pub struct PrepareOutcome {
    pub index: SplitIndex,
    /// Segments per manifest entry, in manifest order.
    pub segments_per_entry: Vec<usize>,
}

/// Everything is computed in memory first, so a failure leaves no partial
/// output behind.
pub fn cmd_prepare(args: &PrepareArgs) -> Result<PrepareOutcome, CliError> {
    let cfg = resolve_config(&args.cfg)?;
    cfg.image.stft.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if cfg.signal.segment_len == 0 || cfg.signal.stride == 0 {
        return Err(CliError::Usage("signal.segment_len and signal.stride must be >= 1".into()));
    }
    let manifest = Manifest::load(&args.manifest).map_err(|e| CliError::Data(e.to_string()))?;
    if manifest.entries.is_empty() {
        return Err(CliError::Data(format!("{}: manifest lists no recordings", args.manifest.display())));
    }
    let mut segments: Vec<Segment> = Vec::new();
    let mut entry_of: HashMap<String, (usize, f64)> = HashMap::new();
    let mut segments_per_entry = Vec::new();
    for (i, entry) in manifest.entries.iter().enumerate() {
        if entry.path.contains('\t') {
            return Err(CliError::Data(format!("manifest path {:?} contains a tab", entry.path)));
        }
        let path = manifest.resolve(entry);
        let opts = LoadOptions {
            sample_rate: entry.sample_rate,
            channel: entry.channel,
            var_hint: entry.var_hint.clone(),
        };
        let mut sig = load_signal(&path, entry.format, &opts).map_err(data(path.display()))?;
        sig.source_id = entry.path.clone();
        let segs = signal_io::segment_signal(&sig, entry.label, cfg.signal.segment_len, cfg.signal.stride);
        if segs.is_empty() {
            return Err(CliError::Data(format!(
                "{}: {} samples is shorter than one {}-sample segment",
                path.display(),
                sig.len(),
                cfg.signal.segment_len
            )));
        }
        segments_per_entry.push(segs.len());
        entry_of.insert(entry.path.clone(), (i, entry.sample_rate));
        segments.extend(segs);
    }
    let split = split_dataset(segments, cfg.split, cfg.seed).map_err(|e| CliError::Data(e.to_string()))?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    let mut entries = Vec::new();
    let mut dims = None;
    for (name, segs) in split.parts() {
        for s in segs {
            let (idx, rate) = entry_of[&s.origin.source_id];
            let img = segment_to_image(&s.samples, rate, &cfg.image)
                .map_err(data(format!("{} @ {}", s.origin.source_id, s.origin.start)))?;
            dims.get_or_insert(img.dims());
            let rel = format!("images/{}/s{idx:03}_{:09}.tfi", s.label, s.origin.start);
            files.push((rel.clone(), encode_tfimage(&img)));
            entries.push(IndexEntry {
                split: name.to_string(),
                label: s.label,
                source: s.origin.source_id.clone(),
                start: s.origin.start,
                image: rel,
            });
        }
    }
    let index = SplitIndex {
        dims: dims.expect("split is non-empty"),
        entries,
    };
    create_dir(&args.out)?;
    for (rel, bytes) in &files {
        write_file(&args.out.join(rel), bytes)?;
    }
    write_file(&args.out.join(SPLIT_FILE), index.to_text().as_bytes())?;
    write_file(&args.out.join(RESOLVED_CONFIG), cfg.to_text().as_bytes())?;
    Ok(PrepareOutcome { index, segments_per_entry })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub history: TrainHistory,
    pub final_checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub best_epoch: Option<usize>,
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainSummary, CliError> {
    let mut cfg = resolve_config(&args.cfg)?;
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    let tcfg = cfg.train_config();
    tcfg.validate().map_err(CliError::from)?;
    let prepared = load_prepared(&args.data).map_err(CliError::Data)?;
    let vcfg = cfg.vit_config(prepared.index.dims);
    vcfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = ViTModel::new(vcfg).map_err(|e| CliError::Usage(e.to_string()))?;
    let initial = model.clone();
    create_dir(&args.out)?;
    write_file(&args.out.join(RESOLVED_CONFIG), cfg.to_text().as_bytes())?;
    let outcome = trainer::train(model, &prepared.train, &prepared.val, &tcfg, Some(&args.out))?;
    let final_checkpoint = args.out.join(FINAL_CHECKPOINT);
    write_file(&final_checkpoint, &encode_training_checkpoint(&outcome.model, &outcome.adam))?;
    let best_model = outcome.best.as_ref().map_or(&initial, |(_, m)| m);
    let best_checkpoint = args.out.join(BEST_CHECKPOINT);
    write_file(&best_checkpoint, &encode_checkpoint(&best_model.config, &best_model.params))?;
    write_file(&args.out.join(HISTORY_FILE), outcome.history.to_csv().as_bytes())?;
    Ok(TrainSummary {
        history: outcome.history,
        final_checkpoint,
        best_checkpoint,
        best_epoch: outcome.best.map(|(e, _)| e),
    })
}

pub fn load_model(path: &Path) -> Result<ViTModel, CliError> {
    let bytes = std::fs::read(path).map_err(data(path.display()))?;
    let (model, _) = decode_training_checkpoint(&bytes).map_err(data(path.display()))?;
    Ok(model)
}

#[derive(Debug, Clone)]
pub struct EvalOutcome {
    pub accuracy: f64,
    pub confusion: evaluator::ConfusionMatrix,
    pub files: ReportFiles,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome, CliError> {
    let cfg = resolve_config(&args.cfg)?;
    if !SPLIT_NAMES.contains(&args.split.as_str()) {
        return Err(CliError::Usage(format!("unknown split '{}'", args.split)));
    }
    let model = load_model(&args.checkpoint)?;
    let prepared = load_prepared(&args.data).map_err(CliError::Data)?;
    if prepared.index.dims != model.config.image_dims() {
        return Err(CliError::Data(
            vit::VitError::ConfigMismatch {
                expected: model.config.image_dims(),
                got: prepared.index.dims,
            }
            .to_string(),
        ));
    }
    let set = prepared.split(&args.split).expect("validated split name");
    let result = trainer::evaluate_epoch(&model, set)?;
    let cm = evaluator::confusion(&result.predictions, &set.labels, model.config.num_classes)
        .map_err(|e| CliError::Data(e.to_string()))?;
    let history_path = args.checkpoint.with_file_name(HISTORY_FILE);
    let history = match std::fs::read_to_string(&history_path) {
        Ok(text) => Some(TrainHistory::from_csv(&text).map_err(data(history_path.display()))?),
        Err(_) => None,
    };
    create_dir(&args.out)?;
    write_file(&args.out.join(RESOLVED_CONFIG), cfg.to_text().as_bytes())?;
    let files = evaluator::export_report(
        &cm,
        history.as_ref(),
        result.accuracy,
        &model.config.to_text(),
        &args.out,
        CONFUSION_PGM_SCALE,
    )
    .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(EvalOutcome {
        accuracy: result.accuracy,
        confusion: cm,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPrediction {
    pub index: usize,
    pub class_id: usize,
    pub confidence: f64,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictOutcome {
    pub segments: Vec<SegmentPrediction>,
    /// Most frequent class; ties go to the lowest class id.
    pub vote: usize,
    pub vote_count: usize,
}

pub fn class_name(id: usize) -> String {
    FaultLabel::from_id(id).map_or_else(|| format!("c{id}"), |l| l.name().to_string())
}

impl PredictOutcome {
    /// `segment_index,label,confidence` lines followed by
    /// `vote,<label>,<fraction of segments>`.
    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for s in &self.segments {
            out.push_str(&format!("{},{},{}\n", s.index, class_name(s.class_id), s.confidence));
        }
        out.push_str(&format!(
            "vote,{},{}\n",
            class_name(self.vote),
            self.vote_count as f64 / self.segments.len() as f64
        ));
        out
    }
}

/// Mode of `ids` with its count; ties go to the lowest id.
pub fn majority_vote(ids: &[usize]) -> (usize, usize) {
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for &id in ids {
        *votes.entry(id).or_default() += 1;
    }
    votes
        .into_iter()
        .fold((0, 0), |best, (c, n)| if n > best.1 { (c, n) } else { best })
}

pub fn cmd_predict(args: &PredictArgs) -> Result<PredictOutcome, CliError> {
    let cfg = resolve_config(&args.cfg)?;
    let model = load_model(&args.checkpoint)?;
    let format = match &args.format {
        Some(f) => SignalFormat::parse(f).ok_or_else(|| CliError::Usage(format!("unknown format '{f}'")))?,
        None => SignalFormat::from_path(&args.signal).ok_or_else(|| {
            CliError::Usage(format!("cannot infer the format of {}; pass --format", args.signal.display()))
        })?,
    };
    let opts = LoadOptions {
        sample_rate: cfg.signal.sample_rate,
        channel: cfg.signal.channel,
        var_hint: None,
    };
    let sig = load_signal(&args.signal, format, &opts).map_err(data(args.signal.display()))?;
    let segs = signal_io::segment_signal(&sig, FaultLabel::NORMAL, cfg.signal.segment_len, cfg.signal.stride);
    if segs.is_empty() {
        return Err(CliError::Data(format!(
            "{}: signal too short: {} samples, need at least {}",
            args.signal.display(),
            sig.len(),
            cfg.signal.segment_len
        )));
    }
    let images: Vec<TFImage> = segs
        .iter()
        .map(|s| segment_to_image(&s.samples, sig.sample_rate, &cfg.image))
        .collect::<Result<_, _>>()
        .map_err(data(args.signal.display()))?;
    if images[0].dims() != model.config.image_dims() {
        return Err(CliError::Data(
            vit::VitError::ConfigMismatch {
                expected: model.config.image_dims(),
                got: images[0].dims(),
            }
            .to_string(),
        ));
    }
    let mut segments = Vec::with_capacity(images.len());
    for chunk in images.chunks(trainer::EVAL_BATCH) {
        let refs: Vec<&TFImage> = chunk.iter().collect();
        let logits = model.logits(&refs).map_err(|e| CliError::Data(e.to_string()))?;
        for probs in softmax_rows(&logits) {
            let class_id = vit::argmax(&probs);
            segments.push(SegmentPrediction {
                index: segments.len(),
                class_id,
                confidence: probs[class_id],
                probabilities: probs,
            });
        }
    }
    let ids: Vec<usize> = segments.iter().map(|s| s.class_id).collect();
    let (vote, vote_count) = majority_vote(&ids);
    let outcome = PredictOutcome { segments, vote, vote_count };
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_file(&out.join(RESOLVED_CONFIG), cfg.to_text().as_bytes())?;
        write_file(&out.join(PREDICTIONS_FILE), outcome.to_lines().as_bytes())?;
    }
    Ok(outcome)
}

/// Runs one parsed command and returns what it prints on standard output.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Synth(a) => {
            let o = cmd_synth(&a)?;
            Ok(format!("manifest={}\nclasses={}\n", o.manifest.display(), o.labels.len()))
        }
        Command::Prepare(a) => {
            let o = cmd_prepare(&a)?;
            let counts: Vec<String> = SPLIT_NAMES
                .iter()
                .map(|s| format!("{s}={}", o.index.count(s)))
                .collect();
            Ok(format!("images={}\n{}\n", o.index.entries.len(), counts.join("\n")))
        }
        Command::Train(a) => {
            let o = cmd_train(&a)?;
            let mut s = format!("epochs={}\n", o.history.len());
            if let Some(last) = o.history.records.last() {
                s.push_str(&format!("val_acc={}\nval_loss={}\n", last.val_acc, last.val_loss));
            }
            s.push_str(&format!("checkpoint={}\n", o.final_checkpoint.display()));
            Ok(s)
        }
        Command::Eval(a) => {
            let o = cmd_eval(&a)?;
            Ok(format!("accuracy_pct={}\n", o.accuracy))
        }
        Command::Predict(a) => Ok(cmd_predict(&a)?.to_lines()),
    }
}
