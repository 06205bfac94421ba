//! Mini-batch Adam training of a [`ViTModel`] with per-epoch evaluation.
//!
//! Each epoch shuffles the training set with a stream derived from the seed
//! and the epoch number, so runs are reproducible and resumable per epoch.

use crate::evaluator::{self, EvalError};
use crate::rng::{self, streams};
use crate::stft::TFImage;
use crate::tensor::{decode_tensors, encode_tensors, Tape, Tensor, TensorError};
use crate::vit::{
    self, decode_checkpoint, encode_checkpoint, forward_batch, patchify_batch, ViTModel, ViTParams,
    VitError,
};
use crate::wire::ByteReader;
use rand::seq::SliceRandom;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("evaluation set is empty")]
    EmptyDataset,
    #[error("loss diverged at epoch {epoch}, step {step}: {detail}")]
    DivergedLoss { epoch: usize, step: u64, detail: String },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error(transparent)]
    Model(#[from] VitError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("malformed history CSV: {0}")]
    MalformedHistory(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub shuffle: bool,
    /// Write a resumable checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Cosine decay of the learning rate to zero over all steps.
    pub cosine: bool,
    /// Stop after this many epochs without a validation-loss improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            shuffle: true,
            checkpoint_every: 0,
            cosine: false,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr {} must be positive", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} {b} outside [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return bad(format!("eps {} must be positive", self.eps));
        }
        if self.patience == Some(0) {
            return bad("patience must be >= 1".into());
        }
        Ok(())
    }

    pub fn hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

/// First and second moments per parameter tensor, in canonical parameter
/// order, plus the number of steps taken.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { t: 0, v: m.clone(), m }
    }
}

/// One bias-corrected Adam update of every tensor in `params`.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        if p.shape() != grads[i].shape() || p.shape() != state.m[i].shape() || p.shape() != state.v[i].shape() {
            return Err(TrainError::ShapeMismatch(format!(
                "tensor {i}: param {:?}, grad {:?}, moment {:?}",
                p.shape(),
                grads[i].shape(),
                state.m[i].shape()
            )));
        }
    }
    state.t += 1;
    let AdamHyper { lr, beta1, beta2, eps } = *hyper;
    let c1 = 1.0 - beta1.powf(state.t as f64);
    let c2 = 1.0 - beta2.powf(state.t as f64);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        for (mj, gj) in m.iter_mut().zip(g) {
            *mj = beta1 * *mj + (1.0 - beta1) * gj;
        }
        let v = state.v[i].data_mut();
        for (vj, gj) in v.iter_mut().zip(g) {
            *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
        }
        let (m, v) = (state.m[i].data(), state.v[i].data());
        for ((pj, mj), vj) in p.data_mut().iter_mut().zip(m).zip(v) {
            *pj -= lr * (mj / c1) / ((vj / c2).sqrt() + eps);
        }
    }
    Ok(())
}

/// Images with class ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<TFImage>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(images: Vec<TFImage>, labels: Vec<usize>) -> Result<Self, TrainError> {
        if images.len() != labels.len() {
            return Err(TrainError::ShapeMismatch(format!(
                "{} images, {} labels",
                images.len(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    fn check_labels(&self, classes: usize) -> Result<(), TrainError> {
        match self.labels.iter().find(|&&l| l >= classes) {
            Some(&label) => Err(TrainError::LabelOutOfRange { label, classes }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,train_acc,val_acc";

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{HISTORY_HEADER}\n");
        for r in &self.records {
            writeln!(out, "{},{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.train_acc, r.val_acc).unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, TrainError> {
        let bad = |m: String| TrainError::MalformedHistory(m);
        let mut lines = text.lines();
        if lines.next() != Some(HISTORY_HEADER) {
            return Err(bad(format!("first line must be '{HISTORY_HEADER}'")));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(bad(format!("line {}: expected 5 fields", i + 2)));
            }
            let epoch = cells[0]
                .parse::<usize>()
                .map_err(|_| bad(format!("line {}: bad epoch", i + 2)))?;
            let mut vals = [0.0; 4];
            for (v, c) in vals.iter_mut().zip(&cells[1..]) {
                *v = c
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| bad(format!("line {}: bad value '{c}'", i + 2)))?;
            }
            records.push(EpochRecord {
                epoch,
                train_loss: vals[0],
                val_loss: vals[1],
                train_acc: vals[2],
                val_acc: vals[3],
            });
        }
        Ok(Self { records })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
}

pub const EVAL_BATCH: usize = 64;

/// Mean cross-entropy and exact-match accuracy over `data`, without
/// touching the parameters.
pub fn evaluate_epoch(model: &ViTModel, data: &Dataset) -> Result<EvalResult, TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    data.check_labels(model.config.num_classes)?;
    let mut total = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    for (imgs, labels) in data.images.chunks(EVAL_BATCH).zip(data.labels.chunks(EVAL_BATCH)) {
        let refs: Vec<&TFImage> = imgs.iter().collect();
        let logits = model.logits(&refs)?;
        let mut tape = Tape::new();
        let l = tape.constant(logits.clone());
        let loss = tape.cross_entropy(l, labels).map_err(VitError::from)?;
        total += tape.value(loss).item() * labels.len() as f64;
        predictions.extend(logits.data().chunks(logits.last_dim()).map(vit::argmax));
    }
    let accuracy = evaluator::accuracy(&predictions, &data.labels)?;
    Ok(EvalResult {
        loss: total / data.len() as f64,
        accuracy,
        predictions,
    })
}

/// A model checkpoint followed by `t: u64` and the Adam moments as named
/// tensors (`m.<name>` then `v.<name>`).
pub fn encode_training_checkpoint(model: &ViTModel, adam: &AdamState) -> Vec<u8> {
    let mut out = encode_checkpoint(&model.config, &model.params);
    out.extend_from_slice(&adam.t.to_le_bytes());
    let names = ViTParams::<Tensor>::names(model.config.depth);
    let mut named = Vec::with_capacity(2 * names.len());
    for (prefix, moments) in [("m", &adam.m), ("v", &adam.v)] {
        for (n, t) in names.iter().zip(moments) {
            named.push((format!("{prefix}.{n}"), t.clone()));
        }
    }
    out.extend(encode_tensors(&named));
    out
}

/// Accepts a bare model checkpoint (no optimizer state) or a training
/// checkpoint. Trailing bytes after either are rejected.
pub fn decode_training_checkpoint(bytes: &[u8]) -> Result<(ViTModel, Option<AdamState>), VitError> {
    let (config, params, used) = decode_checkpoint(bytes)?;
    let model = ViTModel { config, params };
    if used == bytes.len() {
        return Ok((model, None));
    }
    let bad = |m: String| VitError::MalformedCheckpoint(m);
    let mut r = ByteReader::new(&bytes[used..]);
    let t = r.u64().map_err(|e| bad(e.0))?;
    let (named, consumed) = decode_tensors(r.rest()).map_err(|e| bad(e.to_string()))?;
    if r.position() + consumed != bytes.len() - used {
        return Err(bad("trailing bytes after optimizer state".into()));
    }
    let names = ViTParams::<Tensor>::names(model.config.depth);
    let shapes = ViTParams::shapes(&model.config);
    if named.len() != 2 * names.len() {
        return Err(bad(format!("expected {} moment tensors, found {}", 2 * names.len(), named.len())));
    }
    let mut m = Vec::with_capacity(names.len());
    let mut v = Vec::with_capacity(names.len());
    for (i, (name, t)) in named.into_iter().enumerate() {
        let (prefix, dest) = if i < names.len() { ("m", &mut m) } else { ("v", &mut v) };
        let j = i % names.len();
        if name != format!("{prefix}.{}", names[j]) || t.shape() != shapes[j].as_slice() {
            return Err(bad(format!("unexpected optimizer tensor '{name}' {:?}", t.shape())));
        }
        if prefix == "v" && t.data().iter().any(|x| *x < 0.0) {
            return Err(bad(format!("negative second moment in '{name}'")));
        }
        dest.push(t);
    }
    Ok((model, Some(AdamState { t, m, v })))
}

pub fn checkpoint_name(epoch: usize) -> String {
    format!("ckpt_epoch{epoch:04}.bin")
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ViTModel,
    pub adam: AdamState,
    pub history: TrainHistory,
    /// Highest validation accuracy, ties to lower validation loss, then to
    /// the earlier epoch.
    pub best: Option<(usize, ViTModel)>,
    pub checkpoints: Vec<PathBuf>,
}

fn learning_rate(tcfg: &TrainConfig, step: u64, total: u64) -> f64 {
    if tcfg.cosine && total > 0 {
        0.5 * tcfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total as f64).cos())
    } else {
        tcfg.lr
    }
}

/// Runs `tcfg.epochs` epochs of mini-batch Adam on `train`, evaluating on
/// both sets after every epoch. Periodic checkpoints go to `checkpoint_dir`.
pub fn train(
    model: ViTModel,
    train: &Dataset,
    val: &Dataset,
    tcfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
) -> Result<TrainOutcome, TrainError> {
    tcfg.validate()?;
    model.config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if tcfg.epochs > 0 && val.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let classes = model.config.num_classes;
    train.check_labels(classes)?;
    val.check_labels(classes)?;
    let mut model = model;
    let mut adam = AdamState::new(model.params.values());
    let mut history = TrainHistory::default();
    let mut best: Option<(usize, ViTModel, f64, f64)> = None;
    let mut checkpoints = Vec::new();
    let steps_per_epoch = train.len().div_ceil(tcfg.batch_size) as u64;
    let total_steps = steps_per_epoch * tcfg.epochs as u64;
    let mut best_val_loss = f64::INFINITY;
    let mut stale = 0;

    for epoch in 1..=tcfg.epochs {
        let epoch_seed = rng::sub_seed(tcfg.seed, epoch as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        if tcfg.shuffle {
            order.shuffle(&mut rng::stream(epoch_seed, streams::SHUFFLE));
        }
        let mut drop_rng = rng::stream(epoch_seed, streams::DROPOUT);
        for batch in order.chunks(tcfg.batch_size) {
            let images: Vec<&TFImage> = batch.iter().map(|&i| &train.images[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train.labels[i]).collect();
            let step = adam.t + 1;
            let diverged = |e: TensorError| TrainError::DivergedLoss {
                epoch,
                step,
                detail: e.to_string(),
            };
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let x = tape.constant(patchify_batch(&model.config, &images)?);
            let dropout = (model.config.dropout > 0.0).then_some(&mut drop_rng);
            let out = forward_batch(&mut tape, &model.config, &vars, x, dropout).map_err(diverged)?;
            let loss = tape.cross_entropy(out.logits, &labels).map_err(diverged)?;
            let mut grads = tape.backward(loss).map_err(diverged)?;
            let grads: Vec<Tensor> = vars.values().into_iter().map(|v| grads.take(*v)).collect();
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(diverged(TensorError::NonFinite { op: "backward" }));
            }
            let mut hyper = tcfg.hyper();
            hyper.lr = learning_rate(tcfg, adam.t, total_steps);
            adam_step(&mut model.params.values_mut(), &grads, &mut adam, &hyper)?;
            if !model.params.is_finite() {
                return Err(diverged(TensorError::NonFinite { op: "adam_step" }));
            }
        }

        let tr = evaluate_epoch(&model, train)?;
        let va = evaluate_epoch(&model, val)?;
        if !tr.loss.is_finite() || !va.loss.is_finite() {
            return Err(TrainError::DivergedLoss {
                epoch,
                step: adam.t,
                detail: "non-finite evaluation loss".into(),
            });
        }
        history.records.push(EpochRecord {
            epoch,
            train_loss: tr.loss,
            val_loss: va.loss,
            train_acc: tr.accuracy,
            val_acc: va.accuracy,
        });
        let better = match &best {
            None => true,
            Some((_, _, acc, loss)) => va.accuracy > *acc || (va.accuracy == *acc && va.loss < *loss),
        };
        if better {
            best = Some((epoch, model.clone(), va.accuracy, va.loss));
        }
        if let Some(dir) = checkpoint_dir {
            if tcfg.checkpoint_every > 0 && epoch % tcfg.checkpoint_every == 0 {
                let path = dir.join(checkpoint_name(epoch));
                std::fs::write(&path, encode_training_checkpoint(&model, &adam))
                    .map_err(|source| TrainError::Io { path: path.clone(), source })?;
                checkpoints.push(path);
            }
        }
        if va.loss < best_val_loss {
            best_val_loss = va.loss;
            stale = 0;
        } else {
            stale += 1;
        }
        if tcfg.patience.is_some_and(|p| stale >= p) {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        adam,
        history,
        best: best.map(|(e, m, _, _)| (e, m)),
        checkpoints,
    })
}
