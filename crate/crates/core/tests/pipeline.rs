//! Command-level behaviour: synth → prepare → train → eval → predict.

mod common;

use bearing_vit::cli::*;
use bearing_vit::evaluator::decode_confusion_csv;
use bearing_vit::signal_io::mat::{encode_mat, MatArray};
use bearing_vit::signal_io::{segment_count, Manifest, CLASS_NAMES};
use bearing_vit::trainer::{self, decode_training_checkpoint, encode_training_checkpoint, TrainConfig};
use bearing_vit::vit::ViTModel;
use std::path::{Path, PathBuf};

fn cfg(seed: u64, sets: &[&str]) -> ConfigArgs {
    ConfigArgs {
        config: None,
        seed: Some(seed),
        set: sets.iter().map(|s| s.to_string()).collect(),
    }
}

const SMALL: &[&str] = &[
    "synth.segments_per_class=8",
    "model.depth=1",
    "model.dim=16",
    "model.heads=2",
    "model.mlp_dim=16",
    "train.batch_size=8",
    "train.lr=0.003",
];

fn synth(dir: &Path, classes: Option<usize>) -> SynthOutcome {
    cmd_synth(&SynthArgs { cfg: cfg(1, SMALL), out: dir.join("syn"), classes }).unwrap()
}

fn prepare(dir: &Path) -> PrepareOutcome {
    cmd_prepare(&PrepareArgs {
        cfg: cfg(1, SMALL),
        manifest: dir.join("syn").join(MANIFEST_FILE),
        out: dir.join("prep"),
    })
    .unwrap()
}

fn train(dir: &Path, epochs: usize) -> TrainSummary {
    cmd_train(&TrainArgs { cfg: cfg(1, SMALL), data: dir.join("prep"), out: dir.join("run"), epochs: Some(epochs) })
        .unwrap()
}

fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn synth_defaults_and_class_override() {
    let d = tempfile::tempdir().unwrap();
    let o = cmd_synth(&SynthArgs { cfg: cfg(0, &["synth.segments_per_class=4"]), out: d.path().join("a"), classes: None })
        .unwrap();
    assert_eq!(o.labels.len(), 4);
    let o = synth(d.path(), Some(2));
    assert_eq!(Manifest::load(&o.manifest).unwrap().labels().len(), 2);
    assert!(cmd_synth(&SynthArgs { cfg: cfg(0, &[]), out: d.path().join("b"), classes: Some(5) }).is_err());
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    synth(a.path(), None);
    synth(b.path(), None);
    assert_eq!(tree(&a.path().join("syn")), tree(&b.path().join("syn")));
}

#[test]
fn prepare_counts_follow_segment_formula() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), None);
    let o = prepare(d.path());
    let manifest = Manifest::load(&d.path().join("syn").join(MANIFEST_FILE)).unwrap();
    let expected: usize = manifest
        .entries
        .iter()
        .map(|e| {
            let bytes = std::fs::metadata(manifest.resolve(e)).unwrap().len() as usize;
            segment_count(bytes / 8, 2048, 2048)
        })
        .sum();
    assert_eq!(o.index.entries.len(), expected);
    assert_eq!(o.segments_per_entry.iter().sum::<usize>(), expected);
    let images = tree(&d.path().join("prep").join("images"));
    assert_eq!(images.len(), expected);
    assert!(d.path().join("prep").join(RESOLVED_CONFIG).exists());
}

#[test]
fn empty_manifest_writes_nothing() {
    let d = tempfile::tempdir().unwrap();
    let m = d.path().join("m.txt");
    std::fs::write(&m, "# nothing here\n").unwrap();
    let out = d.path().join("out");
    let err = cmd_prepare(&PrepareArgs { cfg: cfg(0, &[]), manifest: m, out: out.clone() }).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(!out.exists());
}

#[test]
fn mat_manifest_with_all_classes() {
    let d = tempfile::tempdir().unwrap();
    let mut text = String::new();
    for (i, name) in CLASS_NAMES.iter().enumerate() {
        let values: Vec<f64> = (0..3 * 2048).map(|n| ((n * (i + 3)) as f64 * 0.01).sin()).collect();
        let var = format!("X{:03}_DE_time", 97 + i);
        let bytes = encode_mat(&[MatArray { name: &var, rows: values.len(), cols: 1, values: &values }], false);
        std::fs::write(d.path().join(format!("{i}.mat")), bytes).unwrap();
        text.push_str(&format!("{i}.mat = {name}, DE, 12000\n"));
    }
    std::fs::write(d.path().join("m.txt"), text).unwrap();
    let out = d.path().join("prep");
    let o = cmd_prepare(&PrepareArgs { cfg: cfg(0, &[]), manifest: d.path().join("m.txt"), out: out.clone() }).unwrap();
    assert_eq!(o.index.entries.len(), 14 * 3);
    assert_eq!(std::fs::read_dir(out.join("images")).unwrap().count(), 14);
}

#[test]
fn zero_epochs_writes_initial_checkpoint() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), None);
    prepare(d.path());
    let s = train(d.path(), 0);
    assert!(s.history.is_empty());
    let csv = std::fs::read_to_string(d.path().join("run").join(HISTORY_FILE)).unwrap();
    assert_eq!(csv, "epoch,train_loss,val_loss,train_acc,val_acc\n");
    let model = load_model(&s.final_checkpoint).unwrap();
    let fresh = ViTModel::new(model.config.clone()).unwrap();
    assert_eq!(model, fresh);
}

#[test]
fn history_rows_and_rerun_identity() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [a.path(), b.path()] {
        synth(d, None);
        prepare(d);
        let s = train(d, 3);
        assert_eq!(s.history.len(), 3);
    }
    let read = |d: &Path| std::fs::read(d.join("run").join(HISTORY_FILE)).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(
        std::fs::read(a.path().join("run").join(FINAL_CHECKPOINT)).unwrap(),
        std::fs::read(b.path().join("run").join(FINAL_CHECKPOINT)).unwrap()
    );
}

#[test]
fn eval_reports_match_confusion_csv_and_memorize() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), Some(2));
    prepare(d.path());
    let s = train(d.path(), 40);
    assert!(s.history.records.last().unwrap().train_acc > 99.0, "{:?}", s.history.records.last());
    let o = cmd_eval(&EvalArgs {
        cfg: cfg(0, &[]),
        checkpoint: s.final_checkpoint.clone(),
        data: d.path().join("prep"),
        split: "train".into(),
        out: d.path().join("rep"),
    })
    .unwrap();
    assert_eq!(o.accuracy, 100.0);
    let cm = decode_confusion_csv(&std::fs::read_to_string(&o.files.confusion_csv).unwrap()).unwrap();
    assert_eq!(100.0 * cm.trace() as f64 / cm.total() as f64, o.accuracy);
    assert!(o.files.history_csv.is_some());
}

#[test]
fn eval_rejects_mismatched_images() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), None);
    prepare(d.path());
    let model = ViTModel::new(bearing_vit::vit::ViTConfig { height: 32, width: 32, ..Default::default() }).unwrap();
    let ck = d.path().join("m.ckpt");
    std::fs::write(&ck, bearing_vit::vit::encode_checkpoint(&model.config, &model.params)).unwrap();
    let err = cmd_eval(&EvalArgs {
        cfg: cfg(0, &[]),
        checkpoint: ck,
        data: d.path().join("prep"),
        split: "test".into(),
        out: d.path().join("rep"),
    })
    .unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("(32, 32, 1)") && msg.contains("(56, 56, 1)"), "{msg}");
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn predict_lines_and_vote() {
    let d = tempfile::tempdir().unwrap();
    synth(d.path(), None);
    prepare(d.path());
    let s = train(d.path(), 1);
    let signal = d.path().join("syn").join("signals").join("7_IR.f64");
    let o = cmd_predict(&PredictArgs {
        cfg: cfg(0, &[]),
        checkpoint: s.final_checkpoint.clone(),
        signal: signal.clone(),
        format: None,
        out: Some(d.path().join("pred")),
    })
    .unwrap();
    assert_eq!(o.segments.len(), 8);
    for seg in &o.segments {
        assert!((0.0..=1.0).contains(&seg.confidence));
        assert!((seg.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    // recount the vote from the printed lines
    let text = o.to_lines();
    let lines: Vec<&str> = text.lines().collect();
    let mut counts = std::collections::BTreeMap::new();
    for l in &lines[..lines.len() - 1] {
        *counts.entry(l.split(',').nth(1).unwrap().to_string()).or_insert(0) += 1;
    }
    let max = *counts.values().max().unwrap();
    let vote = lines.last().unwrap().split(',').nth(1).unwrap();
    assert_eq!(counts[vote], max);

    let short = d.path().join("short.csv");
    std::fs::write(&short, "0.1\n0.2\n").unwrap();
    let err = cmd_predict(&PredictArgs {
        cfg: cfg(0, &[]),
        checkpoint: s.final_checkpoint,
        signal: short,
        format: None,
        out: None,
    })
    .unwrap_err();
    assert!(err.to_string().contains("too short"));
}

#[test]
fn training_checkpoint_resumes_bitwise() {
    let data = common::synthetic_splits(6, 2);
    let mut cfg = bearing_vit::vit::ViTConfig { depth: 1, dim: 16, heads: 2, mlp_dim: 16, ..Default::default() };
    cfg.num_classes = 4;
    let d = tempfile::tempdir().unwrap();
    let tcfg = TrainConfig { epochs: 2, batch_size: 8, checkpoint_every: 1, ..Default::default() };
    let out = trainer::train(ViTModel::new(cfg).unwrap(), &data.train, &data.val, &tcfg, Some(d.path())).unwrap();
    assert_eq!(out.checkpoints.len(), 2);
    let bytes = std::fs::read(&out.checkpoints[1]).unwrap();
    let (model, adam) = decode_training_checkpoint(&bytes).unwrap();
    let adam = adam.unwrap();
    assert_eq!(model, out.model);
    assert_eq!(adam, out.adam);
    assert_eq!(adam.t, 2 * data.train.len().div_ceil(8) as u64);
    assert_eq!(encode_training_checkpoint(&model, &adam), bytes);
}
