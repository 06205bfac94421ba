//! Exact-match accuracy, confusion matrices and report export.
//!
//! Overall and per-class accuracies are formed from integer counts with a
//! single final division through [`percent`], so `accuracy(preds, labels)`
//! and `100·trace/total` of the matching confusion matrix are the same
//! floating-point value.

use crate::signal_io::CLASS_NAMES;
use crate::stft::encode_pgm;
use crate::trainer::TrainHistory;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("class id {id} out of range for {classes} classes")]
    IdOutOfRange { id: usize, classes: usize },
    #[error("malformed confusion CSV: {0}")]
    MalformedCsv(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// `100·num/den`.
pub fn percent(num: u64, den: u64) -> f64 {
    100.0 * num as f64 / den as f64
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64, EvalError> {
    check_lengths(predictions, labels)?;
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(percent(hits as u64, labels.len() as u64))
}

fn check_lengths(predictions: &[usize], labels: &[usize]) -> Result<(), EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(())
}

/// Display names for `k` classes: the canonical fault names when `k` fits,
/// otherwise `c0, c1, …`.
pub fn class_names(k: usize) -> Vec<String> {
    if k <= CLASS_NAMES.len() {
        CLASS_NAMES[..k].iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|i| format!("c{i}")).collect()
    }
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(names: Vec<String>) -> Self {
        let k = names.len();
        Self {
            classes: k,
            counts: vec![0; k * k],
            names,
        }
    }

    pub fn from_counts(names: Vec<String>, counts: Vec<u64>) -> Result<Self, EvalError> {
        if counts.len() != names.len() * names.len() {
            return Err(EvalError::MalformedCsv(format!(
                "{} counts for {} classes",
                counts.len(),
                names.len()
            )));
        }
        Ok(Self {
            classes: names.len(),
            counts,
            names,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes].iter().sum()
    }

    /// `100·trace/total`; `None` for an empty matrix.
    pub fn accuracy(&self) -> Option<f64> {
        let total = self.total();
        (total > 0).then(|| percent(self.trace(), total))
    }

    /// Row-normalized copy; empty rows stay zero.
    pub fn normalized(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.counts.len()];
        for i in 0..self.classes {
            let s = self.row_sum(i);
            if s > 0 {
                for j in 0..self.classes {
                    out[i * self.classes + j] = self.get(i, j) as f64 / s as f64;
                }
            }
        }
        out
    }
}

pub fn confusion(predictions: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix, EvalError> {
    if predictions.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut cm = ConfusionMatrix::new(class_names(k));
    for (&p, &l) in predictions.iter().zip(labels) {
        for id in [p, l] {
            if id >= k {
                return Err(EvalError::IdOutOfRange { id, classes: k });
            }
        }
        cm.counts[l * k + p] += 1;
    }
    Ok(cm)
}

/// Diagonal over row sum, in percent; `None` marks a class with no samples.
pub fn per_class_accuracy(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    (0..cm.classes)
        .map(|i| {
            let s = cm.row_sum(i);
            (s > 0).then(|| percent(cm.get(i, i), s))
        })
        .collect()
}

pub fn encode_confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\pred");
    for n in &cm.names {
        write!(out, ",{n}").unwrap();
    }
    out.push('\n');
    for i in 0..cm.classes {
        out.push_str(&cm.names[i]);
        for j in 0..cm.classes {
            write!(out, ",{}", cm.get(i, j)).unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn decode_confusion_csv(text: &str) -> Result<ConfusionMatrix, EvalError> {
    let bad = |m: &str| EvalError::MalformedCsv(m.to_string());
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty input"))?;
    let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let k = names.len();
    let mut counts = Vec::with_capacity(k * k);
    for (i, line) in lines.enumerate() {
        if i >= k {
            return Err(bad("more rows than classes"));
        }
        let mut cells = line.split(',');
        if cells.next() != Some(names[i].as_str()) {
            return Err(bad("row label does not match header"));
        }
        let row: Vec<&str> = cells.collect();
        if row.len() != k {
            return Err(bad("row width does not match header"));
        }
        for c in row {
            counts.push(c.parse::<u64>().map_err(|_| bad("count is not a non-negative integer"))?);
        }
    }
    if counts.len() != k * k {
        return Err(bad("fewer rows than classes"));
    }
    ConfusionMatrix::from_counts(names, counts)
}

/// Grayscale heat map of the row-normalized matrix, `scale` pixels per cell;
/// darker means larger.
pub fn confusion_pgm(cm: &ConfusionMatrix, scale: usize) -> Vec<u8> {
    let k = cm.classes;
    let side = k * scale;
    let norm = cm.normalized();
    let mut gray = vec![0u8; side * side];
    for y in 0..side {
        for x in 0..side {
            let v = norm[(y / scale) * k + x / scale];
            gray[y * side + x] = 255 - (v * 255.0).round() as u8;
        }
    }
    encode_pgm(side, side, &gray)
}

pub fn summary_text(cm: &ConfusionMatrix, accuracy: f64, config_text: &str) -> String {
    let mut out = String::new();
    writeln!(out, "accuracy_pct = {accuracy}").unwrap();
    writeln!(out, "samples = {}", cm.total()).unwrap();
    writeln!(out, "correct = {}", cm.trace()).unwrap();
    for (name, acc) in cm.names.iter().zip(per_class_accuracy(cm)) {
        match acc {
            Some(a) => writeln!(out, "class.{name}.accuracy_pct = {a}").unwrap(),
            None => writeln!(out, "class.{name}.accuracy_pct = absent").unwrap(),
        }
    }
    writeln!(out, "config_sha256 = {}", hex::encode(Sha256::digest(config_text.as_bytes()))).unwrap();
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub confusion_csv: PathBuf,
    pub summary: PathBuf,
    pub history_csv: Option<PathBuf>,
    pub confusion_pgm: Option<PathBuf>,
}

/// Writes `confusion.csv`, `summary.txt`, and when given `history.csv`;
/// `confusion.pgm` when `pgm_scale > 0`.
pub fn export_report(
    cm: &ConfusionMatrix,
    history: Option<&TrainHistory>,
    accuracy: f64,
    config_text: &str,
    dir: &Path,
    pgm_scale: usize,
) -> Result<ReportFiles, EvalError> {
    let write = |name: &str, bytes: &[u8]| -> Result<PathBuf, EvalError> {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| EvalError::Io { path: path.clone(), source })?;
        Ok(path)
    };
    std::fs::create_dir_all(dir).map_err(|source| EvalError::Io { path: dir.to_path_buf(), source })?;
    let confusion_csv = write("confusion.csv", encode_confusion_csv(cm).as_bytes())?;
    let summary = write("summary.txt", summary_text(cm, accuracy, config_text).as_bytes())?;
    let history_csv = history
        .map(|h| write("history.csv", h.to_csv().as_bytes()))
        .transpose()?;
    let confusion_pgm = (pgm_scale > 0)
        .then(|| write("confusion.pgm", &confusion_pgm(cm, pgm_scale)))
        .transpose()?;
    Ok(ReportFiles {
        confusion_csv,
        summary,
        history_csv,
        confusion_pgm,
    })
}
