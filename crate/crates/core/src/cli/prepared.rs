//! On-disk layout written by `prepare` and read by `train` and `eval`:
//!
//! ```text
//! <dir>/images/<label>/s<entry:03>_<start:09>.tfi
//! <dir>/split.txt
//! <dir>/resolved_config.txt
//! ```
//!
//! `split.txt` starts with a `dims = H W C` line followed by one
//! tab-separated `split, label, source, start, image` row per segment.
//! Image paths are relative to `<dir>`.

use crate::signal_io::FaultLabel;
use crate::stft::decode_tfimage;
use crate::trainer::Dataset;
use std::fmt::Write as _;
use std::path::Path;

pub const SPLIT_FILE: &str = "split.txt";
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("split index line {line}: {reason}")]
pub struct IndexError {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexEntry {
    pub split: String,
    pub label: FaultLabel,
    pub source: String,
    pub start: usize,
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndex {
    pub dims: (usize, usize, usize),
    pub entries: Vec<IndexEntry>,
}

impl SplitIndex {
    pub fn to_text(&self) -> String {
        let (h, w, c) = self.dims;
        let mut out = format!("dims = {h} {w} {c}\n");
        for e in &self.entries {
            writeln!(out, "{}\t{}\t{}\t{}\t{}", e.split, e.label, e.source, e.start, e.image).unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, IndexError> {
        let err = |line: usize, reason: String| IndexError { line, reason };
        let mut lines = text.lines();
        let first = lines.next().ok_or_else(|| err(1, "empty index".into()))?;
        let dims: Vec<usize> = first
            .strip_prefix("dims = ")
            .ok_or_else(|| err(1, "expected 'dims = H W C'".into()))?
            .split(' ')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| err(1, "dimensions must be counts".into()))?;
        let dims = match dims[..] {
            [h, w, c] if h > 0 && w > 0 && c > 0 => (h, w, c),
            _ => return Err(err(1, "need three positive dimensions".into())),
        };
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(err(n, format!("expected 5 tab-separated fields, found {}", f.len())));
            }
            if !SPLIT_NAMES.contains(&f[0]) {
                return Err(err(n, format!("unknown split '{}'", f[0])));
            }
            let label = FaultLabel::from_name(f[1]).ok_or_else(|| err(n, format!("unknown label '{}'", f[1])))?;
            let start = f[3].parse().map_err(|_| err(n, format!("bad start '{}'", f[3])))?;
            let image = f[4];
            if image.is_empty() || Path::new(image).is_absolute() || image.split('/').any(|p| p == "..") {
                return Err(err(n, format!("image path '{image}' must stay inside the dataset")));
            }
            entries.push(IndexEntry {
                split: f[0].to_string(),
                label,
                source: f[2].to_string(),
                start,
                image: image.to_string(),
            });
        }
        Ok(Self { dims, entries })
    }

    pub fn count(&self, split: &str) -> usize {
        self.entries.iter().filter(|e| e.split == split).count()
    }
}

#[derive(Debug, Clone)]
pub struct PreparedData {
    pub index: SplitIndex,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl PreparedData {
    pub fn split(&self, name: &str) -> Option<&Dataset> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }
}

/// Reads the index and every image it names. Images must match the
/// recorded dimensions.
pub fn load_prepared(dir: &Path) -> Result<PreparedData, String> {
    let index_path = dir.join(SPLIT_FILE);
    let text = std::fs::read_to_string(&index_path).map_err(|e| format!("{}: {e}", index_path.display()))?;
    let index = SplitIndex::parse(&text).map_err(|e| format!("{}: {e}", index_path.display()))?;
    let mut sets: [Dataset; 3] = Default::default();
    for e in &index.entries {
        let path = dir.join(&e.image);
        let bytes = std::fs::read(&path).map_err(|err| format!("{}: {err}", path.display()))?;
        let img = decode_tfimage(&bytes).map_err(|err| format!("{}: {err}", path.display()))?;
        if img.dims() != index.dims {
            return Err(format!(
                "{}: image is {:?} but the index records {:?}",
                path.display(),
                img.dims(),
                index.dims
            ));
        }
        let k = SPLIT_NAMES.iter().position(|s| *s == e.split).expect("validated split");
        sets[k].images.push(img);
        sets[k].labels.push(e.label.id());
    }
    let [train, val, test] = sets;
    Ok(PreparedData { index, train, val, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_rejections() {
        let idx = SplitIndex {
            dims: (56, 56, 1),
            entries: vec![IndexEntry {
                split: "val".into(),
                label: FaultLabel::from_name("7_IR").unwrap(),
                source: "signals/7_IR.f64".into(),
                start: 4096,
                image: "images/7_IR/s002_000004096.tfi".into(),
            }],
        };
        let text = idx.to_text();
        assert_eq!(SplitIndex::parse(&text).unwrap(), idx);
        assert_eq!(idx.count("val"), 1);
        assert!(SplitIndex::parse("dims = 1 2\n").is_err());
        assert!(SplitIndex::parse(&text.replace("val", "dev")).is_err());
        assert!(SplitIndex::parse(&text.replace("images/", "../")).is_err());
    }
}
