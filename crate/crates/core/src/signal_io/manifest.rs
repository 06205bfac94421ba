//! Dataset manifest: one `path = label, channel, sample_rate[, var_hint]`
//! line per recording. `#` starts a comment line. Relative paths resolve
//! against the manifest's directory. The file format is inferred from the
//! path's extension.

use std::path::{Path, PathBuf};

use super::{Channel, FaultLabel, SignalFormat};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("manifest line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("cannot read manifest {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    /// Path exactly as written in the manifest.
    pub path: String,
    pub label: FaultLabel,
    pub channel: Channel,
    pub sample_rate: f64,
    pub var_hint: Option<String>,
    pub format: SignalFormat,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    /// Directory relative paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = std::fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut m = Self::parse(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Self, ManifestError> {
        let mut entries: Vec<ManifestEntry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |reason: String| ManifestError::Syntax { line, reason };
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (path, value) = trimmed
                .rsplit_once('=')
                .ok_or_else(|| err("expected `path = label, channel, sample_rate`".into()))?;
            let path = path.trim();
            if path.is_empty() {
                return Err(err("empty path".into()));
            }
            let fields: Vec<&str> = value.split(',').map(str::trim).collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(err(format!("expected 3 or 4 fields, found {}", fields.len())));
            }
            let label = FaultLabel::from_name(fields[0])
                .ok_or_else(|| err(format!("unknown label {:?}", fields[0])))?;
            let channel = Channel::parse(fields[1])
                .ok_or_else(|| err(format!("unknown channel {:?}", fields[1])))?;
            let sample_rate: f64 = fields[2]
                .parse()
                .ok()
                .filter(|r: &f64| r.is_finite() && *r > 0.0)
                .ok_or_else(|| err(format!("bad sample rate {:?}", fields[2])))?;
            let var_hint = fields.get(3).filter(|s| !s.is_empty()).map(|s| s.to_string());
            let format = SignalFormat::from_path(Path::new(path))
                .ok_or_else(|| err(format!("cannot infer format of {path:?}")))?;
            if entries.iter().any(|e| e.path == path) {
                return Err(err(format!("duplicate path {path:?}")));
            }
            entries.push(ManifestEntry {
                path: path.to_string(),
                label,
                channel,
                sample_rate,
                var_hint,
                format,
            });
        }
        Ok(Self {
            entries,
            base_dir: PathBuf::new(),
        })
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        let p = Path::new(&entry.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# path = label, channel, sample_rate[, var_hint]\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{} = {}, {}, {}",
                e.path, e.label, e.channel, e.sample_rate
            ));
            if let Some(h) = &e.var_hint {
                s.push_str(&format!(", {h}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn labels(&self) -> Vec<FaultLabel> {
        let mut l: Vec<_> = self.entries.iter().map(|e| e.label).collect();
        l.sort();
        l.dedup();
        l
    }
}
