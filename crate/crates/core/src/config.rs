//! Layered run configuration: built-in defaults, then a `section.key = value`
//! file, then individual overrides. Unknown keys are errors.
//!
//! | key | default |
//! |-----|---------|
//! | `run.seed` | 0 |
//! | `signal.sample_rate` | 12000 |
//! | `signal.channel` | DriveEnd |
//! | `signal.segment_len` | 2048 |
//! | `signal.stride` | 2048 |
//! | `synth.classes` | 4 |
//! | `synth.segments_per_class` | 100 |
//! | `split.train` / `split.val` / `split.test` | 0.8 / 0.1 / 0.1 |
//! | `stft.window` | hann |
//! | `stft.window_len` / `stft.hop` / `stft.nfft` | 128 / 32 / 128 |
//! | `stft.log_eps` | 1e-8 |
//! | `stft.height` / `stft.width` | 56 / 56 |
//! | `model.patch` | 8 |
//! | `model.dim` / `model.depth` / `model.heads` | 64 / 4 / 4 |
//! | `model.mlp_dim` | 128 |
//! | `model.num_classes` | 14 |
//! | `model.dropout` | 0 |
//! | `train.epochs` / `train.batch_size` / `train.lr` | 100 / 32 / 0.0003 |
//! | `train.beta1` / `train.beta2` / `train.eps` | 0.9 / 0.999 / 1e-8 |
//! | `train.shuffle` | true |
//! | `train.checkpoint_every` | 0 |
//! | `train.cosine` | false |
//! | `train.patience` | none |

use crate::signal_io::{Channel, SplitRatios, DEFAULT_SEGMENT_LEN, DEFAULT_STRIDE};
use crate::stft::{ImageParams, WindowKind};
use crate::trainer::TrainConfig;
use crate::vit::ViTConfig;
use std::collections::HashSet;
use std::path::Path;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{key}': cannot parse '{value}'")]
    BadValue { key: String, value: String },
    #[error("cannot read config {path}: {reason}")]
    Io { path: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSection {
    pub sample_rate: f64,
    pub channel: Channel,
    pub segment_len: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSection {
    pub classes: usize,
    pub segments_per_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub signal: SignalSection,
    pub synth: SynthSection,
    pub split: SplitRatios,
    pub image: ImageParams,
    /// Image dimensions and seed are taken from `image` and `seed`.
    pub model: ViTConfig,
    /// The seed is taken from `seed`.
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            signal: SignalSection {
                sample_rate: 12_000.0,
                channel: Channel::DriveEnd,
                segment_len: DEFAULT_SEGMENT_LEN,
                stride: DEFAULT_STRIDE,
            },
            synth: SynthSection {
                classes: 4,
                segments_per_class: 100,
            },
            split: SplitRatios::default(),
            image: ImageParams::default(),
            model: ViTConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

impl RunConfig {
    /// Sets one `section.key` from its text value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: v.to_string(),
        };
        match key {
            "run.seed" => self.seed = parse(key, v)?,
            "signal.sample_rate" => self.signal.sample_rate = parse(key, v)?,
            "signal.channel" => self.signal.channel = Channel::parse(v).ok_or_else(bad)?,
            "signal.segment_len" => self.signal.segment_len = parse(key, v)?,
            "signal.stride" => self.signal.stride = parse(key, v)?,
            "synth.classes" => self.synth.classes = parse(key, v)?,
            "synth.segments_per_class" => self.synth.segments_per_class = parse(key, v)?,
            "split.train" => self.split.train = parse(key, v)?,
            "split.val" => self.split.val = parse(key, v)?,
            "split.test" => self.split.test = parse(key, v)?,
            "stft.window" => self.image.stft.window = WindowKind::parse(v).ok_or_else(bad)?,
            "stft.window_len" => self.image.stft.window_len = parse(key, v)?,
            "stft.hop" => self.image.stft.hop = parse(key, v)?,
            "stft.nfft" => self.image.stft.nfft = parse(key, v)?,
            "stft.log_eps" => self.image.log_eps = parse(key, v)?,
            "stft.height" => self.image.height = parse(key, v)?,
            "stft.width" => self.image.width = parse(key, v)?,
            "model.patch" => self.model.patch = parse(key, v)?,
            "model.dim" => self.model.dim = parse(key, v)?,
            "model.depth" => self.model.depth = parse(key, v)?,
            "model.heads" => self.model.heads = parse(key, v)?,
            "model.mlp_dim" => self.model.mlp_dim = parse(key, v)?,
            "model.num_classes" => self.model.num_classes = parse(key, v)?,
            "model.dropout" => self.model.dropout = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.beta1" => self.train.beta1 = parse(key, v)?,
            "train.beta2" => self.train.beta2 = parse(key, v)?,
            "train.eps" => self.train.eps = parse(key, v)?,
            "train.shuffle" => self.train.shuffle = parse(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, v)?,
            "train.cosine" => self.train.cosine = parse(key, v)?,
            "train.patience" => {
                self.train.patience = if v == "none" { None } else { Some(parse(key, v)?) }
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.signal;
        let st = &self.image.stft;
        let m = &self.model;
        let t = &self.train;
        vec![
            ("run.seed", self.seed.to_string()),
            ("signal.sample_rate", s.sample_rate.to_string()),
            ("signal.channel", s.channel.as_str().to_string()),
            ("signal.segment_len", s.segment_len.to_string()),
            ("signal.stride", s.stride.to_string()),
            ("synth.classes", self.synth.classes.to_string()),
            ("synth.segments_per_class", self.synth.segments_per_class.to_string()),
            ("split.train", self.split.train.to_string()),
            ("split.val", self.split.val.to_string()),
            ("split.test", self.split.test.to_string()),
            ("stft.window", st.window.as_str().to_string()),
            ("stft.window_len", st.window_len.to_string()),
            ("stft.hop", st.hop.to_string()),
            ("stft.nfft", st.nfft.to_string()),
            ("stft.log_eps", self.image.log_eps.to_string()),
            ("stft.height", self.image.height.to_string()),
            ("stft.width", self.image.width.to_string()),
            ("model.patch", m.patch.to_string()),
            ("model.dim", m.dim.to_string()),
            ("model.depth", m.depth.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.mlp_dim", m.mlp_dim.to_string()),
            ("model.num_classes", m.num_classes.to_string()),
            ("model.dropout", m.dropout.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.lr", t.lr.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.eps", t.eps.to_string()),
            ("train.shuffle", t.shuffle.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("train.cosine", t.cosine.to_string()),
            ("train.patience", t.patience.map_or("none".to_string(), |p| p.to_string())),
        ]
    }

    pub fn to_text(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Applies a config text on top of `self`. A key may appear once.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |reason: String| ConfigError::Syntax { line: i + 1, reason };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| syntax("expected 'section.key = value'".into()))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(syntax(format!("duplicate key '{k}'")));
            }
            self.set(k, v).map_err(|e| match e {
                ConfigError::UnknownKey(_) => syntax(e.to_string()),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::from_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: 0,
            reason: format!("override '{assignment}' is not key=value"),
        })?;
        self.set(k.trim(), v)
    }

    /// Model config for images of the given dimensions.
    pub fn vit_config(&self, dims: (usize, usize, usize)) -> ViTConfig {
        ViTConfig {
            height: dims.0,
            width: dims.1,
            channels: dims.2,
            seed: self.seed,
            ..self.model.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip_covers_every_key() {
        let mut c = RunConfig::default();
        c.set("train.patience", "3").unwrap();
        c.set("stft.window", "rect").unwrap();
        c.set("model.dropout", "0.1").unwrap();
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        assert!(matches!(
            RunConfig::from_text("model.widht = 3\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(RunConfig::from_text("run.seed = 1\nrun.seed = 2\n").is_err());
        assert!(matches!(
            RunConfig::from_text("train.lr = fast\n"),
            Err(ConfigError::BadValue { .. })
        ));
    }

    #[test]
    fn comments_and_overrides() {
        let mut c = RunConfig::from_text("# note\n\ntrain.epochs = 7\n").unwrap();
        assert_eq!(c.train.epochs, 7);
        c.apply_override("train.epochs=9").unwrap();
        assert_eq!(c.train_config().epochs, 9);
        assert!(c.apply_override("train.epochs").is_err());
    }

    #[test]
    fn model_takes_image_dims_and_seed() {
        let mut c = RunConfig::default();
        c.seed = 11;
        let v = c.vit_config((32, 40, 1));
        assert_eq!((v.height, v.width, v.seed), (32, 40, 11));
    }
}
