//! Vibration signal ingestion: file decoding, fixed-length windowing and
//! leakage-safe train/validation/test splitting over the 14-class bearing
//! taxonomy.

mod codec;
mod labels;
pub mod manifest;
pub mod mat;
mod split;

use std::fmt;
use std::path::Path;

pub use codec::{decode_csv, decode_raw_f64le, encode_csv, encode_raw_f64le};
pub use labels::{FaultLabel, CLASS_NAMES, NUM_CLASSES};
pub use manifest::{Manifest, ManifestEntry};
pub use split::{split_dataset, DatasetSplit, SplitRatios};

/// Default window length in samples.
pub const DEFAULT_SEGMENT_LEN: usize = 2048;
/// Default hop between windows; equal to the window so segments do not overlap.
pub const DEFAULT_STRIDE: usize = 2048;

#[derive(Debug, thiserror::Error)]
pub enum SignalError {
    #[error("cannot read {path}: {source}")]
    UnreadableFile {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("malformed data: {0}")]
    MalformedData(String),
    #[error("no variable matching {hint:?}; available: {candidates:?}")]
    VariableNotFound {
        hint: String,
        candidates: Vec<String>,
    },
    #[error("unsupported MAT feature: {0}")]
    UnsupportedMatFeature(String),
    #[error("signal contains no samples")]
    EmptySignal,
    #[error("sample rate must be positive and finite, got {0}")]
    InvalidSampleRate(f64),
}

/// Sensor position of a recording.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    DriveEnd,
    FanEnd,
    Base,
    Unknown,
}

impl Channel {
    pub fn as_str(self) -> &'static str {
        match self {
            Channel::DriveEnd => "DriveEnd",
            Channel::FanEnd => "FanEnd",
            Channel::Base => "Base",
            Channel::Unknown => "Unknown",
        }
    }

    /// Accepts the long names and the CWRU variable suffixes (`DE`, `FE`, `BA`).
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "driveend" | "drive_end" | "de" => Some(Channel::DriveEnd),
            "fanend" | "fan_end" | "fe" => Some(Channel::FanEnd),
            "base" | "ba" => Some(Channel::Base),
            "unknown" => Some(Channel::Unknown),
            _ => None,
        }
    }

    /// Default MAT variable hint for CWRU-style files.
    pub fn mat_hint(self) -> Option<&'static str> {
        match self {
            Channel::DriveEnd => Some("DE_time"),
            Channel::FanEnd => Some("FE_time"),
            Channel::Base => Some("BA_time"),
            Channel::Unknown => None,
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalFormat {
    MatV5,
    Csv,
    RawF64LE,
}

impl SignalFormat {
    /// Infers the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "mat" => Some(SignalFormat::MatV5),
            "csv" | "txt" => Some(SignalFormat::Csv),
            "f64" | "bin" | "raw" => Some(SignalFormat::RawF64LE),
            _ => None,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mat" | "matv5" => Some(SignalFormat::MatV5),
            "csv" => Some(SignalFormat::Csv),
            "raw" | "rawf64le" | "f64" => Some(SignalFormat::RawF64LE),
            _ => None,
        }
    }
}

/// A raw vibration record.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub source_id: String,
    pub channel: Channel,
}

impl Signal {
    pub fn new(
        samples: Vec<f64>,
        sample_rate: f64,
        source_id: impl Into<String>,
        channel: Channel,
    ) -> Result<Self, SignalError> {
        if samples.is_empty() {
            return Err(SignalError::EmptySignal);
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(SignalError::InvalidSampleRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SignalError::MalformedData(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
            channel,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }
}

/// Caller-supplied metadata for [`load_signal`]; MAT files carry no rate.
#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub sample_rate: f64,
    pub channel: Channel,
    pub var_hint: Option<String>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            sample_rate: 12_000.0,
            channel: Channel::DriveEnd,
            var_hint: None,
        }
    }
}

pub fn load_signal(
    path: &Path,
    format: SignalFormat,
    opts: &LoadOptions,
) -> Result<Signal, SignalError> {
    let bytes = std::fs::read(path).map_err(|source| SignalError::UnreadableFile {
        path: path.display().to_string(),
        source,
    })?;
    decode_signal(&bytes, format, path.display().to_string(), opts)
}

/// Decodes an in-memory file image; the entry point shared by
/// [`load_signal`] and the fuzz targets.
pub fn decode_signal(
    bytes: &[u8],
    format: SignalFormat,
    source_id: String,
    opts: &LoadOptions,
) -> Result<Signal, SignalError> {
    let samples = match format {
        SignalFormat::Csv => decode_csv(bytes)?,
        SignalFormat::RawF64LE => decode_raw_f64le(bytes)?,
        SignalFormat::MatV5 => {
            let file = mat::parse_mat(bytes)?;
            let hint = opts
                .var_hint
                .as_deref()
                .or_else(|| opts.channel.mat_hint());
            file.select(hint)?.1.to_vec()
        }
    };
    Signal::new(samples, opts.sample_rate, source_id, opts.channel)
}

/// Where a segment came from in its parent signal.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Origin {
    pub source_id: String,
    pub start: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub samples: Vec<f64>,
    pub label: FaultLabel,
    pub origin: Origin,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Half-open sample range in the parent signal.
    pub fn range(&self) -> std::ops::Range<usize> {
        self.origin.start..self.origin.start + self.samples.len()
    }

    /// True when both segments come from the same source and share a sample.
    pub fn overlaps(&self, other: &Segment) -> bool {
        self.origin.source_id == other.origin.source_id
            && self.origin.start < other.range().end
            && other.origin.start < self.range().end
    }
}

/// Number of windows `segment_signal` produces for a signal of `len` samples.
pub fn segment_count(len: usize, segment_len: usize, stride: usize) -> usize {
    if segment_len == 0 || stride == 0 || len < segment_len {
        0
    } else {
        (len - segment_len) / stride + 1
    }
}

/// Cuts `signal` into windows of `segment_len` samples every `stride`
/// samples. Returns an empty vector when the signal is shorter than one
/// window (or when either length is zero).
pub fn segment_signal(
    signal: &Signal,
    label: FaultLabel,
    segment_len: usize,
    stride: usize,
) -> Vec<Segment> {
    let count = segment_count(signal.len(), segment_len, stride);
    (0..count)
        .map(|i| {
            let start = i * stride;
            Segment {
                samples: signal.samples[start..start + segment_len].to_vec(),
                label,
                origin: Origin {
                    source_id: signal.source_id.clone(),
                    start,
                },
            }
        })
        .collect()
}
