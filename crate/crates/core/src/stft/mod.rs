//! Short-time Fourier transform and conversion of magnitude spectrograms
//! into standardized single-channel images.

mod fft;
mod image;

pub use fft::{fft, FftPlan};
pub use image::{
    decode_tfimage, encode_pgm, encode_tfimage, resize_bilinear, standardize, to_image,
    tfimage_to_pgm, TFImage,
};

use num_complex::Complex64;
use std::f64::consts::PI;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum StftError {
    #[error("transform size {0} is not a power of two")]
    NotPowerOfTwo(usize),
    #[error("frame length {got} does not match transform size {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("signal of {len} samples is shorter than one {window_len}-sample window")]
    SignalTooShort { len: usize, window_len: usize },
    #[error("invalid STFT parameters: {0}")]
    InvalidParams(String),
    #[error("spectrogram of {frames}x{bins} is too small to resize")]
    DegenerateSpectrogram { frames: usize, bins: usize },
    #[error("malformed image file: {0}")]
    MalformedImage(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hann: `w[m] = 0.5·(1 − cos(2πm/N))`.
    Hann,
    Rect,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rect => vec![1.0; len],
            WindowKind::Hann => (0..len)
                .map(|m| 0.5 * (1.0 - (2.0 * PI * m as f64 / len as f64).cos()))
                .collect(),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hann" => Some(WindowKind::Hann),
            "rect" | "rectangular" => Some(WindowKind::Rect),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WindowKind::Hann => "hann",
            WindowKind::Rect => "rect",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftParams {
    pub window: WindowKind,
    pub window_len: usize,
    pub hop: usize,
    pub nfft: usize,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            window: WindowKind::Hann,
            window_len: 128,
            hop: 32,
            nfft: 128,
        }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<(), StftError> {
        if !self.nfft.is_power_of_two() {
            return Err(StftError::NotPowerOfTwo(self.nfft));
        }
        if self.window_len == 0 || self.window_len > self.nfft {
            return Err(StftError::InvalidParams(format!(
                "window_len {} must lie in 1..={}",
                self.window_len, self.nfft
            )));
        }
        if self.hop == 0 {
            return Err(StftError::InvalidParams("hop must be >= 1".into()));
        }
        Ok(())
    }

    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.window_len || self.hop == 0 {
            0
        } else {
            (len - self.window_len) / self.hop + 1
        }
    }

    pub fn bins(&self) -> usize {
        self.nfft / 2 + 1
    }
}

/// Magnitude spectrogram, stored row-major as `[frames × bins]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub mags: Vec<f64>,
    pub frames: usize,
    pub bins: usize,
    /// Start time of each frame, seconds.
    pub frame_times: Vec<f64>,
    pub bin_freqs: Vec<f64>,
    pub window_len: usize,
    pub hop: usize,
    pub nfft: usize,
}

impl Spectrogram {
    pub fn at(&self, frame: usize, bin: usize) -> f64 {
        self.mags[frame * self.bins + bin]
    }

    pub fn frame(&self, frame: usize) -> &[f64] {
        &self.mags[frame * self.bins..(frame + 1) * self.bins]
    }
}

/// Frame `index` of `samples`, multiplied by `window` and zero-padded to `nfft`.
pub fn windowed_frame(
    samples: &[f64],
    index: usize,
    hop: usize,
    window: &[f64],
    nfft: usize,
) -> Vec<Complex64> {
    let start = index * hop;
    let mut buf = vec![Complex64::default(); nfft];
    for (m, (x, w)) in samples[start..start + window.len()].iter().zip(window).enumerate() {
        buf[m] = Complex64::new(x * w, 0.0);
    }
    buf
}

pub fn stft(samples: &[f64], sample_rate: f64, params: &StftParams) -> Result<Spectrogram, StftError> {
    params.validate()?;
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(StftError::InvalidParams(format!("sample rate {sample_rate}")));
    }
    if samples.len() < params.window_len {
        return Err(StftError::SignalTooShort {
            len: samples.len(),
            window_len: params.window_len,
        });
    }
    let frames = params.frame_count(samples.len());
    let bins = params.bins();
    let plan = FftPlan::new(params.nfft)?;
    let window = params.window.coefficients(params.window_len);
    let mut mags = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let mut buf = windowed_frame(samples, f, params.hop, &window, params.nfft);
        plan.process(&mut buf)?;
        mags.extend(buf[..bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        mags,
        frames,
        bins,
        frame_times: (0..frames).map(|f| (f * params.hop) as f64 / sample_rate).collect(),
        bin_freqs: (0..bins).map(|k| k as f64 * sample_rate / params.nfft as f64).collect(),
        window_len: params.window_len,
        hop: params.hop,
        nfft: params.nfft,
    })
}

/// Everything needed to turn a segment into a classifier input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageParams {
    pub stft: StftParams,
    pub height: usize,
    pub width: usize,
    pub log_eps: f64,
}

impl Default for ImageParams {
    fn default() -> Self {
        Self {
            stft: StftParams::default(),
            height: 56,
            width: 56,
            log_eps: 1e-8,
        }
    }
}

pub fn segment_to_image(
    samples: &[f64],
    sample_rate: f64,
    params: &ImageParams,
) -> Result<TFImage, StftError> {
    let spec = stft(samples, sample_rate, &params.stft)?;
    to_image(&spec, params.height, params.width, params.log_eps)
}
