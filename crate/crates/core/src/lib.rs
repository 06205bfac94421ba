//! Bearing fault classification from vibration signals with a small vision
//! transformer over short-time Fourier spectrograms.
//!
//! The pipeline runs signal loading and segmentation ([`signal_io`]) or
//! synthesis ([`synth`]), spectrogram images ([`stft`]), the classifier
//! ([`vit`], built on [`tensor`]), training ([`trainer`]) and reporting
//! ([`evaluator`]). [`cli`] wires these into commands.

pub mod cli;
pub mod config;
pub mod evaluator;
pub mod rng;
pub mod signal_io;
pub mod stft;
pub mod synth;
pub mod tensor;
pub mod trainer;
pub mod vit;
mod wire;
