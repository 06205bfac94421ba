//! Synthetic bearing vibration: a train of exponentially decaying resonance
//! bursts, one per rolling-element impact, plus Gaussian noise.
//!
//! ```text
//! x[n] = Σ_k a_k · exp(−decay·(t_n − t_k)) · sin(2π·f_res·(t_n − t_k))   for t_n ≥ t_k
//!        + noise_std · z[n]
//! ```
//!
//! Impact times start at `t_0 = 0` and advance by `(1/impact_rate)·(1 + slip_jitter·g_k)`
//! with `g_k` standard normal (clamped to stay positive). Amplitudes `a_k`
//! start at `impact_amp`; ball faults halve every second impact and shaft
//! modulation scales by `1 − m·(1 − cos(2π·shaft_rate·t_k))/2`. A burst is
//! truncated once its envelope falls below `e^-30` of its peak.
//!
//! Jitter draws come from stream [`rng::streams::IMPACT_JITTER`] and noise
//! from [`rng::streams::NOISE`], both Box–Muller over ChaCha8 (see [`crate::rng`]).

use std::f64::consts::PI;

use crate::rng::{self, Gaussian};
use crate::signal_io::{segment_signal, Channel, FaultLabel, Segment, Signal};

const TAIL_CUTOFF: f64 = 30.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SynthError {
    #[error("invalid fault spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultKind {
    Normal,
    InnerRace,
    OuterRace,
    Ball,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Characteristic defect frequency, Hz.
    pub impact_rate: f64,
    pub resonance_freq: f64,
    /// Ring-down rate, 1/s.
    pub decay: f64,
    pub impact_amp: f64,
    /// Standard deviation of the relative inter-impact interval.
    pub slip_jitter: f64,
    pub noise_std: f64,
    /// Shaft-rate amplitude modulation depth in `[0, 1]`.
    pub modulation: Option<f64>,
    /// Shaft rotation frequency, Hz. Also the tone frequency of `Normal`.
    pub shaft_rate: f64,
}

/// Shaft rate of a CWRU motor at 0 hp (1797 rpm).
pub const SHAFT_RATE_0HP: f64 = 1797.0 / 60.0;

impl FaultSpec {
    fn base(kind: FaultKind, impact_rate: f64) -> Self {
        Self {
            kind,
            impact_rate,
            resonance_freq: 3000.0,
            decay: 700.0,
            impact_amp: 1.0,
            slip_jitter: 0.01,
            noise_std: 0.05,
            modulation: None,
            shaft_rate: SHAFT_RATE_0HP,
        }
    }

    pub fn normal() -> Self {
        Self {
            impact_amp: 0.1,
            ..Self::base(FaultKind::Normal, 0.0)
        }
    }

    pub fn inner_race() -> Self {
        Self {
            modulation: Some(0.8),
            ..Self::base(FaultKind::InnerRace, 162.0)
        }
    }

    pub fn outer_race() -> Self {
        Self::base(FaultKind::OuterRace, 107.0)
    }

    pub fn ball() -> Self {
        Self::base(FaultKind::Ball, 141.0)
    }

    pub fn validate(&self, sample_rate: f64) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        let finite = [
            self.impact_rate,
            self.resonance_freq,
            self.decay,
            self.impact_amp,
            self.slip_jitter,
            self.noise_std,
            self.shaft_rate,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all parameters must be finite");
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return bad("sample_rate must be positive");
        }
        if self.impact_rate < 0.0 {
            return bad("impact_rate must be >= 0");
        }
        if self.resonance_freq < 0.0 || self.resonance_freq >= sample_rate / 2.0 {
            return bad("resonance_freq must lie in [0, sample_rate/2)");
        }
        if self.noise_std < 0.0 {
            return bad("noise_std must be >= 0");
        }
        if !(0.0..=0.2).contains(&self.slip_jitter) {
            return bad("slip_jitter must lie in [0, 0.2]");
        }
        if self.decay < 0.0 || self.shaft_rate < 0.0 {
            return bad("decay and shaft_rate must be >= 0");
        }
        if let Some(m) = self.modulation {
            if !(0.0..=1.0).contains(&m) {
                return bad("modulation depth must lie in [0, 1]");
            }
        }
        Ok(())
    }
}

/// Impact onset times in seconds within `[0, duration)`.
pub fn impact_times(spec: &FaultSpec, duration: f64, seed: u64) -> Vec<f64> {
    if spec.kind == FaultKind::Normal || spec.impact_rate <= 0.0 {
        return Vec::new();
    }
    let period = 1.0 / spec.impact_rate;
    let mut jitter = Gaussian::new(rng::stream(seed, rng::streams::IMPACT_JITTER));
    let mut times = Vec::new();
    let mut t = 0.0;
    while t < duration {
        times.push(t);
        t = if spec.slip_jitter > 0.0 {
            t + period * (1.0 + spec.slip_jitter * jitter.next_standard()).max(0.05)
        } else {
            // exact grid, no accumulated rounding
            times.len() as f64 * period
        };
    }
    times
}

fn impact_amplitude(spec: &FaultSpec, k: usize, t: f64) -> f64 {
    let mut a = spec.impact_amp;
    if spec.kind == FaultKind::Ball && k % 2 == 1 {
        a *= 0.5;
    }
    if let Some(m) = spec.modulation {
        a *= 1.0 - m * (1.0 - (2.0 * PI * spec.shaft_rate * t).cos()) / 2.0;
    }
    a
}

/// Generates exactly `n` samples.
pub fn generate_samples(
    spec: &FaultSpec,
    n: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<f64>, SynthError> {
    spec.validate(sample_rate)?;
    let mut x = vec![0.0; n];
    let duration = n as f64 / sample_rate;
    if spec.kind == FaultKind::Normal {
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / sample_rate;
            *v = spec.impact_amp * (2.0 * PI * spec.shaft_rate * t).sin();
        }
    }
    let w = 2.0 * PI * spec.resonance_freq;
    for (k, &tk) in impact_times(spec, duration, seed).iter().enumerate() {
        let a = impact_amplitude(spec, k, tk);
        if a == 0.0 {
            continue;
        }
        let first = (tk * sample_rate).ceil() as usize;
        for (i, v) in x.iter_mut().enumerate().skip(first) {
            let dt = i as f64 / sample_rate - tk;
            if spec.decay * dt > TAIL_CUTOFF {
                break;
            }
            *v += a * (-spec.decay * dt).exp() * (w * dt).sin();
        }
    }
    if spec.noise_std > 0.0 {
        let mut g = Gaussian::new(rng::stream(seed, rng::streams::NOISE));
        for v in x.iter_mut() {
            *v += spec.noise_std * g.next_standard();
        }
    }
    Ok(x)
}

pub fn generate_signal(
    spec: &FaultSpec,
    duration: f64,
    sample_rate: f64,
    seed: u64,
) -> Result<Signal, SynthError> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(SynthError::InvalidSpec("duration must be positive".into()));
    }
    let n = (duration * sample_rate).round() as usize;
    let samples = generate_samples(spec, n.max(1), sample_rate, seed)?;
    Signal::new(samples, sample_rate, "synthetic", Channel::DriveEnd)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))
}

/// The four-class desk suite: Normal plus one inner-race, outer-race and
/// ball defect, using the 0.007-inch class names.
pub fn default_suite() -> Vec<(FaultLabel, FaultSpec)> {
    let l = |n: &str| FaultLabel::from_name(n).expect("canonical name");
    vec![
        (l("N"), FaultSpec::normal()),
        (l("7_IR"), FaultSpec::inner_race()),
        (l("7_OR1"), FaultSpec::outer_race()),
        (l("7_BA"), FaultSpec::ball()),
    ]
}

/// Per-class sub-seed, shared by the dataset generator and the CLI.
pub fn class_seed(seed: u64, label: FaultLabel) -> u64 {
    rng::sub_seed(seed, label.id() as u64)
}

/// One continuous signal per class, long enough for `segments_per_class`
/// non-overlapping windows.
pub fn generate_class_signals(
    specs: &[(FaultLabel, FaultSpec)],
    segments_per_class: usize,
    segment_len: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<(FaultLabel, Signal)>, SynthError> {
    if specs.len() < 2 {
        return Err(SynthError::InvalidSpec("need at least two classes".into()));
    }
    if segments_per_class == 0 || segment_len == 0 {
        return Err(SynthError::InvalidSpec(
            "segments_per_class and segment_len must be >= 1".into(),
        ));
    }
    let mut seen = std::collections::HashSet::new();
    specs
        .iter()
        .map(|(label, spec)| {
            if !seen.insert(*label) {
                return Err(SynthError::InvalidSpec(format!("duplicate class {label}")));
            }
            let samples = generate_samples(
                spec,
                segments_per_class * segment_len,
                sample_rate,
                class_seed(seed, *label),
            )?;
            let sig = Signal::new(samples, sample_rate, format!("synth/{label}"), Channel::DriveEnd)
                .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
            Ok((*label, sig))
        })
        .collect()
}

pub fn generate_dataset(
    specs: &[(FaultLabel, FaultSpec)],
    segments_per_class: usize,
    segment_len: usize,
    sample_rate: f64,
    seed: u64,
) -> Result<Vec<Segment>, SynthError> {
    let signals =
        generate_class_signals(specs, segments_per_class, segment_len, sample_rate, seed)?;
    Ok(signals
        .iter()
        .flat_map(|(label, sig)| segment_signal(sig, *label, segment_len, segment_len))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 12_000.0;

    fn clean(kind: FaultKind, rate: f64) -> FaultSpec {
        FaultSpec {
            slip_jitter: 0.0,
            noise_std: 0.0,
            ..FaultSpec::base(kind, rate)
        }
    }

    /// O(N²) DFT magnitude of a real sequence, bins 0..=N/2.
    fn dft_mag(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (m, v) in x.iter().enumerate() {
                    let ang = -2.0 * PI * (k * m % n) as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                (re * re + im * im).sqrt()
            })
            .collect()
    }

    #[test]
    fn null_source_is_zero() {
        for kind in [FaultKind::Normal, FaultKind::InnerRace, FaultKind::Ball] {
            let spec = FaultSpec {
                impact_amp: 0.0,
                modulation: None,
                ..clean(kind, 100.0)
            };
            let x = generate_signal(&spec, 0.1, FS, 3).unwrap();
            assert!(x.samples.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn onset_count_matches_rate() {
        let spec = clean(FaultKind::OuterRace, 100.0);
        let x = generate_signal(&spec, 1.0, FS, 1).unwrap().samples;
        // rising threshold crossings of |x| with a refractory gap of half a period
        let thr = 0.2;
        let refractory = (0.5 * FS / 100.0) as usize;
        let mut count = 0;
        let mut last: Option<usize> = None;
        for (i, v) in x.iter().enumerate() {
            if v.abs() > thr && last.is_none_or(|l| i - l > refractory) {
                count += 1;
                last = Some(i);
            } else if v.abs() > thr {
                last = Some(i);
            }
        }
        assert_eq!(count, 100);
        // local-max scan of the per-period peaks agrees
        let peaks = (0..100)
            .filter(|p| {
                let lo = p * 120;
                x[lo..lo + 120].iter().any(|v| v.abs() > 0.5)
            })
            .count();
        assert_eq!(peaks, 100);
    }

    #[test]
    fn resonance_dominates_spectrum() {
        let spec = clean(FaultKind::OuterRace, 100.0);
        let x = generate_samples(&spec, 1200, FS, 2).unwrap();
        let mag = dft_mag(&x);
        let peak = (0..mag.len()).max_by(|&a, &b| mag[a].total_cmp(&mag[b])).unwrap();
        let target = 3000.0 / (FS / 1200.0);
        assert!((peak as f64 - target).abs() <= 2.0, "peak bin {peak} vs {target}");
    }

    #[test]
    fn envelope_spectra_separate_rates() {
        let labels = ["7_IR", "7_OR1", "7_BA"];
        let rates = [30.0, 90.0, 160.0];
        let specs: Vec<_> = labels
            .iter()
            .zip(rates)
            .map(|(l, r)| (FaultLabel::from_name(l).unwrap(), clean(FaultKind::OuterRace, r)))
            .collect();
        let n = 1200;
        let segs = generate_dataset(&specs, 4, n, FS, 11).unwrap();
        let mut dominant = Vec::new();
        for (label, _) in &specs {
            let mut mean = vec![0.0; n / 2 + 1];
            let mine: Vec<_> = segs.iter().filter(|s| s.label == *label).collect();
            for s in &mine {
                let env: Vec<f64> = s.samples.iter().map(|v| v.abs()).collect();
                let mu = env.iter().sum::<f64>() / n as f64;
                let centred: Vec<f64> = env.iter().map(|v| v - mu).collect();
                for (m, d) in mean.iter_mut().zip(dft_mag(&centred)) {
                    *m += d / mine.len() as f64;
                }
            }
            // 10 Hz bins; search 20..300 Hz
            let bin = (2..30).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
            dominant.push(bin);
        }
        assert_eq!(dominant, vec![3, 9, 16]);
    }

    #[test]
    fn dataset_is_balanced_and_deterministic() {
        let suite = default_suite();
        let a = generate_dataset(&suite, 10, 256, FS, 5).unwrap();
        let b = generate_dataset(&suite, 10, 256, FS, 5).unwrap();
        let c = generate_dataset(&suite, 10, 256, FS, 6).unwrap();
        assert_eq!(a.len(), 40);
        for (label, _) in &suite {
            assert_eq!(a.iter().filter(|s| s.label == *label).count(), 10);
        }
        let bits = |d: &[Segment]| {
            d.iter()
                .flat_map(|s| s.samples.iter().map(|v| v.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&c));
        assert!(a.iter().all(|s| s.samples.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn noise_only_std() {
        let spec = FaultSpec {
            impact_amp: 0.0,
            noise_std: 0.3,
            ..FaultSpec::normal()
        };
        let x = generate_samples(&spec, 200_000, FS, 8).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.len() as f64).sqrt();
        assert!((std - 0.3).abs() < 0.05 * 0.3, "std {std}");
    }

    #[test]
    fn invalid_specs() {
        let ok = FaultSpec::outer_race();
        let cases = [
            FaultSpec { resonance_freq: 6000.0, ..ok.clone() },
            FaultSpec { noise_std: -1.0, ..ok.clone() },
            FaultSpec { slip_jitter: 0.3, ..ok.clone() },
            FaultSpec { impact_rate: -1.0, ..ok.clone() },
            FaultSpec { modulation: Some(1.5), ..ok.clone() },
        ];
        for c in cases {
            assert!(generate_signal(&c, 0.1, FS, 0).is_err(), "{c:?}");
        }
        assert!(generate_signal(&ok, 0.0, FS, 0).is_err());
        assert!(generate_dataset(&default_suite()[..1], 1, 10, FS, 0).is_err());
    }
}
