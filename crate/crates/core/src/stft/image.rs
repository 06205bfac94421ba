use super::{Spectrogram, StftError};

/// Classifier input: `height × width × channels`, row-major with channels
/// innermost. Rows run along time (STFT frames), columns along frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct TFImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f64>,
}

impl TFImage {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self, StftError> {
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| StftError::MalformedImage("dimension product overflows".into()))?;
        if n != pixels.len() {
            return Err(StftError::MalformedImage(format!(
                "{height}x{width}x{channels} needs {n} pixels, got {}",
                pixels.len()
            )));
        }
        Ok(Self { height, width, channels, pixels })
    }

    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }
}

/// Corner-aligned bilinear resampling of a row-major `sh × sw` grid.
///
/// Output pixel `(i, j)` samples the source at `y = i·(sh−1)/(h−1)`,
/// `x = j·(sw−1)/(w−1)`; with `y0 = ⌊y⌋`, `y1 = min(y0+1, sh−1)`,
/// `fy = y − y0` (and likewise for x):
///
/// ```text
/// top    = v[y0][x0] + fx·(v[y0][x1] − v[y0][x0])
/// bottom = v[y1][x0] + fx·(v[y1][x1] − v[y1][x0])
/// out    = top + fy·(bottom − top)
/// ```
///
/// This form reproduces a constant grid exactly and is the identity when
/// the sizes match.
pub fn resize_bilinear(src: &[f64], sh: usize, sw: usize, h: usize, w: usize) -> Vec<f64> {
    let coord = |i: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out <= 1 || inp <= 1 {
            return (0, 0, 0.0);
        }
        let s = (i * (inp - 1)) as f64 / (out - 1) as f64;
        let lo = (s.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        let (y0, y1, fy) = coord(i, h, sh);
        for j in 0..w {
            let (x0, x1, fx) = coord(j, w, sw);
            let v = |y: usize, x: usize| src[y * sw + x];
            let top = v(y0, x0) + fx * (v(y0, x1) - v(y0, x0));
            let bottom = v(y1, x0) + fx * (v(y1, x1) - v(y1, x0));
            out.push(top + fy * (bottom - top));
        }
    }
    out
}

/// Shifts to zero mean and scales to unit population std in place. A
/// constant input becomes all zeros.
pub fn standardize(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if values.is_empty() || lo == hi || !(std.is_finite() && std > 0.0) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    for v in values.iter_mut() {
        *v = (*v - mean) / std;
    }
}

/// `log(mags + log_eps)` → bilinear resize to `h × w` → standardization.
pub fn to_image(spec: &Spectrogram, h: usize, w: usize, log_eps: f64) -> Result<TFImage, StftError> {
    if spec.frames < 2 || spec.bins < 2 {
        return Err(StftError::DegenerateSpectrogram {
            frames: spec.frames,
            bins: spec.bins,
        });
    }
    if h < 2 || w < 2 {
        return Err(StftError::InvalidParams(format!("image size {h}x{w} must be at least 2x2")));
    }
    if !(log_eps.is_finite() && log_eps > 0.0) {
        return Err(StftError::InvalidParams(format!("log_eps {log_eps} must be positive")));
    }
    let logged: Vec<f64> = spec.mags.iter().map(|m| (m + log_eps).ln()).collect();
    let mut pixels = resize_bilinear(&logged, spec.frames, spec.bins, h, w);
    standardize(&mut pixels);
    TFImage::new(h, w, 1, pixels)
}

/// `H, W, C` as u32 LE followed by row-major f64 LE pixels.
pub fn encode_tfimage(img: &TFImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + img.pixels.len() * 8);
    for d in [img.height, img.width, img.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for p in &img.pixels {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub fn decode_tfimage(bytes: &[u8]) -> Result<TFImage, StftError> {
    if bytes.len() < 12 {
        return Err(StftError::MalformedImage("shorter than the 12-byte header".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[i * 4..i * 4 + 4].try_into().expect("4")) as usize;
    let (h, w, c) = (dim(0), dim(1), dim(2));
    let n = h
        .checked_mul(w)
        .and_then(|v| v.checked_mul(c))
        .filter(|n| n.checked_mul(8).is_some())
        .ok_or_else(|| StftError::MalformedImage("dimension product overflows".into()))?;
    let body = &bytes[12..];
    if body.len() != n * 8 {
        return Err(StftError::MalformedImage(format!(
            "{h}x{w}x{c} needs {} payload bytes, found {}",
            n * 8,
            body.len()
        )));
    }
    let pixels: Vec<f64> = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8")))
        .collect();
    if pixels.iter().any(|p| !p.is_finite()) {
        return Err(StftError::MalformedImage("non-finite pixel".into()));
    }
    TFImage::new(h, w, c, pixels)
}

/// Binary greyscale PGM (P5).
pub fn encode_pgm(width: usize, height: usize, gray: &[u8]) -> Vec<u8> {
    debug_assert_eq!(gray.len(), width * height);
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(gray);
    out
}

/// Min–max maps channel 0 to 0..=255.
pub fn tfimage_to_pgm(img: &TFImage) -> Vec<u8> {
    let vals: Vec<f64> = (0..img.height * img.width).map(|i| img.pixels[i * img.channels]).collect();
    let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let gray: Vec<u8> = vals
        .iter()
        .map(|v| if hi > lo { ((v - lo) / (hi - lo) * 255.0).round() as u8 } else { 0 })
        .collect();
    encode_pgm(img.width, img.height, &gray)
}
