//! Vision transformer classifier over time-frequency images.
//!
//! An image is cut into `N = H·W/P²` non-overlapping `P×P` patches in
//! row-major grid order. Each flattened patch is projected by `E`, a learnable
//! class token is placed in front (row 0), and learnable 1-D position
//! embeddings are added, giving `N + 1` tokens. `L` pre-LN encoder blocks
//!
//! ```text
//! z' = z + MSA(LN₁(z))
//! z  = z' + MLP(LN₂(z'))
//! ```
//!
//! follow, and the logits are `LN(z_L[0])·W_head + b_head`.
//!
//! Batches are stacked along rows, so a batch of `B` images is a single
//! `[B·(N+1) × D]` matrix and every projection is one matrix product.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::rng::{self, streams, Gaussian};
use crate::stft::TFImage;
use crate::tensor::{Tape, Tensor, TensorError, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;
/// Truncation of the initial weight distribution, in standard deviations.
pub const INIT_TRUNCATION: f64 = 3.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum VitError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{height}x{width} image is not divisible into {patch}x{patch} patches")]
    IndivisibleImage { height: usize, width: usize, patch: usize },
    #[error("model expects {expected:?} images (HxWxC), got {got:?}")]
    ConfigMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViTConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_dim: usize,
    pub num_classes: usize,
    pub seed: u64,
    /// Drop probability applied to each residual branch while training.
    pub dropout: f64,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self {
            height: 56,
            width: 56,
            channels: 1,
            patch: 8,
            dim: 64,
            depth: 4,
            heads: 4,
            mlp_dim: 128,
            num_classes: 14,
            seed: 0,
            dropout: 0.0,
        }
    }
}

impl ViTConfig {
    pub fn validate(&self) -> Result<(), VitError> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("patch", self.patch),
            ("dim", self.dim),
            ("heads", self.heads),
            ("mlp_dim", self.mlp_dim),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(VitError::InvalidConfig(format!("{name} must be >= 1")));
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(VitError::IndivisibleImage {
                height: self.height,
                width: self.width,
                patch: self.patch,
            });
        }
        if self.dim % self.heads != 0 {
            return Err(VitError::InvalidConfig(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(VitError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Number of patches `N`.
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    /// Encoder sequence length `N + 1`.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn image_dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn to_text(&self) -> String {
        format!(
            "height = {}\nwidth = {}\nchannels = {}\npatch = {}\ndim = {}\ndepth = {}\nheads = {}\n\
             mlp_dim = {}\nnum_classes = {}\nseed = {}\ndropout = {}\n",
            self.height,
            self.width,
            self.channels,
            self.patch,
            self.dim,
            self.depth,
            self.heads,
            self.mlp_dim,
            self.num_classes,
            self.seed,
            self.dropout
        )
    }

    /// Parses `key = value` lines. Every key must be present exactly once.
    pub fn from_text(text: &str) -> Result<Self, VitError> {
        let bad = |m: String| VitError::InvalidConfig(m);
        let mut cfg = ViTConfig::default();
        let mut seen = std::collections::HashSet::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected 'key = value', got '{line}'")))?;
            let (k, v) = (k.trim(), v.trim());
            let uint = || v.parse::<usize>().map_err(|_| bad(format!("{k}: '{v}' is not a count")));
            match k {
                "height" => cfg.height = uint()?,
                "width" => cfg.width = uint()?,
                "channels" => cfg.channels = uint()?,
                "patch" => cfg.patch = uint()?,
                "dim" => cfg.dim = uint()?,
                "depth" => cfg.depth = uint()?,
                "heads" => cfg.heads = uint()?,
                "mlp_dim" => cfg.mlp_dim = uint()?,
                "num_classes" => cfg.num_classes = uint()?,
                "seed" => cfg.seed = v.parse().map_err(|_| bad(format!("seed: '{v}'")))?,
                "dropout" => cfg.dropout = v.parse().map_err(|_| bad(format!("dropout: '{v}'")))?,
                other => return Err(bad(format!("unknown key '{other}'"))),
            }
            if !seen.insert(k.to_string()) {
                return Err(bad(format!("duplicate key '{k}'")));
            }
        }
        if seen.len() != 11 {
            return Err(bad(format!("expected 11 keys, found {}", seen.len())));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameters of one encoder block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gamma: T,
    pub ln1_beta: T,
    pub w_q: T,
    pub w_k: T,
    pub w_v: T,
    pub w_o: T,
    pub ln2_gamma: T,
    pub ln2_beta: T,
    pub w_mlp1: T,
    pub b_mlp1: T,
    pub w_mlp2: T,
    pub b_mlp2: T,
}

/// All learnable quantities, generic over the slot type so the same layout
/// serves tensors, tape handles and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTParams<T = Tensor> {
    pub patch_embed: T,
    pub pos_embed: T,
    pub class_token: T,
    pub layers: Vec<LayerParams<T>>,
    pub final_gamma: T,
    pub final_beta: T,
    pub head_w: T,
    pub head_b: T,
}

const LAYER_FIELDS: [&str; 12] = [
    "ln1.gamma", "ln1.beta", "attn.w_q", "attn.w_k", "attn.w_v", "attn.w_o", "ln2.gamma",
    "ln2.beta", "mlp.w1", "mlp.b1", "mlp.w2", "mlp.b2",
];

impl<T> ViTParams<T> {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Canonical tensor names, in [`ViTParams::values`] order.
    pub fn names(depth: usize) -> Vec<String> {
        let mut out: Vec<String> = ["embed.patch", "embed.pos", "embed.class_token"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for l in 0..depth {
            out.extend(LAYER_FIELDS.iter().map(|f| format!("layer{l}.{f}")));
        }
        out.extend(["final_ln.gamma", "final_ln.beta", "head.w", "head.b"].map(String::from));
        out
    }

    pub fn values(&self) -> Vec<&T> {
        let mut out = vec![&self.patch_embed, &self.pos_embed, &self.class_token];
        for l in &self.layers {
            out.extend([
                &l.ln1_gamma, &l.ln1_beta, &l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.ln2_gamma,
                &l.ln2_beta, &l.w_mlp1, &l.b_mlp1, &l.w_mlp2, &l.b_mlp2,
            ]);
        }
        out.extend([&self.final_gamma, &self.final_beta, &self.head_w, &self.head_b]);
        out
    }

    pub fn values_mut(&mut self) -> Vec<&mut T> {
        let mut out = vec![&mut self.patch_embed, &mut self.pos_embed, &mut self.class_token];
        for l in &mut self.layers {
            out.extend([
                &mut l.ln1_gamma, &mut l.ln1_beta, &mut l.w_q, &mut l.w_k, &mut l.w_v,
                &mut l.w_o, &mut l.ln2_gamma, &mut l.ln2_beta, &mut l.w_mlp1,
                &mut l.b_mlp1, &mut l.w_mlp2, &mut l.b_mlp2,
            ]);
        }
        out.extend([
            &mut self.final_gamma,
            &mut self.final_beta,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }

    /// Rebuilds a parameter set from values in canonical order.
    ///
    /// Panics if `values` yields fewer than the required count.
    pub fn from_values(depth: usize, values: impl IntoIterator<Item = T>) -> Self {
        let mut it = values.into_iter();
        let mut n = move || it.next().expect("parameter count matches layout");
        ViTParams {
            patch_embed: n(),
            pos_embed: n(),
            class_token: n(),
            layers: (0..depth)
                .map(|_| LayerParams {
                    ln1_gamma: n(),
                    ln1_beta: n(),
                    w_q: n(),
                    w_k: n(),
                    w_v: n(),
                    w_o: n(),
                    ln2_gamma: n(),
                    ln2_beta: n(),
                    w_mlp1: n(),
                    b_mlp1: n(),
                    w_mlp2: n(),
                    b_mlp2: n(),
                })
                .collect(),
            final_gamma: n(),
            final_beta: n(),
            head_w: n(),
            head_b: n(),
        }
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> ViTParams<U> {
        ViTParams::from_values(self.depth(), self.values().into_iter().map(f))
    }

    pub fn count(depth: usize) -> usize {
        3 + 12 * depth + 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
}

fn layout(cfg: &ViTConfig) -> Vec<(Vec<usize>, Init)> {
    use Init::*;
    let (d, m) = (cfg.dim, cfg.mlp_dim);
    let mut out = vec![
        (vec![cfg.patch_len(), d], Normal),
        (vec![cfg.seq_len(), d], Normal),
        (vec![1, d], Normal),
    ];
    for _ in 0..cfg.depth {
        out.extend([
            (vec![d], Ones),
            (vec![d], Zeros),
            (vec![d, d], Normal),
            (vec![d, d], Normal),
            (vec![d, d], Normal),
            (vec![d, d], Normal),
            (vec![d], Ones),
            (vec![d], Zeros),
            (vec![d, m], Normal),
            (vec![m], Zeros),
            (vec![m, d], Normal),
            (vec![d], Zeros),
        ]);
    }
    out.extend([
        (vec![d], Ones),
        (vec![d], Zeros),
        (vec![d, cfg.num_classes], Normal),
        (vec![cfg.num_classes], Zeros),
    ]);
    out
}

impl ViTParams<Tensor> {
    /// Shapes required by `cfg`, in canonical order.
    pub fn shapes(cfg: &ViTConfig) -> Vec<Vec<usize>> {
        layout(cfg).into_iter().map(|(s, _)| s).collect()
    }

    pub fn zeros(cfg: &ViTConfig) -> Self {
        Self::from_values(cfg.depth, Self::shapes(cfg).iter().map(|s| Tensor::zeros(s)))
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        Self::names(self.depth())
            .into_iter()
            .zip(self.values().into_iter().cloned())
            .collect()
    }

    /// Inverse of [`ViTParams::named`]; names and shapes must match `cfg`
    /// exactly and in order.
    pub fn from_named(cfg: &ViTConfig, named: Vec<(String, Tensor)>) -> Result<Self, VitError> {
        let names = Self::names(cfg.depth);
        let shapes = Self::shapes(cfg);
        if named.len() != names.len() {
            return Err(VitError::MalformedCheckpoint(format!(
                "expected {} tensors, found {}",
                names.len(),
                named.len()
            )));
        }
        for ((want, shape), (got, t)) in names.iter().zip(&shapes).zip(&named) {
            if want != got || t.shape() != shape.as_slice() {
                return Err(VitError::MalformedCheckpoint(format!(
                    "expected {want} {shape:?}, found {got} {:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self::from_values(cfg.depth, named.into_iter().map(|(_, t)| t)))
    }

    pub fn num_scalars(&self) -> usize {
        self.values().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|t| t.is_finite())
    }

    /// Registers every tensor as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ViTParams<Var> {
        self.map(|t| tape.leaf(t.clone()))
    }
}

/// Truncated-normal weights (std [`INIT_STD`], cut at
/// [`INIT_TRUNCATION`]σ), zero biases and shifts, unit gains. Tensors draw
/// from one stream in canonical order.
pub fn init_params(cfg: &ViTConfig, seed: u64) -> Result<ViTParams, VitError> {
    cfg.validate()?;
    let mut g = Gaussian::new(rng::stream(seed, streams::INIT));
    let tensors = layout(cfg).into_iter().map(|(shape, init)| match init {
        Init::Zeros => Tensor::zeros(&shape),
        Init::Ones => Tensor::ones(&shape),
        Init::Normal => Tensor::from_fn(&shape, |_| g.truncated(INIT_STD, INIT_TRUNCATION)),
    });
    Ok(ViTParams::from_values(cfg.depth, tensors.collect::<Vec<_>>()))
}

/// `[N × P²·C]`: row `gi·(W/P) + gj` is the row-major flattening of the
/// `P×P×C` block at patch-grid position `(gi, gj)`.
pub fn patchify(image: &TFImage, patch: usize) -> Result<Tensor, VitError> {
    let (h, w, c) = image.dims();
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(VitError::IndivisibleImage { height: h, width: w, patch });
    }
    let (gh, gw) = (h / patch, w / patch);
    let plen = patch * patch * c;
    let mut data = Vec::with_capacity(gh * gw * plen);
    for gi in 0..gh {
        for gj in 0..gw {
            for r in 0..patch {
                let start = ((gi * patch + r) * w + gj * patch) * c;
                data.extend_from_slice(&image.pixels[start..start + patch * c]);
            }
        }
    }
    Ok(Tensor::new(vec![gh * gw, plen], data)?)
}

pub fn unpatchify(patches: &Tensor, height: usize, width: usize, channels: usize, patch: usize) -> Result<TFImage, VitError> {
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        return Err(VitError::IndivisibleImage { height, width, patch });
    }
    let (gh, gw) = (height / patch, width / patch);
    let plen = patch * patch * channels;
    if patches.shape() != [gh * gw, plen] {
        return Err(VitError::InvalidConfig(format!(
            "patch tensor {:?} does not fit {height}x{width}x{channels}",
            patches.shape()
        )));
    }
    let mut pixels = vec![0.0; height * width * channels];
    for (n, row) in patches.data().chunks(plen).enumerate() {
        let (gi, gj) = (n / gw, n % gw);
        for r in 0..patch {
            let start = ((gi * patch + r) * width + gj * patch) * channels;
            pixels[start..start + patch * channels]
                .copy_from_slice(&row[r * patch * channels..(r + 1) * patch * channels]);
        }
    }
    TFImage::new(height, width, channels, pixels).map_err(|e| VitError::InvalidConfig(e.to_string()))
}

/// Stacks the patches of a batch into `[B·N × P²·C]`.
pub fn patchify_batch(cfg: &ViTConfig, images: &[&TFImage]) -> Result<Tensor, VitError> {
    let mut data = Vec::with_capacity(images.len() * cfg.num_patches() * cfg.patch_len());
    for img in images {
        if img.dims() != cfg.image_dims() {
            return Err(VitError::ConfigMismatch {
                expected: cfg.image_dims(),
                got: img.dims(),
            });
        }
        data.extend(patchify(img, cfg.patch)?.into_data());
    }
    Ok(Tensor::new(vec![images.len() * cfg.num_patches(), cfg.patch_len()], data)?)
}

/// `z₀ = [x_class; patches·E] + E_pos` for each image of a stacked batch.
pub fn embed(tape: &mut Tape, patches: Var, p: &ViTParams<Var>, num_patches: usize) -> Result<Var, TensorError> {
    let x = tape.matmul(patches, p.patch_embed)?;
    let z = tape.prepend_token(x, p.class_token, num_patches)?;
    tape.add_tiled(z, p.pos_embed)
}

/// Output of one encoder block plus its attention node, whose recorded
/// probabilities are available through [`Tape::attention_probs`].
pub struct BlockOutput {
    pub z: Var,
    pub attention: Var,
}

/// One pre-LN block over stacked sequences of length `seq`.
pub fn encoder_block(
    tape: &mut Tape,
    z: Var,
    layer: &LayerParams<Var>,
    seq: usize,
    heads: usize,
    mut dropout: Option<(&mut ChaCha8Rng, f64)>,
) -> Result<BlockOutput, TensorError> {
    let h = tape.layer_norm(z, layer.ln1_gamma, layer.ln1_beta, LN_EPS)?;
    let q = tape.matmul(h, layer.w_q)?;
    let k = tape.matmul(h, layer.w_k)?;
    let v = tape.matmul(h, layer.w_v)?;
    let attention = tape.attention(q, k, v, seq, heads)?;
    let msa = tape.matmul(attention, layer.w_o)?;
    let msa = apply_dropout(tape, msa, dropout.as_mut().map(|(r, p)| (&mut **r, *p)))?;
    let z = tape.add(z, msa)?;

    let h = tape.layer_norm(z, layer.ln2_gamma, layer.ln2_beta, LN_EPS)?;
    let m = tape.matmul(h, layer.w_mlp1)?;
    let m = tape.add_tiled(m, layer.b_mlp1)?;
    let m = tape.gelu(m)?;
    let m = tape.matmul(m, layer.w_mlp2)?;
    let m = tape.add_tiled(m, layer.b_mlp2)?;
    let m = apply_dropout(tape, m, dropout.as_mut().map(|(r, p)| (&mut **r, *p)))?;
    let z = tape.add(z, m)?;
    Ok(BlockOutput { z, attention })
}

/// Inverted dropout: kept entries are scaled by `1/(1−p)`.
fn apply_dropout(tape: &mut Tape, x: Var, dropout: Option<(&mut ChaCha8Rng, f64)>) -> Result<Var, TensorError> {
    match dropout {
        Some((rng, p)) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let shape = tape.value(x).shape().to_vec();
            let mask = Tensor::from_fn(&shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep });
            let mask = tape.constant(mask);
            tape.mul(x, mask)
        }
        _ => Ok(x),
    }
}

pub struct ForwardOutput {
    /// `[B × K]`.
    pub logits: Var,
    /// One attention node per encoder block.
    pub attention: Vec<Var>,
}

/// Records the full model on `tape` for a stacked batch of patches
/// (`[B·N × P²·C]`). Dropout is active only when an RNG is supplied.
pub fn forward_batch(
    tape: &mut Tape,
    cfg: &ViTConfig,
    params: &ViTParams<Var>,
    patches: Var,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<ForwardOutput, TensorError> {
    let n = cfg.num_patches();
    let seq = cfg.seq_len();
    let rows = tape.value(patches).shape().first().copied().unwrap_or(0);
    if rows == 0 || rows % n != 0 {
        return Err(TensorError::InvalidArgument(format!(
            "{rows} patch rows is not a positive multiple of {n}"
        )));
    }
    let batch = rows / n;
    let mut z = embed(tape, patches, params, n)?;
    let mut attention = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let drop = dropout_rng.as_mut().map(|r| (&mut **r, cfg.dropout));
        let out = encoder_block(tape, z, layer, seq, cfg.heads, drop)?;
        z = out.z;
        attention.push(out.attention);
    }
    let cls_rows: Vec<usize> = (0..batch).map(|b| b * seq).collect();
    let cls = tape.gather_rows(z, &cls_rows)?;
    let y = tape.layer_norm(cls, params.final_gamma, params.final_beta, LN_EPS)?;
    let logits = tape.matmul(y, params.head_w)?;
    let logits = tape.add_tiled(logits, params.head_b)?;
    Ok(ForwardOutput { logits, attention })
}

/// A configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ViTModel {
    pub config: ViTConfig,
    pub params: ViTParams,
}

impl ViTModel {
    pub fn new(config: ViTConfig) -> Result<Self, VitError> {
        let params = init_params(&config, config.seed)?;
        Ok(Self { config, params })
    }

    /// Logits `[B × K]` for a batch, without dropout.
    pub fn logits(&self, images: &[&TFImage]) -> Result<Tensor, VitError> {
        let patches = patchify_batch(&self.config, images)?;
        let mut tape = Tape::new();
        let p = self.params.map(|t| tape.constant(t.clone()));
        let x = tape.constant(patches);
        let out = forward_batch(&mut tape, &self.config, &p, x, None)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Logits of a single image.
    pub fn forward(&self, image: &TFImage) -> Result<Vec<f64>, VitError> {
        Ok(self.logits(&[image])?.into_data())
    }
}

/// Row-wise softmax of a `[B × K]` logit matrix.
pub fn softmax_rows(logits: &Tensor) -> Vec<Vec<f64>> {
    let k = logits.last_dim();
    logits
        .data()
        .chunks(k.max(1))
        .map(|row| {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        })
        .collect()
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
