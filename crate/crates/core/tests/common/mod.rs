//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use bearing_vit::rng::{self, Gaussian};
use bearing_vit::signal_io::{split_dataset, Segment, SplitRatios};
use bearing_vit::stft::{segment_to_image, ImageParams, TFImage};
use bearing_vit::synth::{default_suite, generate_dataset};
use bearing_vit::tensor::{Tape, Tensor, Var};
use bearing_vit::trainer::Dataset;
use bearing_vit::vit::{forward_batch, patchify_batch, ViTConfig, ViTParams};
use num_complex::Complex64;

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut g = Gaussian::new(rng::stream(seed, 1000));
    Tensor::from_fn(shape, |_| g.next_standard())
}

pub fn random_image(h: usize, w: usize, c: usize, seed: u64) -> TFImage {
    TFImage::new(h, w, c, random(&[h * w * c], seed).into_data()).unwrap()
}

/// `|analytic − fd| / max(1, |fd|)`.
pub fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / fd.abs().max(1.0)
}

/// `loss = Σ w ⊙ f(inputs)` with a fixed random weighting `w`.
fn weighted_loss(inputs: &[Tensor], f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> (Tape, Vec<Var>, Var) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars);
    let shape = tape.value(out).shape().to_vec();
    let w = tape.constant(random(&shape, 4242));
    let prod = tape.mul(out, w).unwrap();
    let loss = tape.sum(prod).unwrap();
    (tape, vars, loss)
}

/// Worst relative error between tape gradients and central differences over
/// every input coordinate.
pub fn op_gradient_error(inputs: &[Tensor], h: f64, f: &dyn Fn(&mut Tape, &[Var]) -> Var) -> f64 {
    let (tape, vars, loss) = weighted_loss(inputs, f);
    let grads = tape.backward(loss).unwrap();
    let mut worst: f64 = 0.0;
    for (idx, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[idx]);
        for j in 0..input.len() {
            let eval = |delta: f64| {
                let mut shifted = inputs.to_vec();
                shifted[idx].data_mut()[j] += delta;
                let (t, _, l) = weighted_loss(&shifted, f);
                t.value(l).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[j], fd));
        }
    }
    worst
}

pub fn gelu_derivative_error() -> f64 {
    let h = 1e-6;
    let value = |x: f64| {
        let mut t = Tape::new();
        let v = t.constant(Tensor::scalar(x));
        let y = t.gelu(v).unwrap();
        t.value(y).item()
    };
    (0..100)
        .map(|i| {
            let x = -5.0 + 10.0 * i as f64 / 99.0;
            let mut tape = Tape::new();
            let v = tape.leaf(Tensor::scalar(x));
            let y = tape.gelu(v).unwrap();
            let g = tape.backward(y).unwrap().get(v).item();
            rel_err(g, (value(x + h) - value(x - h)) / (2.0 * h))
        })
        .fold(0.0, f64::max)
}

/// Per-op checks: `(name, worst relative error)`.
pub fn per_op_errors() -> Vec<(&'static str, f64)> {
    let labels = [2usize, 0, 3];
    vec![
        (
            "matmul",
            op_gradient_error(&[random(&[3, 4], 1), random(&[4, 5], 2)], 1e-6, &|t, v| {
                t.matmul(v[0], v[1]).unwrap()
            }),
        ),
        (
            "softmax",
            op_gradient_error(&[random(&[3, 5], 3)], 1e-6, &|t, v| t.softmax(v[0], 1).unwrap()),
        ),
        (
            "layer_norm",
            op_gradient_error(&[random(&[4, 6], 4), random(&[6], 5), random(&[6], 6)], 1e-6, &|t, v| {
                t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
            }),
        ),
        ("gelu", gelu_derivative_error()),
        (
            "cross_entropy",
            op_gradient_error(&[random(&[3, 4], 7)], 1e-6, &|t, v| t.cross_entropy(v[0], &labels).unwrap()),
        ),
        (
            "attention",
            op_gradient_error(&[random(&[8, 4], 16), random(&[8, 4], 17), random(&[8, 4], 18)], 1e-6, &|t, v| {
                t.attention(v[0], v[1], v[2], 4, 2).unwrap()
            }),
        ),
    ]
}

pub fn tiny_config() -> ViTConfig {
    ViTConfig {
        height: 8,
        width: 8,
        channels: 1,
        patch: 4,
        dim: 8,
        depth: 2,
        heads: 2,
        mlp_dim: 16,
        num_classes: 3,
        seed: 5,
        dropout: 0.0,
    }
}

fn model_loss(cfg: &ViTConfig, params: &ViTParams, images: &[&TFImage], labels: &[usize]) -> (Tape, ViTParams<Var>, Var) {
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let x = tape.constant(patchify_batch(cfg, images).unwrap());
    let out = forward_batch(&mut tape, cfg, &p, x, None).unwrap();
    let loss = tape.cross_entropy(out.logits, labels).unwrap();
    (tape, p, loss)
}

/// Worst relative error over every scalar parameter of the model for a
/// two-image batch, with its location.
pub fn full_model_gradient_error(cfg: &ViTConfig, params: &ViTParams, h: f64) -> (f64, String) {
    let imgs: Vec<TFImage> = (0..2).map(|s| random_image(cfg.height, cfg.width, cfg.channels, 50 + s)).collect();
    let refs: Vec<&TFImage> = imgs.iter().collect();
    let labels = [0, cfg.num_classes - 1];
    let (tape, vars, loss) = model_loss(cfg, params, &refs, &labels);
    let grads = tape.backward(loss).unwrap();
    let names = ViTParams::<Tensor>::names(cfg.depth);
    let mut worst = (0.0, String::new());
    for (pi, var) in vars.values().into_iter().enumerate() {
        let analytic = grads.get(*var);
        for j in 0..analytic.len() {
            let eval = |delta: f64| {
                let mut p = params.clone();
                p.values_mut()[pi].data_mut()[j] += delta;
                let (t, _, l) = model_loss(cfg, &p, &refs, &labels);
                t.value(l).item()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let e = rel_err(analytic.data()[j], fd);
            if e > worst.0 {
                worst = (e, format!("{}[{j}]", names[pi]));
            }
        }
    }
    worst
}

/// Scales the default initialization up and adds noise so that every
/// parameter (including gains and biases) has a non-trivial gradient.
pub fn perturbed_params(cfg: &ViTConfig) -> ViTParams {
    let mut params = bearing_vit::vit::init_params(cfg, 3).unwrap();
    for (i, t) in params.values_mut().into_iter().enumerate() {
        let noise = random(t.shape(), 100 + i as u64);
        t.data_mut().iter_mut().zip(noise.data()).for_each(|(v, n)| *v = 20.0 * *v + 0.1 * n);
    }
    params
}

pub fn naive_dft(x: &[Complex64]) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(m, v)| {
                    let ang = -2.0 * std::f64::consts::PI * ((k * m) % n) as f64 / n as f64;
                    v * Complex64::new(ang.cos(), ang.sin())
                })
                .sum()
        })
        .collect()
}

pub struct SynthSplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

pub fn to_dataset(segs: &[Segment], params: &ImageParams) -> Dataset {
    let images = segs.iter().map(|s| segment_to_image(&s.samples, 12_000.0, params).unwrap()).collect();
    Dataset::new(images, segs.iter().map(|s| s.label.id()).collect()).unwrap()
}

/// The default four-class synthetic suite, split and converted with
/// default parameters.
pub fn synthetic_splits(segments_per_class: usize, seed: u64) -> SynthSplits {
    let segs = generate_dataset(&default_suite(), segments_per_class, 2048, 12_000.0, seed).unwrap();
    let split = split_dataset(segs, SplitRatios::default(), seed).unwrap();
    let p = ImageParams::default();
    SynthSplits {
        train: to_dataset(&split.train, &p),
        val: to_dataset(&split.val, &p),
        test: to_dataset(&split.test, &p),
    }
}
