//! Central finite-difference checks of every differentiable operation and of
//! the whole model.

mod common;

use bearing_vit::tensor::{Tape, Tensor, Var};
use common::*;

fn check(name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Tape, &[Var]) -> Var) {
    let e = op_gradient_error(&inputs, 1e-6, f);
    assert!(e < 1e-5, "{name}: max relative error {e:e}");
}

#[test]
fn per_op_gradients_within_tolerance() {
    for (name, e) in per_op_errors() {
        let tol = if name == "layer_norm" { 1e-4 } else if name == "gelu" { 1e-6 } else { 1e-5 };
        assert!(e < tol, "{name}: max relative error {e:e} >= {tol:e}");
    }
}

#[test]
fn softmax_along_leading_axis() {
    check("softmax axis 0", vec![random(&[3, 5], 30)], &|t, v| t.softmax(v[0], 0).unwrap());
}

#[test]
fn cross_entropy_is_softmax_minus_onehot() {
    let labels = [2usize, 0, 3];
    let logits = random(&[3, 4], 8);
    let mut tape = Tape::new();
    let v = tape.leaf(logits.clone());
    let l = tape.cross_entropy(v, &labels).unwrap();
    let g = tape.backward(l).unwrap().get(v);
    for (r, &lab) in labels.iter().enumerate() {
        let row = &logits.data()[r * 4..(r + 1) * 4];
        let s: f64 = row.iter().map(|x| x.exp()).sum();
        for j in 0..4 {
            let want = (row[j].exp() / s - f64::from(j == lab)) / 3.0;
            assert!((g.data()[r * 4 + j] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn structural_op_gradients() {
    check("add_tiled", vec![random(&[6, 3], 9), random(&[2, 3], 10)], &|t, v| {
        t.add_tiled(v[0], v[1]).unwrap()
    });
    check("add", vec![random(&[2, 3], 31), random(&[2, 3], 32)], &|t, v| t.add(v[0], v[1]).unwrap());
    check("transpose", vec![random(&[2, 5], 11)], &|t, v| t.transpose(v[0]).unwrap());
    check("prepend_token", vec![random(&[6, 3], 12), random(&[1, 3], 13)], &|t, v| {
        t.prepend_token(v[0], v[1], 3).unwrap()
    });
    check("gather_rows", vec![random(&[5, 2], 14)], &|t, v| t.gather_rows(v[0], &[4, 0, 4]).unwrap());
    check("scale_reshape", vec![random(&[2, 6], 15)], &|t, v| {
        let s = t.scale(v[0], -1.5).unwrap();
        t.reshape(s, &[3, 4]).unwrap()
    });
    check("reused input", vec![random(&[3, 3], 33)], &|t, v| {
        let a = t.matmul(v[0], v[0]).unwrap();
        t.mul(a, v[0]).unwrap()
    });
}

#[test]
fn backward_is_bitwise_repeatable() {
    let cfg = tiny_config();
    let params = perturbed_params(&cfg);
    let run = || {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let imgs = [random_image(8, 8, 1, 1), random_image(8, 8, 1, 2)];
        let x = tape.constant(bearing_vit::vit::patchify_batch(&cfg, &[&imgs[0], &imgs[1]]).unwrap());
        let out = bearing_vit::vit::forward_batch(&mut tape, &cfg, &p, x, None).unwrap();
        let loss = tape.cross_entropy(out.logits, &[0, 1]).unwrap();
        let g = tape.backward(loss).unwrap();
        p.values().into_iter().flat_map(|v| g.get(*v).into_data()).map(f64::to_bits).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn full_model_gradients() {
    let cfg = tiny_config();
    let (e, at) = full_model_gradient_error(&cfg, &perturbed_params(&cfg), 1e-5);
    assert!(e < 1e-3, "worst relative error {e:e} at {at}");
}
