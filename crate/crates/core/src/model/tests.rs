use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::apam::row_sum_error;
use super::*;
use crate::data::{bicubic, synth_stereo, SynthConfig};
use crate::tensor::{Graph, Tensor};
use crate::train::init::xavier_params;

fn small_model(channels: usize, scale: usize, seed: u64) -> Model<f64> {
    let mut m = Model::<f64>::new(ModelConfig {
        channels,
        scale,
        ..ModelConfig::default()
    });
    xavier_params(&mut m.params, &mut ChaCha8Rng::seed_from_u64(seed));
    m
}

fn pair(h: usize, w: usize, seed: u64) -> (Tensor<f32>, Tensor<f32>) {
    let cfg = SynthConfig {
        height: h * 2,
        width: w * 2,
        disparity: (2.0, 4.0),
        ..SynthConfig::default()
    };
    let s = synth_stereo(seed, &cfg).unwrap();
    (s.lr_left, s.lr_right)
}

fn tie_query_key(m: &mut Model<f64>) {
    let (qw, kw) = (m.arch.apam.query.weight, m.arch.apam.key.weight);
    let (qb, kb) = (m.arch.apam.query.bias, m.arch.apam.key.bias);
    let w = m.params.get(kw).clone();
    let b = m.params.get(kb).clone();
    m.params.set(qw, w).unwrap();
    m.params.set(qb, b).unwrap();
}

#[test]
fn forward_full_shapes_and_normalisation() {
    let m = small_model(4, 2, 1);
    let (l, r) = pair(6, 10, 2);
    let mut g = Graph::new();
    let p = m.params.bind(&mut g);
    let x = m.inputs(&mut g, &l, &r).unwrap();
    let out = m.arch.forward_full(&mut g, &p, &x, true).unwrap();
    assert_eq!(g.shape(out.sr_left), &[1, 1, 12, 20]);
    assert_eq!(g.shape(out.sr_right), &[1, 1, 12, 20]);
    assert_eq!(g.shape(out.lr_masks.left_to_right), &[1, 6, 10, 10]);
    let sr = out.sr_masks.unwrap();
    assert_eq!(g.shape(sr.right_to_left), &[1, 12, 20, 20]);
    for v in [out.lr_masks.left_to_right, out.lr_masks.right_to_left, sr.left_to_right, sr.right_to_left] {
        assert!(row_sum_error(g.value(v)) < 1e-5);
        assert!(g.value(v).data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}

#[test]
fn zero_weights_reproduce_bicubic_exactly() {
    let m = Model::<f64>::new(ModelConfig {
        channels: 4,
        ..ModelConfig::default()
    });
    let (l, r) = pair(6, 10, 3);
    let (sl, sr) = m.super_resolve(&l, &r).unwrap();
    let bl = bicubic::upscale(&l.cast::<f64>(), 2).unwrap();
    let br = bicubic::upscale(&r.cast::<f64>(), 2).unwrap();
    assert!(sl.data().iter().zip(bl.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(sr.data().iter().zip(br.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    // features are zero so masks are uniform
    let (mlr, _) = m.lr_masks(&l, &r).unwrap();
    assert!(mlr.values().data().iter().all(|&v| (v - 0.1).abs() < 1e-15));
}

#[test]
fn constant_input_masks_are_normalised() {
    let m = small_model(4, 2, 4);
    let flat = Tensor::<f32>::full([1, 5, 7], 0.4);
    let (mlr, mrl) = m.lr_masks(&flat, &flat).unwrap();
    assert!(mlr.max_row_error() < 1e-12);
    assert!(mrl.max_row_error() < 1e-12);
}

#[test]
fn uniform_masks_from_constant_features() {
    // with zero APAM weights the query/key are their (equal) biases
    let mut m = small_model(3, 2, 5);
    for id in [m.arch.apam.query.weight, m.arch.apam.key.weight] {
        m.params.get_mut(id).data_mut().fill(0.0);
    }
    let mut g = Graph::<f64>::new();
    let p = m.params.bind_constants(&mut g);
    let f = g.constant(Tensor::full([1, 3, 2, 5], 0.3));
    let pair = m.arch.apam.masks(&mut g, &p, f, f, 0.1).unwrap();
    assert!(g.value(pair.left_to_right).data().iter().all(|&v| (v - 0.2).abs() < 1e-15));
}

#[test]
fn shared_projection_gives_symmetric_scores() {
    let mut m = small_model(4, 2, 6);
    tie_query_key(&mut m);
    let (l, _) = pair(4, 8, 7);
    let (mlr, mrl) = m.lr_masks(&l, &l).unwrap();
    // S symmetric ⇒ softmax over rows of S equals softmax over rows of Sᵀ
    assert_eq!(mlr.values(), mrl.values());
}

#[test]
fn swapping_eyes_swaps_outputs_bitwise() {
    let mut m = small_model(4, 2, 8);
    tie_query_key(&mut m);
    let (l, r) = pair(5, 9, 9);
    let mut g = Graph::new();
    let p = m.params.bind_constants(&mut g);
    let x = m.inputs(&mut g, &l, &r).unwrap();
    let a = m.arch.forward_full(&mut g, &p, &x, true).unwrap();
    let b = m.arch.forward_full(&mut g, &p, &x.swapped(), true).unwrap();
    assert_eq!(g.value(a.sr_left), g.value(b.sr_right));
    assert_eq!(g.value(a.sr_right), g.value(b.sr_left));
    assert_eq!(g.value(a.lr_masks.left_to_right), g.value(b.lr_masks.right_to_left));
    assert_eq!(g.value(a.lr_masks.right_to_left), g.value(b.lr_masks.left_to_right));
    let (sa, sb) = (a.sr_masks.unwrap(), b.sr_masks.unwrap());
    assert_eq!(g.value(sa.left_to_right), g.value(sb.right_to_left));
}

#[test]
fn reconstruction_gradient_reaches_features_and_mask() {
    let mut store = ParamStore::<f64>::default();
    let rec = apam::Reconstructor::register(&mut store, "rec", 2, 1, 2);
    xavier_params(&mut store, &mut ChaCha8Rng::seed_from_u64(10));
    let (h, w) = (4, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let own0 = Tensor::<f64>::uniform([1, 2, h, w], -1.0, 1.0, &mut rng);
    let other0 = Tensor::<f64>::uniform([1, 2, h, w], -1.0, 1.0, &mut rng);
    let logits0 = Tensor::<f64>::uniform([1, h, w, w], -1.0, 1.0, &mut rng);
    let weights = Tensor::<f64>::uniform([1, 1, 2 * h, 2 * w], -1.0, 1.0, &mut rng);
    let run = |own: &Tensor<f64>, logits: &Tensor<f64>| {
        let mut g = Graph::new();
        let p = store.bind_constants(&mut g);
        let (o, lg, oth) = (g.param(own.clone()), g.param(logits.clone()), g.constant(other0.clone()));
        let m = g.softmax_lastdim(lg).unwrap();
        let wp = warp(&mut g, m, oth).unwrap();
        let y = rec.forward(&mut g, &p, o, wp, 0.1).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2 * h, 2 * w]);
        let wv = g.constant(weights.clone());
        let prod = g.mul(y, wv).unwrap();
        let loss = g.sum(prod).unwrap();
        let grads = g.backward(loss).unwrap();
        (g.value(loss).item(), grads.get(o).unwrap().clone(), grads.get(lg).unwrap().clone())
    };
    let (_, g_own, g_logits) = run(&own0, &logits0);
    let eps = 1e-4;
    let check = |analytic: &Tensor<f64>, which: usize| {
        let mut worst: f64 = 0.0;
        for i in 0..analytic.len() {
            let (mut a, mut b) = ((own0.clone(), logits0.clone()), (own0.clone(), logits0.clone()));
            if which == 0 {
                a.0.data_mut()[i] += eps;
                b.0.data_mut()[i] -= eps;
            } else {
                a.1.data_mut()[i] += eps;
                b.1.data_mut()[i] -= eps;
            }
            let num = (run(&a.0, &a.1).0 - run(&b.0, &b.1).0) / (2.0 * eps);
            let ana = analytic.data()[i];
            worst = worst.max((num - ana).abs() / num.abs().max(ana.abs()).max(1e-6));
        }
        worst
    };
    assert!(g_logits.data().iter().any(|v| v.abs() > 1e-8));
    assert!(check(&g_own, 0) < 1e-5);
    assert!(check(&g_logits, 1) < 1e-5);
}

#[test]
fn mismatched_pair_rejected() {
    let m = small_model(2, 2, 12);
    let a = Tensor::<f32>::zeros([1, 4, 6]);
    let b = Tensor::<f32>::zeros([1, 4, 5]);
    assert!(m.super_resolve(&a, &b).is_err());
    let rgb = Tensor::<f32>::zeros([3, 4, 6]);
    assert!(m.super_resolve(&rgb, &rgb).is_err());
}
