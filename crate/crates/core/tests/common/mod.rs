//! Finite-difference checks shared by the gradient tests and the acceptance suite.
//!
//! Each check draws shapes and values from `seed`, computes an analytic
//! gradient with the library's backward pass and compares it with central
//! differences. The returned number is the norm-wise relative error.
#![allow(dead_code)]

use fnirs_skill::model::{build_model, ClassifierHead, ClassifierConfig, ModelConfig};
use fnirs_skill::nn::gradcheck::{numeric_grad, rel_error};
use fnirs_skill::nn::*;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Mask with at least one full-length example and random shorter ones.
pub fn random_mask(batch: usize, max_len: usize, rng: &mut ChaCha8Rng) -> Mask {
    let mut lengths: Vec<usize> = (0..batch).map(|_| rng.random_range(1..=max_len)).collect();
    lengths[0] = max_len;
    Mask::new(lengths, max_len).unwrap()
}

/// Copies `x` into a longer tensor whose extra steps hold junk.
pub fn pad_with_junk(x: &Tensor, extra: usize, r: &mut ChaCha8Rng) -> Tensor {
    let (nb, nt, c) = x.dims3().unwrap();
    let mut out = random_tensor(&[nb, nt + extra, c], r).map(|v| 1e3 * v);
    for b in 0..nb {
        for t in 0..nt {
            for ch in 0..c {
                out.data[(b * (nt + extra) + t) * c + ch] = x.data[(b * nt + t) * c + ch];
            }
        }
    }
    out
}

/// Up to `n` distinct coordinates of a vector of length `len`.
pub fn coords(len: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    sample(rng, len, n.min(len)).into_vec()
}

fn with(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor { shape: t.shape.clone(), data: data.to_vec() }
}

fn pick(v: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| v[i]).collect()
}

/// Compares analytic gradient `grad` of `f` at `x` on a coordinate sample.
fn compare(x: &[f64], grad: &[f64], rng: &mut ChaCha8Rng, f: impl FnMut(&[f64]) -> f64) -> f64 {
    let idx = coords(x.len(), 60, rng);
    rel_error(&pick(grad, &idx), &numeric_grad(x, &idx, H, f))
}

pub fn conv_causal(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let (nb, nt, ci, co, k) = (r.random_range(1..4), r.random_range(3..12), r.random_range(1..4), r.random_range(1..4), r.random_range(1..6));
    let x = random_tensor(&[nb, nt, ci], r);
    let w = random_tensor(&[k, ci, co], r);
    let b: Vec<f64> = (0..co).map(|_| r.random_range(-1.0..1.0)).collect();
    let mask = random_mask(nb, nt, r);
    let proj = random_tensor(&[nb, nt, co], r);
    let (dx, dw, db) = conv1d_causal_backward(&x, &w, &proj, &mask).unwrap();
    let ex = compare(&x.data, &dx.data, r, |v| conv1d_causal(&with(&x, v), &w, &b, &mask).unwrap().dot(&proj));
    let ew = compare(&w.data, &dw.data, r, |v| conv1d_causal(&x, &with(&w, v), &b, &mask).unwrap().dot(&proj));
    let eb = compare(&b, &db, r, |v| conv1d_causal(&x, &w, v, &mask).unwrap().dot(&proj));
    ex.max(ew).max(eb)
}

pub fn conv_transpose(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let (nb, nt, ci, co, k) = (r.random_range(1..4), r.random_range(3..12), r.random_range(1..4), r.random_range(1..4), r.random_range(1..6));
    let x = random_tensor(&[nb, nt, ci], r);
    let w = random_tensor(&[k, ci, co], r);
    let b: Vec<f64> = (0..co).map(|_| r.random_range(-1.0..1.0)).collect();
    let mask = random_mask(nb, nt, r);
    let proj = random_tensor(&[nb, nt, co], r);
    let (dx, dw, db) = conv_transpose1d_backward(&x, &w, &proj, &mask).unwrap();
    let ex = compare(&x.data, &dx.data, r, |v| conv_transpose1d(&with(&x, v), &w, &b, &mask).unwrap().dot(&proj));
    let ew = compare(&w.data, &dw.data, r, |v| conv_transpose1d(&x, &with(&w, v), &b, &mask).unwrap().dot(&proj));
    let eb = compare(&b, &db, r, |v| conv_transpose1d(&x, &w, v, &mask).unwrap().dot(&proj));
    ex.max(ew).max(eb)
}

pub fn dense_layer(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let (nb, ni, no) = (r.random_range(1..5), r.random_range(1..7), r.random_range(1..7));
    let x = random_tensor(&[nb, ni], r);
    let w = random_tensor(&[ni, no], r);
    let b: Vec<f64> = (0..no).map(|_| r.random_range(-1.0..1.0)).collect();
    let proj = random_tensor(&[nb, no], r);
    let (dx, dw, db) = dense_backward(&x, &w, &proj).unwrap();
    let ex = compare(&x.data, &dx.data, r, |v| dense(&with(&x, v), &w, &b).unwrap().dot(&proj));
    let ew = compare(&w.data, &dw.data, r, |v| dense(&x, &with(&w, v), &b).unwrap().dot(&proj));
    let eb = compare(&b, &db, r, |v| dense(&x, &w, v).unwrap().dot(&proj));
    ex.max(ew).max(eb)
}

pub fn activation(seed: u64, act: Activation) -> f64 {
    let r = &mut rng(seed);
    // Keep inputs away from the ReLU and SeLU kinks at zero.
    let x = Tensor::from_fn(&[r.random_range(2..20)], |_| {
        let v: f64 = r.random_range(0.01..3.0);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let proj = random_tensor(&x.shape, r);
    let dx = act.backward(&x, &proj);
    compare(&x.data, &dx.data, r, |v| act.forward(&with(&x, v)).dot(&proj))
}

pub fn softmax_layer(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let x = random_tensor(&[r.random_range(1..5), r.random_range(2..6)], r).map(|v| 3.0 * v);
    let proj = random_tensor(&x.shape, r);
    let p = softmax(&x).unwrap();
    let dx = softmax_backward(&p, &proj).unwrap();
    compare(&x.data, &dx.data, r, |v| softmax(&with(&x, v)).unwrap().dot(&proj))
}

pub fn pooling(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let (nb, nt, c) = (r.random_range(1..4), r.random_range(2..10), r.random_range(1..5));
    let x = random_tensor(&[nb, nt, c], r);
    let mask = random_mask(nb, nt, r);
    let proj = random_tensor(&[nb, c], r);
    let dx = global_avg_pool_masked_backward(&proj, &mask, c);
    compare(&x.data, &dx.data, r, |v| global_avg_pool_masked(&with(&x, v), &mask).unwrap().dot(&proj))
}

pub fn se_block(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let reduction = [1, 2, 4][r.random_range(0..3)];
    let c = reduction * r.random_range(1..4);
    let (nb, nt) = (r.random_range(1..4), r.random_range(2..9));
    let act = if seed % 2 == 0 { Activation::Relu } else { Activation::Gelu };
    let squeeze = if seed % 3 == 0 { Squeeze::Global } else { Squeeze::Causal };
    let mut se = SeBlock::new("se", SeShape { channels: c, reduction }, act, r).unwrap().with_squeeze(squeeze);
    for p in se.params_mut() {
        p.value.data.iter_mut().for_each(|v| *v += 0.1);
    }
    let x = random_tensor(&[nb, nt, c], r);
    let mask = random_mask(nb, nt, r);
    let proj = random_tensor(&[nb, nt, c], r);
    let (_, cache) = se.forward(&x, &mask).unwrap();
    let dx = se.backward(&x, &cache, &proj, &mask).unwrap();
    let base = se.clone();
    let mut worst = compare(&x.data, &dx.data, r, |v| base.forward(&with(&x, v), &mask).unwrap().0.dot(&proj));
    for k in 0..4 {
        let value = base.params()[k].value.clone();
        let grad = se.params()[k].grad.data.clone();
        let err = compare(&value.data, &grad, r, |v| {
            let mut probe = base.clone();
            probe.params_mut()[k].value = with(&value, v);
            probe.forward(&x, &mask).unwrap().0.dot(&proj)
        });
        worst = worst.max(err);
    }
    worst
}

pub fn mse(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let (nb, nt, c) = (r.random_range(1..4), r.random_range(2..40), r.random_range(1..4));
    let pred = random_tensor(&[nb, nt, c], r);
    let target = random_tensor(&[nb, nt, c], r);
    let mask = random_mask(nb, nt, r);
    let window = r.random_range(1..30);
    let (_, g) = masked_mse(&pred, &target, &mask, window).unwrap();
    compare(&pred.data, &g.data, r, |v| masked_mse(&with(&pred, v), &target, &mask, window).unwrap().0)
}

pub fn cross_entropy(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let nb = r.random_range(1..8);
    let logits = random_tensor(&[nb, 2], r).map(|v| 2.0 * v);
    let labels: Vec<usize> = (0..nb).map(|_| r.random_range(0..2)).collect();
    let weights = [r.random_range(0.1..1.0), r.random_range(0.1..1.0)];
    let p = softmax(&logits).unwrap();
    let g = weighted_cross_entropy_logit_grad(&p, &labels, &weights).unwrap();
    compare(&logits.data, &g.data, r, |v| {
        weighted_cross_entropy(&softmax(&with(&logits, v)).unwrap(), &labels, &weights).unwrap()
    })
}

pub fn penalty(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let w = Tensor::from_fn(&[r.random_range(1..30)], |_| {
        let v: f64 = r.random_range(0.01..2.0);
        if r.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let (l1, l2) = (r.random_range(0.0..0.5), r.random_range(0.0..0.5));
    let g = l1l2_grad(&w, l1, l2);
    compare(&w.data, &g.data, r, |v| l1l2_penalty(&[&with(&w, v)], l1, l2))
}

/// Full encoder-decoder under the masked MSE, with fixed decoder dropout masks.
pub fn encoder_decoder(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let n_ch = r.random_range(1..4);
    let cfg = ModelConfig {
        se_activation: if seed % 2 == 0 { Activation::Relu } else { Activation::Gelu },
        ..ModelConfig::with_channels(n_ch)
    };
    let mut model = build_model(&cfg, r).unwrap();
    let (nb, nt) = (2, r.random_range(12..20));
    let x = random_tensor(&[nb, nt, 2 * n_ch], r);
    let target = random_tensor(&[nb, nt, 2 * n_ch], r);
    let mask = random_mask(nb, nt, r);
    let drop = [
        Some(channel_dropout_mask(nb, cfg.encoder_filters[1], 1.0 / 6.0, r)),
        Some(channel_dropout_mask(nb, cfg.encoder_filters[0], 1.0 / 6.0, r)),
    ];
    let loss = |m: &fnirs_skill::model::EncoderDecoderModel, input: &Tensor| {
        let (y, _) = m.forward_with_masks(input, &mask, drop.clone()).unwrap();
        masked_mse(&y, &target, &mask, 25).unwrap().0
    };
    let (y, cache) = model.forward_with_masks(&x, &mask, drop.clone()).unwrap();
    let (_, dy) = masked_mse(&y, &target, &mask, 25).unwrap();
    model.zero_grad();
    let dx = model.backward(&cache, &dy).unwrap();
    let base = model.clone();
    let mut worst = compare(&x.data, &dx.data, r, |v| loss(&base, &with(&x, v)));
    let n_params = base.params().len();
    for k in 0..n_params {
        let value = base.params()[k].value.clone();
        let grad = model.params()[k].grad.data.clone();
        let idx = coords(value.len(), 8, r);
        let num = numeric_grad(&value.data, &idx, H, |v| {
            let mut probe = base.clone();
            probe.params_mut()[k].value = with(&value, v);
            loss(&probe, &x)
        });
        worst = worst.max(rel_error(&pick(&grad, &idx), &num));
    }
    worst
}

/// Classifier head under weighted cross-entropy plus the L1-L2 penalty.
pub fn classifier_head(seed: u64) -> f64 {
    let r = &mut rng(seed);
    let cfg = ClassifierConfig { hidden: r.random_range(4..16), l1: 0.0, ..ClassifierConfig::default() };
    let mut head = ClassifierHead::new(&cfg, r);
    for p in head.params_mut() {
        p.value.data.iter_mut().for_each(|v| *v += 0.05);
    }
    let nb = r.random_range(2..8);
    let ctx = random_tensor(&[nb, 24], r);
    let labels: Vec<usize> = (0..nb).map(|_| r.random_range(0..2)).collect();
    let weights = [0.3, 0.7];
    let dmask = channel_dropout_mask(nb, cfg.hidden, 0.5, r);
    let loss = |h: &ClassifierHead, c: &Tensor| {
        let (_, cache) = h.forward_with_mask(c, Some(dmask.clone())).unwrap();
        let pen: Vec<&Tensor> = h.penalised().iter().map(|p| &p.value).collect();
        weighted_cross_entropy(&cache.probs, &labels, &weights).unwrap() + l1l2_penalty(&pen, cfg.l1, cfg.l2)
    };
    let (_, cache) = head.forward_with_mask(&ctx, Some(dmask.clone())).unwrap();
    let g = weighted_cross_entropy_logit_grad(&cache.probs, &labels, &weights).unwrap();
    let dctx = head.backward(&cache, &g).unwrap();
    for p in [&mut head.w1, &mut head.w2] {
        let pg = l1l2_grad(&p.value, cfg.l1, cfg.l2);
        p.grad.add_assign(&pg);
    }
    let base = head.clone();
    let mut worst = compare(&ctx.data, &dctx.data, r, |v| loss(&base, &with(&ctx, v)));
    for k in 0..4 {
        let value = base.params()[k].value.clone();
        let grad = head.params()[k].grad.data.clone();
        worst = worst.max(compare(&value.data, &grad, r, |v| {
            let mut probe = base.clone();
            probe.params_mut()[k].value = with(&value, v);
            loss(&probe, &ctx)
        }));
    }
    worst
}

/// Every check, by name, for one seed.
pub fn all_checks(seed: u64) -> Vec<(&'static str, f64)> {
    vec![
        ("conv1d_causal", conv_causal(seed)),
        ("conv_transpose1d", conv_transpose(seed)),
        ("dense", dense_layer(seed)),
        ("selu", activation(seed, Activation::Selu)),
        ("relu", activation(seed, Activation::Relu)),
        ("gelu", activation(seed, Activation::Gelu)),
        ("sigmoid", activation(seed, Activation::Sigmoid)),
        ("softmax", softmax_layer(seed)),
        ("global_avg_pool_masked", pooling(seed)),
        ("se_block", se_block(seed)),
        ("masked_mse", mse(seed)),
        ("weighted_cross_entropy", cross_entropy(seed)),
        ("l1l2_penalty", penalty(seed)),
        ("classifier_head", classifier_head(seed)),
        ("encoder_decoder", encoder_decoder(seed)),
    ]
}
