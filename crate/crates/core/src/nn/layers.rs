//! Dense, softmax, masked pooling, squeeze-excitation and channel dropout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::activation::{sigmoid, Activation};
use super::tensor::{Mask, Parameter, Tensor};
use crate::error::{Error, Result};

/// `y = x W + b` for `x: (batch, n_in)`, `W: (n_in, n_out)`.
pub fn dense(x: &Tensor, w: &Tensor, b: &[f64]) -> Result<Tensor> {
    let (nb, ni) = x.dims2()?;
    let (wi, no) = w.dims2()?;
    if wi != ni || b.len() != no {
        return Err(Error::Shape(format!("dense: x {:?}, w {:?}, b {}", x.shape, w.shape, b.len())));
    }
    let mut y = Tensor::zeros(&[nb, no]);
    for r in 0..nb {
        let out = &mut y.data[r * no..(r + 1) * no];
        out.copy_from_slice(b);
        for i in 0..ni {
            let xv = x.data[r * ni + i];
            for (o, wv) in out.iter_mut().zip(&w.data[i * no..(i + 1) * no]) {
                *o += xv * wv;
            }
        }
    }
    Ok(y)
}

pub fn dense_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (nb, ni) = x.dims2()?;
    let (_, no) = w.dims2()?;
    let mut dx = Tensor::zeros(&x.shape);
    let mut dw = Tensor::zeros(&w.shape);
    let mut db = vec![0.0; no];
    for r in 0..nb {
        let g = &dy.data[r * no..(r + 1) * no];
        for (d, gv) in db.iter_mut().zip(g) {
            *d += gv;
        }
        for i in 0..ni {
            let xv = x.data[r * ni + i];
            let wrow = &w.data[i * no..(i + 1) * no];
            let dwrow = &mut dw.data[i * no..(i + 1) * no];
            let mut acc = 0.0;
            for o in 0..no {
                acc += wrow[o] * g[o];
                dwrow[o] += xv * g[o];
            }
            dx.data[r * ni + i] = acc;
        }
    }
    Ok((dx, dw, db))
}

/// Row-wise softmax, stabilised by subtracting the row maximum.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    let (nb, n) = x.dims2()?;
    let mut y = x.clone();
    for r in 0..nb {
        let row = &mut y.data[r * n..(r + 1) * n];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Ok(y)
}

/// Backward through softmax given its output `p`.
pub fn softmax_backward(p: &Tensor, dp: &Tensor) -> Result<Tensor> {
    let (nb, n) = p.dims2()?;
    let mut dx = Tensor::zeros(&p.shape);
    for r in 0..nb {
        let pr = &p.data[r * n..(r + 1) * n];
        let gr = &dp.data[r * n..(r + 1) * n];
        let s: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for k in 0..n {
            dx.data[r * n + k] = pr[k] * (gr[k] - s);
        }
    }
    Ok(dx)
}

/// Mean over each example's valid steps: `(batch, time, c) -> (batch, c)`.
pub fn global_avg_pool_masked(x: &Tensor, mask: &Mask) -> Result<Tensor> {
    let (nb, nt, c) = x.dims3()?;
    if mask.lengths.len() != nb || mask.max_len != nt {
        return Err(Error::Shape("pool: mask does not match input".into()));
    }
    let mut y = Tensor::zeros(&[nb, c]);
    for b in 0..nb {
        let len = mask.lengths[b];
        if len == 0 {
            return Err(Error::InvalidInput(format!("example {b} has no valid steps")));
        }
        let out = &mut y.data[b * c..(b + 1) * c];
        for t in 0..len {
            for (o, v) in out.iter_mut().zip(&x.data[(b * nt + t) * c..(b * nt + t + 1) * c]) {
                *o += v;
            }
        }
        for o in out.iter_mut() {
            *o /= len as f64;
        }
    }
    Ok(y)
}

pub fn global_avg_pool_masked_backward(dy: &Tensor, mask: &Mask, c: usize) -> Tensor {
    let nb = mask.lengths.len();
    let nt = mask.max_len;
    let mut dx = Tensor::zeros(&[nb, nt, c]);
    for b in 0..nb {
        let len = mask.lengths[b];
        let g = &dy.data[b * c..(b + 1) * c];
        for t in 0..len {
            for (d, gv) in dx.data[(b * nt + t) * c..(b * nt + t + 1) * c].iter_mut().zip(g) {
                *d = gv / len as f64;
            }
        }
    }
    dx
}

/// How the squeeze step summarises time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Squeeze {
    /// One gate per example from the mean over all valid steps.
    Global,
    /// One gate per step from the running mean over steps `0..=t`, so the
    /// output at `t` never depends on later input.
    Causal,
}

/// Squeeze-excitation weights: `c -> c/r -> c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeBlock {
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
    pub activation: Activation,
    pub squeeze: Squeeze,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeShape {
    pub channels: usize,
    pub reduction: usize,
}

impl SeShape {
    pub fn hidden(&self) -> Result<usize> {
        if self.reduction == 0 || self.channels % self.reduction != 0 || self.channels / self.reduction == 0 {
            return Err(Error::Config(format!(
                "SE: {} channels not divisible by reduction {}",
                self.channels, self.reduction
            )));
        }
        Ok(self.channels / self.reduction)
    }
}

/// Intermediates kept for the backward pass. Gate rows are one per example
/// (global squeeze) or one per example and step (causal squeeze).
#[derive(Debug, Clone)]
pub struct SeCache {
    squeezed: Tensor,
    hidden_pre: Tensor,
    hidden: Tensor,
    gate_pre: Tensor,
    pub gate: Tensor,
}

impl SeBlock {
    /// Block with a global squeeze; see [`SeBlock::with_squeeze`].
    pub fn new(prefix: &str, shape: SeShape, activation: Activation, rng: &mut impl Rng) -> Result<SeBlock> {
        let c = shape.channels;
        let h = shape.hidden()?;
        Ok(SeBlock {
            w1: Parameter::new(format!("{prefix}.w1"), Tensor::glorot_uniform(&[c, h], c, h, rng)),
            b1: Parameter::new(format!("{prefix}.b1"), Tensor::zeros(&[h])),
            w2: Parameter::new(format!("{prefix}.w2"), Tensor::glorot_uniform(&[h, c], h, c, rng)),
            b2: Parameter::new(format!("{prefix}.b2"), Tensor::zeros(&[c])),
            activation,
            squeeze: Squeeze::Global,
        })
    }

    pub fn with_squeeze(mut self, squeeze: Squeeze) -> SeBlock {
        self.squeeze = squeeze;
        self
    }

    pub fn params_mut(&mut self) -> [&mut Parameter; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn params(&self) -> [&Parameter; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    /// Row of the gate tensor used at `(b, t)`.
    fn gate_row(&self, b: usize, t: usize, nt: usize) -> usize {
        match self.squeeze {
            Squeeze::Global => b,
            Squeeze::Causal => b * nt + t,
        }
    }

    fn squeeze_forward(&self, x: &Tensor, mask: &Mask) -> Result<Tensor> {
        match self.squeeze {
            Squeeze::Global => global_avg_pool_masked(x, mask),
            Squeeze::Causal => {
                let (nb, nt, c) = x.dims3()?;
                let mut s = Tensor::zeros(&[nb * nt, c]);
                let mut acc = vec![0.0; c];
                for b in 0..nb {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for t in 0..mask.lengths[b] {
                        let off = (b * nt + t) * c;
                        for ch in 0..c {
                            acc[ch] += x.data[off + ch];
                            s.data[off + ch] = acc[ch] / (t + 1) as f64;
                        }
                    }
                }
                Ok(s)
            }
        }
    }

    fn squeeze_backward(&self, ds: &Tensor, mask: &Mask, c: usize) -> Tensor {
        match self.squeeze {
            Squeeze::Global => global_avg_pool_masked_backward(ds, mask, c),
            Squeeze::Causal => {
                let nb = mask.lengths.len();
                let nt = mask.max_len;
                let mut dx = Tensor::zeros(&[nb, nt, c]);
                let mut acc = vec![0.0; c];
                for b in 0..nb {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    for t in (0..mask.lengths[b]).rev() {
                        let off = (b * nt + t) * c;
                        for ch in 0..c {
                            acc[ch] += ds.data[off + ch] / (t + 1) as f64;
                            dx.data[off + ch] = acc[ch];
                        }
                    }
                }
                dx
            }
        }
    }

    /// Gates each channel of `x` by `sigmoid(W2 act(W1 s + b1) + b2)` where
    /// `s` is the squeezed input. Padded steps of the output are zero.
    pub fn forward(&self, x: &Tensor, mask: &Mask) -> Result<(Tensor, SeCache)> {
        let (nb, nt, c) = x.dims3()?;
        if self.w1.value.shape[0] != c {
            return Err(Error::Shape(format!("SE expects {} channels, got {c}", self.w1.value.shape[0])));
        }
        if mask.lengths.len() != nb || mask.max_len != nt {
            return Err(Error::Shape("SE: mask does not match input".into()));
        }
        let squeezed = self.squeeze_forward(x, mask)?;
        let hidden_pre = dense(&squeezed, &self.w1.value, &self.b1.value.data)?;
        let hidden = self.activation.forward(&hidden_pre);
        let gate_pre = dense(&hidden, &self.w2.value, &self.b2.value.data)?;
        let gate = gate_pre.map(sigmoid);
        let mut y = Tensor::zeros(&x.shape);
        for b in 0..nb {
            for t in 0..mask.lengths[b] {
                let g = self.gate_row(b, t, nt);
                let off = (b * nt + t) * c;
                for ch in 0..c {
                    y.data[off + ch] = x.data[off + ch] * gate.data[g * c + ch];
                }
            }
        }
        Ok((y, SeCache { squeezed, hidden_pre, hidden, gate_pre, gate }))
    }

    /// Accumulates parameter gradients and returns `dx`.
    pub fn backward(&mut self, x: &Tensor, cache: &SeCache, dy: &Tensor, mask: &Mask) -> Result<Tensor> {
        let (nb, nt, c) = x.dims3()?;
        let mut dx = Tensor::zeros(&x.shape);
        let mut dgate = cache.gate.zeros_like();
        for b in 0..nb {
            for t in 0..mask.lengths[b] {
                let g = self.gate_row(b, t, nt);
                let off = (b * nt + t) * c;
                for ch in 0..c {
                    dgate.data[g * c + ch] += dy.data[off + ch] * x.data[off + ch];
                    dx.data[off + ch] = dy.data[off + ch] * cache.gate.data[g * c + ch];
                }
            }
        }
        let dgate_pre = Activation::Sigmoid.backward(&cache.gate_pre, &dgate);
        let (dhidden, dw2, db2) = dense_backward(&cache.hidden, &self.w2.value, &dgate_pre)?;
        let dhidden_pre = self.activation.backward(&cache.hidden_pre, &dhidden);
        let (dsq, dw1, db1) = dense_backward(&cache.squeezed, &self.w1.value, &dhidden_pre)?;
        self.w1.grad.add_assign(&dw1);
        self.b1.grad.data.iter_mut().zip(&db1).for_each(|(a, b)| *a += b);
        self.w2.grad.add_assign(&dw2);
        self.b2.grad.data.iter_mut().zip(&db2).for_each(|(a, b)| *a += b);
        dx.add_assign(&self.squeeze_backward(&dsq, mask, c));
        Ok(dx)
    }
}

/// Per-(example, channel) keep factors: 0 or `1 / (1 - rate)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    pub scale: Tensor,
}

/// Draws a whole-channel dropout mask of shape `(batch, channels)`.
pub fn channel_dropout_mask(batch: usize, channels: usize, rate: f64, rng: &mut (impl Rng + ?Sized)) -> DropoutMask {
    let keep = 1.0 / (1.0 - rate);
    let scale = Tensor::from_fn(&[batch, channels], |_| {
        if rate > 0.0 && rng.random::<f64>() < rate {
            0.0
        } else if rate > 0.0 {
            keep
        } else {
            1.0
        }
    });
    DropoutMask { scale }
}

/// Applies a drawn channel mask to `(batch, time, c)` (or `(batch, c)`) input.
pub fn apply_channel_mask(x: &Tensor, mask: &DropoutMask) -> Tensor {
    let nb = mask.scale.shape[0];
    let c = mask.scale.shape[1];
    let per_example = x.len() / nb;
    let mut y = x.clone();
    for b in 0..nb {
        let s = &mask.scale.data[b * c..(b + 1) * c];
        for (i, v) in y.data[b * per_example..(b + 1) * per_example].iter_mut().enumerate() {
            *v *= s[i % c];
        }
    }
    y
}

/// Channel dropout: in training, whole channels of each example are zeroed
/// with probability `rate` and survivors scaled by `1 / (1 - rate)`;
/// otherwise the input is returned unchanged.
pub fn channel_dropout(x: &Tensor, rate: f64, rng: &mut impl Rng, training: bool) -> Result<(Tensor, Option<DropoutMask>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let nb = x.shape[0];
    let c = *x.shape.last().expect("non-scalar input");
    let mask = channel_dropout_mask(nb, c, rate, rng);
    Ok((apply_channel_mask(x, &mask), Some(mask)))
}
