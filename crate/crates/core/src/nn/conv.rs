//! Stride-1 temporal convolutions on `(batch, time, channels)` tensors.
//!
//! Weights are `(k, c_in, c_out)` and applied as a cross-correlation with the
//! oldest sample first: `w[0]` multiplies `x[t - k + 1]`, `w[k - 1]` multiplies
//! `x[t]`. Only each example's valid prefix is read or written; padded steps
//! of the output are zero.

use super::tensor::{Mask, Tensor};
use crate::error::{Error, Result};

fn check(x: &Tensor, w: &Tensor, bias: &[f64], mask: &Mask) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, t, ci) = x.dims3()?;
    let (k, wci, co) = w.dims3()?;
    if wci != ci || bias.len() != co || mask.lengths.len() != b || mask.max_len != t || k == 0 {
        return Err(Error::Shape(format!(
            "conv: x {:?}, w {:?}, bias {}, mask {}x{}",
            x.shape,
            w.shape,
            bias.len(),
            mask.lengths.len(),
            mask.max_len
        )));
    }
    Ok((b, t, ci, k, co))
}

/// Causal convolution: `y[t] = bias + sum_j w[j] . x[t - k + 1 + j]`, zeros before 0.
pub fn conv1d_causal(x: &Tensor, w: &Tensor, bias: &[f64], mask: &Mask) -> Result<Tensor> {
    let (nb, nt, ci, k, co) = check(x, w, bias, mask)?;
    let mut y = Tensor::zeros(&[nb, nt, co]);
    for b in 0..nb {
        for t in 0..mask.lengths[b] {
            let out = &mut y.data[(b * nt + t) * co..(b * nt + t + 1) * co];
            out.copy_from_slice(bias);
            for j in 0..k {
                let Some(src) = (t + j + 1).checked_sub(k) else { continue };
                let xin = &x.data[(b * nt + src) * ci..(b * nt + src + 1) * ci];
                let wj = &w.data[j * ci * co..(j + 1) * ci * co];
                for (i, &xv) in xin.iter().enumerate() {
                    let wrow = &wj[i * co..(i + 1) * co];
                    for (o, wv) in out.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Gradients of [`conv1d_causal`] with respect to input, weights and bias.
pub fn conv1d_causal_backward(x: &Tensor, w: &Tensor, dy: &Tensor, mask: &Mask) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let co = w.shape[2];
    let (nb, nt, ci, k, _) = check(x, w, &vec![0.0; co], mask)?;
    let mut dx = Tensor::zeros(&x.shape);
    let mut dw = Tensor::zeros(&w.shape);
    let mut db = vec![0.0; co];
    for b in 0..nb {
        for t in 0..mask.lengths[b] {
            let g = &dy.data[(b * nt + t) * co..(b * nt + t + 1) * co];
            for (d, gv) in db.iter_mut().zip(g) {
                *d += gv;
            }
            for j in 0..k {
                let Some(src) = (t + j + 1).checked_sub(k) else { continue };
                let base = (b * nt + src) * ci;
                for i in 0..ci {
                    let widx = (j * ci + i) * co;
                    let wrow = &w.data[widx..widx + co];
                    let xv = x.data[base + i];
                    let mut acc = 0.0;
                    let dwrow = &mut dw.data[widx..widx + co];
                    for o in 0..co {
                        acc += wrow[o] * g[o];
                        dwrow[o] += xv * g[o];
                    }
                    dx.data[base + i] += acc;
                }
            }
        }
    }
    Ok((dx, dw, db))
}

/// Adjoint of [`conv1d_causal`] (anti-causal, same length):
/// `y[s] = bias + sum_j w[j] . x[s + k - 1 - j]`, zeros past each valid prefix.
///
/// With `w` of shape `(k, c_in, c_out)` this equals the transpose of the causal
/// convolution whose weights are `w` with the channel axes swapped.
pub fn conv_transpose1d(x: &Tensor, w: &Tensor, bias: &[f64], mask: &Mask) -> Result<Tensor> {
    let (nb, nt, ci, k, co) = check(x, w, bias, mask)?;
    let mut y = Tensor::zeros(&[nb, nt, co]);
    for b in 0..nb {
        let len = mask.lengths[b];
        for s in 0..len {
            let out = &mut y.data[(b * nt + s) * co..(b * nt + s + 1) * co];
            out.copy_from_slice(bias);
            for j in 0..k {
                let src = s + k - 1 - j;
                if src >= len {
                    continue;
                }
                let xin = &x.data[(b * nt + src) * ci..(b * nt + src + 1) * ci];
                let wj = &w.data[j * ci * co..(j + 1) * ci * co];
                for (i, &xv) in xin.iter().enumerate() {
                    let wrow = &wj[i * co..(i + 1) * co];
                    for (o, wv) in out.iter_mut().zip(wrow) {
                        *o += xv * wv;
                    }
                }
            }
        }
    }
    Ok(y)
}

pub fn conv_transpose1d_backward(x: &Tensor, w: &Tensor, dy: &Tensor, mask: &Mask) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let co = w.shape[2];
    let (nb, nt, ci, k, _) = check(x, w, &vec![0.0; co], mask)?;
    let mut dx = Tensor::zeros(&x.shape);
    let mut dw = Tensor::zeros(&w.shape);
    let mut db = vec![0.0; co];
    for b in 0..nb {
        let len = mask.lengths[b];
        for s in 0..len {
            let g = &dy.data[(b * nt + s) * co..(b * nt + s + 1) * co];
            for (d, gv) in db.iter_mut().zip(g) {
                *d += gv;
            }
            for j in 0..k {
                let src = s + k - 1 - j;
                if src >= len {
                    continue;
                }
                let base = (b * nt + src) * ci;
                for i in 0..ci {
                    let widx = (j * ci + i) * co;
                    let wrow = &w.data[widx..widx + co];
                    let xv = x.data[base + i];
                    let mut acc = 0.0;
                    let dwrow = &mut dw.data[widx..widx + co];
                    for o in 0..co {
                        acc += wrow[o] * g[o];
                        dwrow[o] += xv * g[o];
                    }
                    dx.data[base + i] += acc;
                }
            }
        }
    }
    Ok((dx, dw, db))
}
