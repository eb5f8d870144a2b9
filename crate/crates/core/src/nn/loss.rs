use super::tensor::{Mask, Tensor};
use crate::error::{Error, Result};

/// Default reconstruction window, in model timesteps.
pub const DEFAULT_LOSS_WINDOW: usize = 25;

/// Mean squared error over the first `min(window, len_b)` valid steps of
/// each example (all channels). Returns the loss and `d loss / d pred`.
pub fn masked_mse(pred: &Tensor, target: &Tensor, mask: &Mask, window: usize) -> Result<(f64, Tensor)> {
    if pred.shape != target.shape {
        return Err(Error::Shape(format!("mse: pred {:?} vs target {:?}", pred.shape, target.shape)));
    }
    let (nb, nt, c) = pred.dims3()?;
    if mask.lengths.len() != nb || mask.max_len != nt {
        return Err(Error::Shape("mse: mask does not match input".into()));
    }
    let count: usize = mask.lengths.iter().map(|&l| l.min(window) * c).sum();
    if count == 0 {
        return Err(Error::InvalidInput("masked_mse: no contributing positions".into()));
    }
    let n = count as f64;
    let mut grad = Tensor::zeros(&pred.shape);
    let mut sum = 0.0;
    for b in 0..nb {
        let lo = b * nt * c;
        let hi = lo + mask.lengths[b].min(window) * c;
        for i in lo..hi {
            let d = pred.data[i] - target.data[i];
            sum += d * d;
            grad.data[i] = 2.0 * d / n;
        }
    }
    Ok((sum / n, grad))
}

fn check_labels(probs: &Tensor, labels: &[usize], weights: &[f64]) -> Result<(usize, usize)> {
    let (nb, k) = probs.dims2()?;
    if labels.len() != nb || weights.len() != k {
        return Err(Error::Shape(format!(
            "cross-entropy: probs {:?}, {} labels, {} class weights",
            probs.shape,
            labels.len(),
            weights.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::InvalidInput(format!("label {bad} out of range for {k} classes")));
    }
    let total: f64 = labels.iter().map(|&y| weights[y]).sum();
    if total <= 0.0 {
        return Err(Error::InvalidInput("cross-entropy: total class weight is zero".into()));
    }
    Ok((nb, k))
}

/// `-sum_i w[y_i] ln p_i(y_i) / sum_i w[y_i]`.
pub fn weighted_cross_entropy(probs: &Tensor, labels: &[usize], weights: &[f64]) -> Result<f64> {
    let (_, k) = check_labels(probs, labels, weights)?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = probs.data[i * k + y].max(f64::MIN_POSITIVE);
        num -= weights[y] * p.ln();
        den += weights[y];
    }
    Ok(num / den)
}

/// Gradient of [`weighted_cross_entropy`] with respect to the pre-softmax
/// logits: `w[y_i] / W * (p_i - onehot(y_i))`.
pub fn weighted_cross_entropy_logit_grad(probs: &Tensor, labels: &[usize], weights: &[f64]) -> Result<Tensor> {
    let (_, k) = check_labels(probs, labels, weights)?;
    let den: f64 = labels.iter().map(|&y| weights[y]).sum();
    let mut g = probs.clone();
    for (i, &y) in labels.iter().enumerate() {
        let s = weights[y] / den;
        for j in 0..k {
            let onehot = if j == y { 1.0 } else { 0.0 };
            g.data[i * k + j] = s * (probs.data[i * k + j] - onehot);
        }
    }
    Ok(g)
}

/// `l1 * sum|w| + l2 * sum w^2` over the given tensors.
pub fn l1l2_penalty(params: &[&Tensor], l1: f64, l2: f64) -> f64 {
    params
        .iter()
        .flat_map(|t| t.data.iter())
        .map(|&w| l1 * w.abs() + l2 * w * w)
        .sum()
}

/// Gradient of [`l1l2_penalty`] for one tensor (subgradient 0 at w = 0).
pub fn l1l2_grad(w: &Tensor, l1: f64, l2: f64) -> Tensor {
    w.map(|v| {
        let sign = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
        l1 * sign + 2.0 * l2 * v
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_window_excludes_late_errors() {
        let mut pred = Tensor::zeros(&[1, 40, 1]);
        let target = Tensor::zeros(&[1, 40, 1]);
        assert_eq!(masked_mse(&pred, &target, &Mask::full(1, 40), 25).unwrap().0, 0.0);
        pred.data[30] = 3.0;
        let (l, g) = masked_mse(&pred, &target, &Mask::full(1, 40), 25).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_two_example_hand_case() {
        // Example 0 has 3 valid steps, example 1 has 1; window 2; one channel.
        let pred = Tensor::new(vec![2, 3, 1], vec![1.0, 2.0, 9.0, 4.0, 7.0, 7.0]).unwrap();
        let target = Tensor::zeros(&[2, 3, 1]);
        let mask = Mask::new(vec![3, 1], 3).unwrap();
        let (l, _) = masked_mse(&pred, &target, &mask, 2).unwrap();
        // Contributing: 1, 2 from example 0 and 4 from example 1.
        assert!((l - (1.0 + 4.0 + 16.0) / 3.0).abs() < 1e-15);
        let empty = Mask::new(vec![0, 0], 3).unwrap();
        assert!(masked_mse(&pred, &target, &empty, 2).is_err());
    }

    #[test]
    fn cross_entropy_closed_forms() {
        let uniform = Tensor::filled(&[4, 2], 0.5);
        let l = weighted_cross_entropy(&uniform, &[0, 1, 1, 0], &[1.0, 1.0]).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let probs = Tensor::new(vec![3, 2], vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4]).unwrap();
        let a = weighted_cross_entropy(&probs, &[0, 1, 1], &[0.3, 0.7]).unwrap();
        let b = weighted_cross_entropy(&probs, &[0, 1, 1], &[0.6, 1.4]).unwrap();
        assert!((a - b).abs() < 1e-15);
        let perfect = Tensor::new(vec![1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(weighted_cross_entropy(&perfect, &[1], &[0.3, 0.7]).unwrap(), 0.0);
        assert!(weighted_cross_entropy(&probs, &[0, 2, 1], &[0.3, 0.7]).is_err());
    }

    #[test]
    fn penalty_hand_value() {
        let w = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        assert!((l1l2_penalty(&[&w], 0.1, 0.1) - 0.8).abs() < 1e-15);
        assert_eq!(l1l2_penalty(&[&Tensor::zeros(&[3])], 0.1, 0.1), 0.0);
    }
}
