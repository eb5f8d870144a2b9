//! Central finite differences for checking hand-written gradients.

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for each index in `coords`.
pub fn numeric_grad(x: &[f64], coords: &[usize], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = probe[i];
            probe[i] = orig + h;
            let up = f(&probe);
            probe[i] = orig - h;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a - n| / max(|a| + |n|, floor)` in the Euclidean norm.
///
/// The floor keeps gradients that are exactly zero (for example a masked
/// region) from producing 0/0.
pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    diff / scale.max(1e-10)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cubic() {
        let x = [1.0, -2.0, 0.5];
        let g = numeric_grad(&x, &[0, 1, 2], 1e-5, |v| v.iter().map(|t| t * t * t).sum());
        let exact: Vec<f64> = x.iter().map(|t| 3.0 * t * t).collect();
        assert!(rel_error(&exact, &g) < 1e-9);
        assert_eq!(rel_error(&[0.0], &[0.0]), 0.0);
    }
}
