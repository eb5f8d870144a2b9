//! Motion-artifact detection and smoothing-spline correction on optical
//! density.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplineConfig {
    /// Smoothing parameter in (0, 1]; 1 interpolates.
    pub p: f64,
    /// Moving window length in seconds.
    pub window_s: f64,
    /// Moving-SD threshold, as a multiple of the column's median moving SD.
    pub std_thresh: f64,
    /// Peak-to-peak threshold within a window, in OD units.
    pub amp_thresh: f64,
}

impl Default for SplineConfig {
    fn default() -> Self {
        SplineConfig { p: 0.99, window_s: 2.0, std_thresh: 5.0, amp_thresh: 0.4 }
    }
}

/// Half-open sample range `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t < self.end
    }
}

/// Merges overlapping or touching segments; output sorted.
pub fn merge_segments(mut segs: Vec<Segment>) -> Vec<Segment> {
    segs.retain(|s| !s.is_empty());
    segs.sort();
    let mut out: Vec<Segment> = Vec::with_capacity(segs.len());
    for s in segs {
        match out.last_mut() {
            Some(last) if s.start <= last.end => last.end = last.end.max(s.end),
            _ => out.push(s),
        }
    }
    out
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Flags windows whose moving SD exceeds `std_thresh` times the column's
/// median moving SD, or whose peak-to-peak amplitude exceeds `amp_thresh`.
/// Segments from all columns are merged.
pub fn detect_motion_segments(x: &Array2<f64>, fs: f64, cfg: &SplineConfig) -> Vec<Segment> {
    let n = x.nrows();
    let w = ((cfg.window_s * fs).round() as usize).max(2);
    if n < w {
        return Vec::new();
    }
    let mut flagged = Vec::new();
    for col in x.columns() {
        let col: Vec<f64> = col.to_vec();
        let n_win = n - w + 1;
        let mut sds = Vec::with_capacity(n_win);
        let mut ptps = Vec::with_capacity(n_win);
        for start in 0..n_win {
            let win = &col[start..start + w];
            let mean = win.iter().sum::<f64>() / w as f64;
            let var = win.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w - 1) as f64;
            sds.push(var.sqrt());
            let (lo, hi) = win.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            ptps.push(hi - lo);
        }
        let baseline = median(sds.clone());
        for start in 0..n_win {
            let by_sd = baseline > 0.0 && sds[start] > cfg.std_thresh * baseline;
            if by_sd || ptps[start] > cfg.amp_thresh {
                flagged.push(Segment { start, end: start + w });
            }
        }
    }
    merge_segments(flagged)
}

/// A segment left uncorrected because it was too short to fit a cubic spline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SkippedSegment {
    pub segment: Segment,
}

/// Cubic smoothing spline values at the knots `t`, minimising
/// `p * sum (y - f)^2 + (1 - p) * int f''^2`.
///
/// Reinsch formulation: solve `(R + a Q'Q) g = Q'y` for the interior second
/// derivatives `g`, then `f = y - a Q g`, with `a = (1 - p) / p`.
pub fn smoothing_spline(t: &[f64], y: &[f64], p: f64) -> Vec<f64> {
    let n = y.len();
    if n < 3 || p >= 1.0 {
        return y.to_vec();
    }
    let alpha = (1.0 - p) / p;
    let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let m = n - 2;
    // Q is n x m with column j (interior knot j+1) holding
    // 1/h[j], -1/h[j] - 1/h[j+1], 1/h[j+1] in rows j, j+1, j+2.
    let q = |j: usize| -> [f64; 3] { [1.0 / h[j], -1.0 / h[j] - 1.0 / h[j + 1], 1.0 / h[j + 1]] };

    // Symmetric pentadiagonal matrix A = R + alpha Q'Q stored as 3 diagonals.
    let mut d0 = vec![0.0; m];
    let mut d1 = vec![0.0; m];
    let mut d2 = vec![0.0; m];
    for j in 0..m {
        let qj = q(j);
        d0[j] = (h[j] + h[j + 1]) / 3.0 + alpha * (qj[0] * qj[0] + qj[1] * qj[1] + qj[2] * qj[2]);
        if j + 1 < m {
            let qk = q(j + 1);
            d1[j] = h[j + 1] / 6.0 + alpha * (qj[1] * qk[0] + qj[2] * qk[1]);
        }
        if j + 2 < m {
            let qk = q(j + 2);
            d2[j] = alpha * qj[2] * qk[0];
        }
    }
    let mut rhs: Vec<f64> = (0..m)
        .map(|j| {
            let qj = q(j);
            qj[0] * y[j] + qj[1] * y[j + 1] + qj[2] * y[j + 2]
        })
        .collect();
    solve_pentadiagonal_spd(&d0, &d1, &d2, &mut rhs);
    let gamma = rhs;

    let mut f = y.to_vec();
    for (j, g) in gamma.iter().enumerate() {
        let qj = q(j);
        f[j] -= alpha * qj[0] * g;
        f[j + 1] -= alpha * qj[1] * g;
        f[j + 2] -= alpha * qj[2] * g;
    }
    f
}

/// Banded LDL' solve of a symmetric positive definite pentadiagonal system
/// given by its main (`a0`), first (`a1`) and second (`a2`) off-diagonals.
fn solve_pentadiagonal_spd(a0: &[f64], a1: &[f64], a2: &[f64], b: &mut [f64]) {
    let m = a0.len();
    let mut l1 = vec![0.0; m];
    let mut l2 = vec![0.0; m];
    let mut dd = vec![0.0; m];
    for i in 0..m {
        let mut di = a0[i];
        if i >= 1 {
            di -= l1[i - 1] * l1[i - 1] * dd[i - 1];
        }
        if i >= 2 {
            di -= l2[i - 2] * l2[i - 2] * dd[i - 2];
        }
        dd[i] = di;
        if i + 1 < m {
            let mut v = a1[i];
            if i >= 1 {
                v -= l2[i - 1] * l1[i - 1] * dd[i - 1];
            }
            l1[i] = v / di;
        }
        if i + 2 < m {
            l2[i] = a2[i] / di;
        }
    }
    for i in 0..m {
        if i >= 1 {
            b[i] -= l1[i - 1] * b[i - 1];
        }
        if i >= 2 {
            b[i] -= l2[i - 2] * b[i - 2];
        }
    }
    for i in 0..m {
        b[i] /= dd[i];
    }
    for i in (0..m).rev() {
        if i + 1 < m {
            b[i] -= l1[i] * b[i + 1];
        }
        if i + 2 < m {
            b[i] -= l2[i] * b[i + 2];
        }
    }
}

/// Replaces each flagged segment by the residual of a smoothing-spline fit
/// plus a linear baseline joining the neighbouring unflagged samples, so the
/// segment meets its neighbours continuously. Samples outside every segment
/// are left untouched. Segments shorter than 4 samples are skipped.
pub fn spline_correct(
    x: &Array2<f64>,
    segments: &[Segment],
    fs: f64,
    p: f64,
) -> Result<(Array2<f64>, Vec<SkippedSegment>)> {
    let n = x.nrows();
    let mut out = x.clone();
    let mut skipped = Vec::new();
    for seg in segments {
        if seg.end > n || seg.start >= seg.end {
            return Err(Error::InvalidInput(format!(
                "segment [{}, {}) outside series of {} samples",
                seg.start, seg.end, n
            )));
        }
        if seg.len() < 4 {
            log::warn!("motion segment [{}, {}) shorter than 4 samples, skipped", seg.start, seg.end);
            skipped.push(SkippedSegment { segment: *seg });
            continue;
        }
        let t: Vec<f64> = (seg.start..seg.end).map(|i| i as f64 / fs).collect();
        for c in 0..x.ncols() {
            let y: Vec<f64> = (seg.start..seg.end).map(|i| x[[i, c]]).collect();
            let fit = smoothing_spline(&t, &y, p);
            let left = (seg.start > 0).then(|| x[[seg.start - 1, c]]);
            let right = (seg.end < n).then(|| x[[seg.end, c]]);
            let (l, r) = match (left, right) {
                (Some(l), Some(r)) => (l, r),
                (Some(l), None) => (l, l),
                (None, Some(r)) => (r, r),
                (None, None) => (fit[0], fit[fit.len() - 1]),
            };
            let span = (seg.len() + 1) as f64;
            for (k, i) in (seg.start..seg.end).enumerate() {
                let frac = (k + 1) as f64 / span;
                out[[i, c]] = (y[k] - fit[k]) + l + (r - l) * frac;
            }
        }
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn merge_rules() {
        let s = |a, b| Segment { start: a, end: b };
        assert_eq!(merge_segments(vec![s(5, 10), s(0, 3), s(8, 12)]), vec![s(0, 3), s(5, 12)]);
        assert_eq!(merge_segments(vec![s(0, 3), s(3, 4)]), vec![s(0, 4)]);
        assert!(merge_segments(vec![s(2, 2)]).is_empty());
    }

    #[test]
    fn spline_reproduces_lines_and_interpolates_at_p1() {
        let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = t.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = smoothing_spline(&t, &y, 0.3);
        for (a, b) in f.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
        let wiggle: Vec<f64> = t.iter().map(|v| (3.0 * v).sin()).collect();
        assert_eq!(smoothing_spline(&t, &wiggle, 1.0), wiggle);
    }

    #[test]
    fn spline_matches_dense_solve() {
        // Dense normal-equation oracle for the penalised least-squares problem.
        let n = 9;
        let t: Vec<f64> = (0..n).map(|i| (i as f64).powf(1.1)).collect();
        let y: Vec<f64> = (0..n).map(|i| ((i * 7 % 5) as f64) - 2.0).collect();
        let p = 0.7;
        let alpha = (1.0 - p) / p;
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let m = n - 2;
        let mut q = vec![vec![0.0; m]; n];
        let mut r = vec![vec![0.0; m]; m];
        for j in 0..m {
            q[j][j] = 1.0 / h[j];
            q[j + 1][j] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[j + 2][j] = 1.0 / h[j + 1];
            r[j][j] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < m {
                r[j][j + 1] = h[j + 1] / 6.0;
                r[j + 1][j] = h[j + 1] / 6.0;
            }
        }
        // K = Q R^-1 Q'; f = (I + alpha K)^-1 y.
        let rinv = invert(&r);
        let mut sys = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in 0..n {
                let mut k = 0.0;
                for i in 0..m {
                    for j in 0..m {
                        k += q[a][i] * rinv[i][j] * q[b][j];
                    }
                }
                sys[a][b] = if a == b { 1.0 } else { 0.0 } + alpha * k;
            }
        }
        let sinv = invert(&sys);
        let expected: Vec<f64> = (0..n).map(|a| (0..n).map(|b| sinv[a][b] * y[b]).sum()).collect();
        let got = smoothing_spline(&t, &y, p);
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-9, "{g} vs {e}");
        }
    }

    fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = a.len();
        let mut m: Vec<Vec<f64>> = a
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let mut r = row.clone();
                r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
                r
            })
            .collect();
        for c in 0..n {
            let piv = (c..n).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, piv);
            let d = m[c][c];
            for v in m[c].iter_mut() {
                *v /= d;
            }
            for r in 0..n {
                if r != c {
                    let f = m[r][c];
                    let row_c = m[c].clone();
                    for (v, w) in m[r].iter_mut().zip(row_c) {
                        *v -= f * w;
                    }
                }
            }
        }
        m.into_iter().map(|r| r[n..].to_vec()).collect()
    }

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        // Small deterministic pseudo-noise.
        let mut s = seed;
        (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5) * 0.01
            })
            .collect()
    }

    #[test]
    fn clean_signal_has_no_segments() {
        let fs = 5.0;
        let n = 600;
        let e = noise(n, 1);
        let x = Array2::from_shape_fn((n, 2), |(i, c)| {
            0.02 * (2.0 * std::f64::consts::PI * 0.05 * i as f64 / fs + c as f64).sin() + e[i]
        });
        assert!(detect_motion_segments(&x, fs, &SplineConfig::default()).is_empty());
    }

    #[test]
    fn step_is_detected_and_corrected() {
        let fs = 5.0;
        let n = 400;
        let e = noise(n, 7);
        let clean: Vec<f64> = (0..n).map(|i| 0.01 * (i as f64 / fs * 0.3).sin() + e[i]).collect();
        let sd = {
            let m = clean.iter().sum::<f64>() / n as f64;
            (clean.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let stepped: Vec<f64> = clean.iter().enumerate().map(|(i, v)| v + if i >= 100 { 10.0 * sd } else { 0.0 }).collect();
        let x = Array2::from_shape_vec((n, 1), stepped.clone()).unwrap();
        let segs = detect_motion_segments(&x, fs, &SplineConfig::default());
        assert_eq!(segs.len(), 1);
        assert!(segs[0].contains(100));

        let (y, skipped) = spline_correct(&x, &segs, fs, 0.99).unwrap();
        assert!(skipped.is_empty());
        for i in 0..n {
            if !segs[0].contains(i) {
                assert_eq!(y[[i, 0]].to_bits(), x[[i, 0]].to_bits());
            }
        }
        let s = segs[0];
        let twin_jump = |a: usize| (clean[a] - clean[a - 1]).abs();
        let left = (y[[s.start, 0]] - y[[s.start - 1, 0]]).abs();
        let right = (y[[s.end, 0]] - y[[s.end - 1, 0]]).abs();
        assert!((left - twin_jump(s.start)).abs() < 0.05);
        assert!((right - twin_jump(s.end)).abs() < 0.05);
    }

    #[test]
    fn large_step_boundaries_stay_continuous() {
        let fs = 5.0;
        let n = 300;
        let e = noise(n, 3);
        let clean: Vec<f64> = (0..n).map(|i| 0.02 * (i as f64 * 0.05).sin() + e[i]).collect();
        let stepped: Vec<f64> = clean.iter().enumerate().map(|(i, v)| v + if i >= 150 { 0.5 } else { 0.0 }).collect();
        let x = Array2::from_shape_vec((n, 1), stepped).unwrap();
        let segs = detect_motion_segments(&x, fs, &SplineConfig::default());
        assert_eq!(segs.len(), 1);
        let (y, _) = spline_correct(&x, &segs, fs, 0.99).unwrap();
        let s = segs[0];
        let left = (y[[s.start, 0]] - y[[s.start - 1, 0]]) - (clean[s.start] - clean[s.start - 1]);
        let right = (y[[s.end, 0]] - y[[s.end - 1, 0]]) - (clean[s.end] - clean[s.end - 1]);
        assert!(left.abs() < 0.05, "left {left}");
        assert!(right.abs() < 0.05, "right {right}");
        // Unflagged samples keep their offset, so the step is spread over the
        // segment instead of occurring in one sample.
        let max_jump = (s.start..s.end).map(|i| (y[[i + 1, 0]] - y[[i, 0]]).abs()).fold(0.0, f64::max);
        assert!(max_jump < 0.4, "max jump {max_jump}");
    }

    #[test]
    fn nearby_spikes_merge() {
        let fs = 5.0;
        let n = 200;
        let e = noise(n, 11);
        let mut v: Vec<f64> = e.clone();
        v[80] += 1.0;
        v[85] += 1.0; // 1 s later
        let x = Array2::from_shape_vec((n, 1), v).unwrap();
        let segs = detect_motion_segments(&x, fs, &SplineConfig::default());
        assert_eq!(segs.len(), 1);
        assert!(segs[0].contains(80) && segs[0].contains(85));
    }

    #[test]
    fn empty_segments_is_bitwise_identity() {
        let x = Array2::from_shape_fn((50, 3), |(i, c)| (i * 3 + c) as f64 * 0.1);
        let (y, _) = spline_correct(&x, &[], 5.0, 0.99).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn short_segment_skipped_and_bounds_checked() {
        let x = Array2::from_shape_fn((50, 1), |(i, _)| i as f64);
        let (y, skipped) = spline_correct(&x, &[Segment { start: 10, end: 13 }], 5.0, 0.99).unwrap();
        assert_eq!(skipped.len(), 1);
        assert_eq!(x, y);
        assert!(spline_correct(&x, &[Segment { start: 40, end: 60 }], 5.0, 0.99).is_err());
    }
}
