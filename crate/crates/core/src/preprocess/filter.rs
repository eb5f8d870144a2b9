//! Butterworth IIR design as second-order sections and zero-phase
//! (forward-backward) filtering.
//!
//! Design follows the usual analog-prototype route: prototype poles on the
//! unit circle, frequency transform in the prewarped analog domain, bilinear
//! map to the z-plane, then conjugate poles are grouped into biquads. Section
//! gains are normalised so the passband reference frequency has unit gain.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// One biquad: `b0 b1 b2 / 1 a1 a2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z: Complex64) -> Complex64 {
        let zi = z.inv();
        let num = self.b[0] + self.b[1] * zi + self.b[2] * zi * zi;
        let den = self.a[0] + self.a[1] * zi + self.a[2] * zi * zi;
        num / den
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Biquad>,
}

fn prototype_poles(order: usize) -> Vec<Complex64> {
    (0..order)
        .map(|k| {
            let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
            Complex64::from_polar(1.0, theta)
        })
        .collect()
}

// Bilinear transform with the sampling rate normalised to 2 (Nyquist = 1).
const FS2: f64 = 4.0;

fn prewarp(normalized: f64) -> f64 {
    FS2 * (PI * normalized / 2.0).tan()
}

fn bilinear(p: Complex64) -> Complex64 {
    (FS2 + p) / (FS2 - p)
}

impl Sos {
    /// Butterworth band-pass; edges as fractions of Nyquist.
    pub fn butter_bandpass(order: usize, low: f64, high: f64) -> Result<Sos> {
        if order == 0 || !(0.0 < low && low < high && high < 1.0) {
            return Err(Error::Config(format!(
                "band-pass needs order >= 1 and 0 < low < high < nyquist (got {order}, {low}, {high})"
            )));
        }
        let wl = prewarp(low);
        let wh = prewarp(high);
        let bw = wh - wl;
        let w0 = (wl * wh).sqrt();
        let mut poles = Vec::with_capacity(2 * order);
        for p in prototype_poles(order) {
            let p = p * bw / 2.0;
            let disc = (p * p - w0 * w0).sqrt();
            poles.push(bilinear(p + disc));
            poles.push(bilinear(p - disc));
        }
        // `order` zeros at s = 0 map to z = 1, the remaining `order` at infinity map to z = -1.
        let mut zeros = vec![1.0; order];
        zeros.extend(std::iter::repeat_n(-1.0, order));
        let mut sos = assemble(poles, zeros);
        // Unit gain at the geometric centre of the analog band.
        let wc = 2.0 * (w0 / FS2).atan();
        sos.normalize_at(Complex64::from_polar(1.0, wc));
        Ok(sos)
    }

    /// Butterworth low-pass; cutoff as a fraction of Nyquist.
    pub fn butter_lowpass(order: usize, cutoff: f64) -> Result<Sos> {
        if order == 0 || !(0.0 < cutoff && cutoff < 1.0) {
            return Err(Error::Config(format!(
                "low-pass needs order >= 1 and 0 < cutoff < nyquist (got {order}, {cutoff})"
            )));
        }
        let wc = prewarp(cutoff);
        let poles = prototype_poles(order).into_iter().map(|p| bilinear(p * wc)).collect();
        let zeros = vec![-1.0; order];
        let mut sos = assemble(poles, zeros);
        sos.normalize_at(Complex64::new(1.0, 0.0));
        Ok(sos)
    }

    pub fn response(&self, z: Complex64) -> Complex64 {
        self.sections.iter().map(|s| s.response(z)).product()
    }

    /// |H| at `freq_hz` for sampling rate `fs`.
    pub fn gain(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(Complex64::from_polar(1.0, 2.0 * PI * freq_hz / fs)).norm()
    }

    fn normalize_at(&mut self, z: Complex64) {
        let g = self.response(z).norm();
        for v in self.sections[0].b.iter_mut() {
            *v /= g;
        }
    }

    /// Reflection length used by [`Sos::filtfilt`].
    pub fn default_padlen(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Steady-state initial conditions for a unit step, one pair per section.
    fn step_zi(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = s.dc_gain();
                let z2 = s.b[2] - s.a[2] * g;
                let z1 = g - s.b[0];
                let zi = [z1 * scale, z2 * scale];
                scale *= g;
                zi
            })
            .collect()
    }

    /// Direct-form II transposed cascade, in place. `zi` is consumed as state.
    fn run(&self, x: &mut [f64], mut zi: Vec<[f64; 2]>) {
        for (s, z) in self.sections.iter().zip(zi.iter_mut()) {
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z[0];
                z[0] = b1 * xin - a1 * y + z[1];
                z[1] = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Zero-phase filtering with odd reflection padding of `padlen` samples at
    /// both ends and steady-state initial conditions.
    pub fn filtfilt_with_padlen(&self, x: &[f64], padlen: usize) -> Result<Vec<f64>> {
        let n = x.len();
        if n <= padlen {
            return Err(Error::TooShort { len: n, min: padlen });
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut ext = Vec::with_capacity(n + 2 * padlen);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=padlen).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=padlen).map(|i| 2.0 * last - x[n - 1 - i]));

        let zi = self.step_zi();
        let x0 = ext[0];
        self.run(&mut ext, zi.iter().map(|z| [z[0] * x0, z[1] * x0]).collect());
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, zi.iter().map(|z| [z[0] * y0, z[1] * y0]).collect());
        ext.reverse();
        Ok(ext[padlen..padlen + n].to_vec())
    }

    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.filtfilt_with_padlen(x, self.default_padlen())
    }
}

/// Groups z-plane poles into conjugate pairs (real poles paired with each
/// other) and assigns two real zeros per section.
fn assemble(poles: Vec<Complex64>, mut zeros: Vec<f64>) -> Sos {
    const IMAG_EPS: f64 = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > IMAG_EPS).collect();
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= IMAG_EPS).map(|p| p.re).collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(f64::total_cmp);
    zeros.sort_by(f64::total_cmp);

    let mut pole_pairs: Vec<(f64, f64)> = complex.iter().map(|p| (-2.0 * p.re, p.norm_sqr())).collect();
    let mut singles = Vec::new();
    let mut it = real.chunks(2);
    for chunk in &mut it {
        match *chunk {
            [p1, p2] => pole_pairs.push((-(p1 + p2), p1 * p2)),
            [p] => singles.push(p),
            _ => unreachable!(),
        }
    }

    let mut sections = Vec::new();
    for (a1, a2) in pole_pairs {
        // Pair the smallest remaining zero with the largest.
        let z1 = zeros.remove(0);
        let z2 = zeros.pop().unwrap_or(0.0);
        sections.push(Biquad { b: [1.0, -(z1 + z2), z1 * z2], a: [1.0, a1, a2] });
    }
    for p in singles {
        let z = zeros.pop().unwrap_or(0.0);
        sections.push(Biquad { b: [1.0, -z, 0.0], a: [1.0, -p, 0.0] });
    }
    Sos { sections }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: f64 = 5.0863;

    fn bp() -> Sos {
        let nyq = FS / 2.0;
        Sos::butter_bandpass(3, 0.01 / nyq, 0.1 / nyq).unwrap()
    }

    #[test]
    fn bandpass_section_count_and_shape() {
        let s = bp();
        assert_eq!(s.sections.len(), 3);
        // Unit gain in band, zero at DC and Nyquist.
        assert!((s.gain((0.01f64 * 0.1).sqrt(), FS) - 1.0).abs() < 1e-3);
        assert!(s.gain(0.0, FS) < 1e-9);
        assert!(s.gain(FS / 2.0, FS) < 1e-9);
    }

    #[test]
    fn bandpass_half_power_edges() {
        let s = bp();
        let g = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.gain(0.01, FS) - g).abs() < 1e-6);
        assert!((s.gain(0.1, FS) - g).abs() < 1e-6);
    }

    #[test]
    fn lowpass_dc_gain_is_one() {
        let s = Sos::butter_lowpass(4, 0.2).unwrap();
        assert!((s.gain(0.0, 2.0) - 1.0).abs() < 1e-12);
        assert!((s.gain(0.2, 2.0) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        let s = Sos::butter_lowpass(3, 0.3).unwrap();
        assert_eq!(s.sections.len(), 2);
        assert!((s.gain(0.0, 2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lowpass_preserves_constants() {
        let s = Sos::butter_lowpass(4, 0.1).unwrap();
        let y = s.filtfilt(&[3.25; 100]).unwrap();
        assert!(y.iter().all(|v| (v - 3.25).abs() < 1e-10));
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Sos::butter_bandpass(3, 0.2, 0.1).is_err());
        assert!(Sos::butter_bandpass(3, 0.1, 1.0).is_err());
        assert!(Sos::butter_lowpass(0, 0.1).is_err());
    }

    #[test]
    fn too_short_is_an_error() {
        let s = bp();
        assert!(matches!(s.filtfilt(&[1.0; 21]), Err(Error::TooShort { .. })));
        assert!(s.filtfilt(&[1.0; 22]).is_ok());
    }
}
