//! Signal conditioning from raw intensities to model inputs and targets.
//!
//! Two pipelines share the same stages:
//!
//! * [`Preprocessor::raw`] (model input): intensity → OD → band-pass →
//!   downsample, restricted to one region.
//! * [`Preprocessor::full`] (reconstruction target and baseline input):
//!   intensity → OD → motion correction → band-pass → Beer-Lambert →
//!   downsample.
//!
//! Every stage is column-wise, so region projection happens first.

pub mod filter;
pub mod mbll;
pub mod motion;
pub mod norm;

use std::path::PathBuf;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{Montage, Region, TrialRecording, MIN_LEN_SAMPLES};
use crate::error::{Error, Result};

pub use filter::Sos;
pub use mbll::{beer_lambert_forward, mbll, BeerLambert, ExtinctionTable};
pub use motion::{detect_motion_segments, spline_correct, Segment, SplineConfig};
pub use norm::{apply_norm, fit_norm, NormalizationStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Butterworth order of each pass; forward-backward doubles it.
    pub filter_order: usize,
    pub downsample_factor: usize,
    pub ppf: [f64; 2],
    /// Extinction table CSV; the shipped table when unset.
    pub extinction_table: Option<PathBuf>,
    pub motion_correction: bool,
    /// Correct motion on OD before band-pass filtering (otherwise after).
    pub correct_before_bandpass: bool,
    pub spline: SplineConfig,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            band_low_hz: 0.01,
            band_high_hz: 0.1,
            filter_order: 3,
            downsample_factor: 8,
            ppf: [0.1, 0.1],
            extinction_table: None,
            motion_correction: true,
            correct_before_bandpass: true,
            spline: SplineConfig::default(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self, fs: f64) -> Result<()> {
        if self.downsample_factor == 0 {
            return Err(Error::Config("downsample_factor must be >= 1".into()));
        }
        let nyquist = fs / self.downsample_factor as f64 / 2.0;
        if !(0.0 < self.band_low_hz && self.band_low_hz < self.band_high_hz && self.band_high_hz < nyquist) {
            return Err(Error::Config(format!(
                "band [{}, {}] Hz must satisfy 0 < low < high < {nyquist:.4} Hz",
                self.band_low_hz, self.band_high_hz
            )));
        }
        if !(self.ppf[0] > 0.0 && self.ppf[1] > 0.0) {
            return Err(Error::Config("partial pathlength factors must be positive".into()));
        }
        if self.filter_order == 0 {
            return Err(Error::Config("filter_order must be >= 1".into()));
        }
        if !(self.spline.p > 0.0 && self.spline.p <= 1.0) {
            return Err(Error::Config("spline smoothing p must lie in (0, 1]".into()));
        }
        Ok(())
    }

    pub fn effective_rate(&self, fs: f64) -> f64 {
        fs / self.downsample_factor as f64
    }
}

/// Change in optical density plus the per-column reference intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalDensity {
    pub data: Array2<f64>,
    pub reference: Vec<f64>,
}

/// `dOD[t, c] = -log10(I[t, c] / mean_t I[., c])`.
pub fn intensity_to_od(raw: &Array2<f64>) -> Result<OpticalDensity> {
    for ((row, column), &value) in raw.indexed_iter() {
        if !(value > 0.0) {
            return Err(Error::NonPositiveIntensity { row, column, value });
        }
    }
    // Averaging offsets from the first sample keeps a constant column's mean exact.
    let reference: Vec<f64> = raw
        .columns()
        .into_iter()
        .map(|c| c[0] + c.iter().map(|v| v - c[0]).sum::<f64>() / c.len() as f64)
        .collect();
    let mut data = raw.clone();
    for mut row in data.rows_mut() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = -(*v / reference[c]).log10();
        }
    }
    Ok(OpticalDensity { data, reference })
}

fn map_columns(x: &Array2<f64>, mut f: impl FnMut(&[f64]) -> Result<Vec<f64>>) -> Result<Array2<f64>> {
    let mut cols = Vec::with_capacity(x.ncols());
    let mut n_out = 0;
    for c in x.columns() {
        let y = f(&c.to_vec())?;
        n_out = y.len();
        cols.push(y);
    }
    Ok(Array2::from_shape_fn((n_out, x.ncols()), |(t, c)| cols[c][t]))
}

pub fn design_bandpass(cfg: &PreprocessConfig, fs: f64) -> Result<Sos> {
    let nyq = fs / 2.0;
    Sos::butter_bandpass(cfg.filter_order, cfg.band_low_hz / nyq, cfg.band_high_hz / nyq)
}

/// Zero-phase Butterworth band-pass applied to every column.
pub fn bandpass(x: &Array2<f64>, fs: f64, cfg: &PreprocessConfig) -> Result<Array2<f64>> {
    let sos = design_bandpass(cfg, fs)?;
    map_columns(x, |c| sos.filtfilt(c))
}

/// Zero-phase anti-alias low-pass at 0.8 of the new Nyquist, then keeps every
/// `factor`-th sample starting at 0. Output length is `ceil(len / factor)`.
pub fn downsample(x: &Array2<f64>, factor: usize) -> Result<Array2<f64>> {
    if factor == 0 {
        return Err(Error::Config("downsample factor must be >= 1".into()));
    }
    if factor == 1 || x.nrows() == 0 {
        return Ok(x.clone());
    }
    let sos = Sos::butter_lowpass(4, 0.8 / factor as f64)?;
    let padlen = sos.default_padlen().min(x.nrows() - 1);
    let smoothed = map_columns(x, |c| sos.filtfilt_with_padlen(c, padlen))?;
    let keep: Vec<usize> = (0..x.nrows()).step_by(factor).collect();
    Ok(smoothed.select(Axis(0), &keep))
}

/// Fully processed concentration changes for one region, micromolar.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromophoreSeries {
    /// `<chan>:HbO`, `<chan>:HbR` per channel.
    pub columns: Vec<String>,
    pub sample_rate_hz: f64,
    pub data: Array2<f64>,
}

/// Model input for one region: band-limited, downsampled OD.
#[derive(Debug, Clone, PartialEq)]
pub struct OdSeries {
    pub columns: Vec<String>,
    pub sample_rate_hz: f64,
    pub data: Array2<f64>,
}

/// Filters and Beer-Lambert model resolved once for a montage.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    pub cfg: PreprocessConfig,
    pub montage: Montage,
    pub beer_lambert: BeerLambert,
    bandpass: Sos,
}

impl Preprocessor {
    pub fn new(cfg: &PreprocessConfig, montage: &Montage) -> Result<Preprocessor> {
        cfg.validate(montage.sample_rate_hz)?;
        let table = match &cfg.extinction_table {
            Some(p) => ExtinctionTable::load(p)?,
            None => ExtinctionTable::shipped(),
        };
        let idx = montage.wavelength_indices();
        let wl = [montage.wavelengths_nm[idx[0]], montage.wavelengths_nm[idx[1]]];
        let ppf = [cfg.ppf[idx[0]], cfg.ppf[idx[1]]];
        let beer_lambert = BeerLambert::from_table(&table, wl, ppf)?;
        // Invertibility is checked up front for every separation in the montage.
        for ch in montage.long_channels() {
            beer_lambert.inverse(ch.separation_cm)?;
        }
        Ok(Preprocessor {
            cfg: cfg.clone(),
            montage: montage.clone(),
            beer_lambert,
            bandpass: design_bandpass(cfg, montage.sample_rate_hz)?,
        })
    }

    pub fn fs(&self) -> f64 {
        self.montage.sample_rate_hz
    }

    pub fn effective_rate(&self) -> f64 {
        self.cfg.effective_rate(self.fs())
    }

    fn region_od(&self, trial: &TrialRecording, region: Region) -> Result<(Array2<f64>, Vec<String>)> {
        let projected = crate::data::select_region(trial, &self.montage, region)?;
        let od = intensity_to_od(&projected.raw)?;
        Ok((od.data, projected.columns))
    }

    fn bandpass(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        map_columns(x, |c| self.bandpass.filtfilt(c))
    }

    fn check_len(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() < MIN_LEN_SAMPLES {
            return Err(Error::TooShort { len: x.nrows(), min: MIN_LEN_SAMPLES - 1 });
        }
        Ok(())
    }

    /// Band-limited OD for `region`, the end-to-end model input.
    pub fn raw(&self, trial: &TrialRecording, region: Region) -> Result<OdSeries> {
        let (od, columns) = self.region_od(trial, region)?;
        let filtered = self.bandpass(&od)?;
        let data = downsample(&filtered, self.cfg.downsample_factor)?;
        self.check_len(&data)?;
        Ok(OdSeries { columns, sample_rate_hz: self.effective_rate(), data })
    }

    /// Fully processed HbO/HbR for `region`.
    pub fn full(&self, trial: &TrialRecording, region: Region) -> Result<ChromophoreSeries> {
        let (od, _) = self.region_od(trial, region)?;
        let corrected = if self.cfg.correct_before_bandpass {
            let od = self.motion_correct(od)?;
            self.bandpass(&od)?
        } else {
            let filtered = self.bandpass(&od)?;
            self.motion_correct(filtered)?
        };
        let channels = self.montage.region_channels(region);
        let seps: Vec<f64> = channels.iter().map(|c| c.separation_cm).collect();
        let conc = mbll(&corrected, &self.beer_lambert, &seps)?;
        let data = downsample(&conc, self.cfg.downsample_factor)?;
        self.check_len(&data)?;
        let columns = channels
            .iter()
            .flat_map(|c| [format!("{}:HbO", c.id), format!("{}:HbR", c.id)])
            .collect();
        Ok(ChromophoreSeries { columns, sample_rate_hz: self.effective_rate(), data })
    }

    fn motion_correct(&self, od: Array2<f64>) -> Result<Array2<f64>> {
        if !self.cfg.motion_correction {
            return Ok(od);
        }
        let segments = detect_motion_segments(&od, self.fs(), &self.cfg.spline);
        if segments.is_empty() {
            return Ok(od);
        }
        let (out, _) = spline_correct(&od, &segments, self.fs(), self.cfg.spline.p)?;
        Ok(out)
    }
}

/// End-to-end model input for one trial and region.
pub fn preprocess_raw(trial: &TrialRecording, cfg: &PreprocessConfig, montage: &Montage, region: Region) -> Result<OdSeries> {
    Preprocessor::new(cfg, montage)?.raw(trial, region)
}

/// Fully processed chromophores for one trial and region.
pub fn preprocess_full(
    trial: &TrialRecording,
    cfg: &PreprocessConfig,
    montage: &Montage,
    region: Region,
) -> Result<ChromophoreSeries> {
    Preprocessor::new(cfg, montage)?.full(trial, region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Label, Task};

    #[test]
    fn od_of_constant_is_zero_and_half_intensity_is_log2() {
        let raw = Array2::from_shape_fn((4, 2), |(t, c)| if c == 0 { 7.5 } else if t % 2 == 0 { 1.0 } else { 3.0 });
        let od = intensity_to_od(&raw).unwrap();
        assert!(od.data.column(0).iter().all(|&v| v == 0.0));
        // mean of column 1 is 2, so I = 1 is half the mean.
        assert!((od.data[[0, 1]] - 2f64.log10()).abs() < 1e-15);
        assert!((od.data[[0, 1]] - 0.30103).abs() < 1e-5);
        assert_eq!(od.reference, vec![7.5, 2.0]);
    }

    #[test]
    fn od_rejects_nonpositive() {
        let mut raw = Array2::from_elem((3, 2), 1.0);
        raw[[2, 1]] = 0.0;
        assert!(matches!(
            intensity_to_od(&raw),
            Err(Error::NonPositiveIntensity { row: 2, column: 1, .. })
        ));
    }

    #[test]
    fn od_is_scale_invariant() {
        let raw = Array2::from_shape_fn((20, 3), |(t, c)| 1.0 + 0.1 * ((t * (c + 1)) as f64).sin());
        let a = intensity_to_od(&raw).unwrap().data;
        let b = intensity_to_od(&(&raw * 37.0)).unwrap().data;
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn downsample_rules() {
        let x = Array2::from_shape_fn((101, 2), |(t, _)| t as f64);
        assert_eq!(downsample(&x, 1).unwrap(), x);
        let c = Array2::from_elem((101, 2), 4.0);
        let y = downsample(&c, 8).unwrap();
        assert_eq!(y.nrows(), 13);
        assert!(y.iter().all(|v| (v - 4.0).abs() < 1e-10));
        assert!(downsample(&c, 0).is_err());
        assert!((PreprocessConfig::default().effective_rate(5.0863) - 0.6358).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        let fs = 5.0863;
        assert!(PreprocessConfig::default().validate(fs).is_ok());
        let bad = PreprocessConfig { band_high_hz: 0.5, ..Default::default() };
        assert!(bad.validate(fs).is_err());
        let bad = PreprocessConfig { ppf: [0.1, 0.0], ..Default::default() };
        assert!(bad.validate(fs).is_err());
    }

    fn flat_trial(n: usize, montage: &Montage) -> TrialRecording {
        TrialRecording {
            subject_id: "S1".into(),
            task: Task::FlsSuturing,
            day: 1,
            trial_index: 1,
            label: Label::Successful,
            columns: montage.raw_columns(),
            raw: Array2::from_elem((n, 2 * montage.n_long()), 2.0),
        }
    }

    #[test]
    fn flat_intensity_gives_zero_chromophores() {
        let m = Montage::custom();
        let out = preprocess_full(&flat_trial(300, &m), &PreprocessConfig::default(), &m, Region::RMC).unwrap();
        assert_eq!(out.data.ncols(), 12);
        assert_eq!(out.data.nrows(), 38);
        assert!(out.data.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(out.columns[0], format!("{}:HbO", m.region_channels(Region::RMC)[0].id));
    }

    #[test]
    fn short_trials_are_rejected() {
        let m = Montage::custom();
        let cfg = PreprocessConfig::default();
        // 16 * 8 = 128 raw samples -> 16 after downsampling.
        assert!(matches!(preprocess_raw(&flat_trial(128, &m), &cfg, &m, Region::SMA), Err(Error::TooShort { .. })));
        assert_eq!(preprocess_raw(&flat_trial(129, &m), &cfg, &m, Region::SMA).unwrap().data.nrows(), 17);
    }
}
