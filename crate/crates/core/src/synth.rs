//! Synthetic raw-intensity trials with known concentration changes.
//!
//! Each trial is built forward: a block task design convolved with a
//! double-gamma response gives HbO and HbR changes per channel; the forward
//! Beer-Lambert model turns them into optical density; systemic
//! oscillations, drift, white noise and motion artifacts are added in OD;
//! intensity is `I0 * 10^(-OD)`. Positive (unsuccessful) trials scale the
//! response in the regions listed in `class_effect`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{
    write_matrix_csv, DatasetManifest, Label, ManifestRecord, Montage, Region, Task, TrialRecording, MIN_LEN_SAMPLES,
};
use crate::error::{Error, Result};
use crate::preprocess::mbll::{beer_lambert_forward, BeerLambert, ExtinctionTable};
use crate::preprocess::motion::{merge_segments, Segment};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HrfParams {
    pub peak_shape: f64,
    pub undershoot_shape: f64,
    pub undershoot_ratio: f64,
}

impl Default for HrfParams {
    fn default() -> Self {
        HrfParams { peak_shape: 6.5, undershoot_shape: 16.0, undershoot_ratio: 1.0 / 6.0 }
    }
}

fn gamma_pdf(t: f64, shape: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    ((shape - 1.0) * t.ln() - t - libm::lgamma(shape)).exp()
}

fn double_gamma(t: f64, p: &HrfParams) -> f64 {
    gamma_pdf(t, p.peak_shape) - p.undershoot_ratio * gamma_pdf(t, p.undershoot_shape)
}

/// Double-gamma response scaled to a unit maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hrf {
    pub params: HrfParams,
    peak: f64,
}

impl Hrf {
    pub fn new(params: HrfParams) -> Hrf {
        // Golden-section search for the maximum of the unimodal positive lobe.
        let f = |t: f64| double_gamma(t, &params);
        let (mut a, mut b) = (0.1, 3.0 * params.peak_shape.max(1.0));
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) > f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        Hrf { params, peak: f(0.5 * (a + b)) }
    }

    pub fn eval(&self, t: f64) -> f64 {
        double_gamma(t, &self.params) / self.peak
    }

    /// Samples on `[0, length_s)` at `fs`, scaled to unit sum.
    pub fn kernel(&self, fs: f64, length_s: f64) -> Vec<f64> {
        let n = (length_s * fs).ceil() as usize;
        let k: Vec<f64> = (0..n).map(|i| self.eval(i as f64 / fs)).collect();
        let s: f64 = k.iter().sum();
        k.into_iter().map(|v| v / s).collect()
    }
}

/// Canonical response at `t` seconds, unit peak.
pub fn hrf(t: f64, params: &HrfParams) -> f64 {
    Hrf::new(*params).eval(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        if self.max > self.min {
            rng.random_range(self.min..self.max)
        } else {
            self.min
        }
    }

    fn check(&self, what: &str) -> Result<()> {
        if !(self.min >= 0.0 && self.max >= self.min && self.max.is_finite()) {
            return Err(Error::Config(format!("{what}: need 0 <= min <= max, got {self:?}")));
        }
        Ok(())
    }
}

/// Alternating rest/task blocks within a trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlockDesign {
    pub lead_s: Range,
    pub on_s: Range,
    pub off_s: Range,
}

impl Default for BlockDesign {
    fn default() -> Self {
        BlockDesign {
            lead_s: Range { min: 2.0, max: 6.0 },
            on_s: Range { min: 8.0, max: 12.0 },
            off_s: Range { min: 8.0, max: 12.0 },
        }
    }
}

/// Systemic and sensor noise in OD units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub cardiac_hz: f64,
    pub cardiac_amp: f64,
    pub resp_hz: f64,
    pub resp_amp: f64,
    pub mayer_hz: f64,
    pub mayer_amp: f64,
    /// Largest absolute linear drift, OD per second.
    pub drift_slope: f64,
    pub white_sd: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            cardiac_hz: 1.1,
            cardiac_amp: 2e-3,
            resp_hz: 0.25,
            resp_amp: 1e-3,
            mayer_hz: 0.1,
            mayer_amp: 2e-4,
            drift_slope: 5e-5,
            white_sd: 5e-4,
        }
    }
}

impl NoiseConfig {
    pub fn silent() -> NoiseConfig {
        NoiseConfig {
            cardiac_amp: 0.0,
            resp_amp: 0.0,
            mayer_amp: 0.0,
            drift_slope: 0.0,
            white_sd: 0.0,
            ..NoiseConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionConfig {
    pub rate_per_min: f64,
    /// Peak OD of a spike.
    pub spike_od: f64,
    /// OD offset of a baseline shift.
    pub step_od: f64,
    /// Fraction of events that are spikes; the rest are shifts.
    pub spike_fraction: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        MotionConfig { rate_per_min: 0.2, spike_od: 0.1, step_od: 0.002, spike_fraction: 0.7 }
    }
}

/// Half-width of a spike, seconds.
const SPIKE_HALF_S: f64 = 1.5;
/// Half-width of the window logged around a shift, seconds.
const STEP_HALF_S: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub n_subjects: usize,
    pub days: u32,
    pub trials_per_day: u32,
    pub task: Task,
    /// `"10-10"`, `"custom"` or a montage JSON path.
    pub montage: String,
    pub duration_s: Range,
    pub max_duration_s: f64,
    /// Share of trials labelled unsuccessful (the positive class).
    pub positive_fraction: f64,
    pub hbo_amplitude_um: f64,
    /// HbR change as a fraction of the HbO change, opposite sign.
    pub hbr_ratio: f64,
    /// Response multiplier applied to positive trials, per region.
    pub class_effect: BTreeMap<Region, f64>,
    /// Per-trial-index shrinkage of the class effect: the excess multiplier
    /// is scaled by `(1 - decay)^(trial - 1)`.
    pub effect_decay_per_trial: f64,
    pub hrf: HrfParams,
    pub block: BlockDesign,
    pub noise: NoiseConfig,
    pub motion: MotionConfig,
    pub baseline_intensity: Range,
    /// SD of the log subject gain.
    pub subject_variability: f64,
    /// SD of the log trial gain.
    pub trial_variability: f64,
    /// SD of the per-channel gain around 1.
    pub channel_variability: f64,
    pub ppf: [f64; 2],
    pub downsample_factor: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 2024,
            n_subjects: 6,
            days: 4,
            trials_per_day: 10,
            task: Task::FlsSuturing,
            montage: "10-10".into(),
            duration_s: Range { min: 30.0, max: 70.0 },
            max_duration_s: 600.0,
            positive_fraction: 5.0 / 6.0,
            hbo_amplitude_um: 4.0,
            hbr_ratio: 0.3,
            class_effect: [(Region::RPFC, 2.0), (Region::LSMC, 2.0), (Region::RSMC, 2.0)].into_iter().collect(),
            effect_decay_per_trial: 0.0,
            hrf: HrfParams::default(),
            block: BlockDesign::default(),
            noise: NoiseConfig::default(),
            motion: MotionConfig::default(),
            baseline_intensity: Range { min: 0.5, max: 1.5 },
            subject_variability: 0.1,
            trial_variability: 0.05,
            channel_variability: 0.1,
            ppf: [0.1, 0.1],
            downsample_factor: 8,
        }
    }
}

impl ScenarioConfig {
    pub fn n_trials(&self) -> usize {
        self.n_subjects * self.days as usize * self.trials_per_day as usize
    }

    pub fn validate(&self, montage: &Montage) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_subjects == 0 || self.days == 0 || self.trials_per_day == 0 {
            return bad("scenario needs at least one subject, day and trial".into());
        }
        self.duration_s.check("duration_s")?;
        let min_s = (MIN_LEN_SAMPLES * self.downsample_factor) as f64 / montage.sample_rate_hz;
        if self.duration_s.min < min_s {
            return bad(format!(
                "shortest trial {} s is below {min_s:.2} s ({} model steps after downsampling by {})",
                self.duration_s.min, MIN_LEN_SAMPLES, self.downsample_factor
            ));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad(format!("positive_fraction {} outside [0, 1]", self.positive_fraction));
        }
        if !(0.0..1.0).contains(&self.effect_decay_per_trial) {
            return bad("effect_decay_per_trial must lie in [0, 1)".into());
        }
        let n = &self.noise;
        let m = &self.motion;
        let amps = [
            self.hbo_amplitude_um,
            self.hbr_ratio,
            n.cardiac_amp,
            n.resp_amp,
            n.mayer_amp,
            n.drift_slope,
            n.white_sd,
            m.rate_per_min,
            m.spike_od,
            m.step_od,
            self.subject_variability,
            self.trial_variability,
            self.channel_variability,
        ];
        if amps.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return bad("amplitudes, rates and variabilities must be finite and nonnegative".into());
        }
        if !(0.0..=1.0).contains(&m.spike_fraction) {
            return bad("spike_fraction must lie in [0, 1]".into());
        }
        if self.class_effect.values().any(|v| !(*v > 0.0)) {
            return bad("class_effect multipliers must be positive".into());
        }
        self.block.lead_s.check("block.lead_s")?;
        self.block.on_s.check("block.on_s")?;
        self.block.off_s.check("block.off_s")?;
        self.baseline_intensity.check("baseline_intensity")?;
        if self.baseline_intensity.min <= 0.0 {
            return bad("baseline intensity must be positive".into());
        }
        if self.ppf.iter().any(|p| !(*p > 0.0)) {
            return bad("ppf must be positive".into());
        }
        Ok(())
    }

    /// Beer-Lambert model for `montage` with this scenario's path-length factors.
    pub fn beer_lambert(&self, montage: &Montage) -> Result<BeerLambert> {
        let idx = montage.wavelength_indices();
        let wl = [montage.wavelengths_nm[idx[0]], montage.wavelengths_nm[idx[1]]];
        BeerLambert::from_table(&ExtinctionTable::shipped(), wl, [self.ppf[idx[0]], self.ppf[idx[1]]])
    }

    fn multiplier(&self, region: Region, label: Label, trial_index: u32) -> f64 {
        if !label.is_positive() {
            return 1.0;
        }
        let m = self.class_effect.get(&region).copied().unwrap_or(1.0);
        let keep = (1.0 - self.effect_decay_per_trial).powi(trial_index.saturating_sub(1) as i32);
        1.0 + (m - 1.0) * keep
    }
}

/// Per-subject draws shared by all of that subject's trials.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectParams {
    pub index: usize,
    pub id: String,
    pub gain: f64,
    /// One per long channel.
    pub channel_gain: Vec<f64>,
    /// One per raw column.
    pub baseline_intensity: Vec<f64>,
}

pub fn subject_id(index: usize) -> String {
    format!("S{:02}", index + 1)
}

impl SubjectParams {
    pub fn draw(index: usize, cfg: &ScenarioConfig, montage: &Montage) -> SubjectParams {
        let mut rng = seeds::substream(cfg.seed, &[seeds::SYNTH_SUBJECT, index as u64]);
        let gain = lognormal(&mut rng, cfg.subject_variability);
        let n_long = montage.n_long();
        let channel_gain = (0..n_long)
            .map(|_| (1.0 + cfg.channel_variability * standard_normal(&mut rng)).max(0.2))
            .collect();
        let baseline_intensity = (0..2 * n_long).map(|_| cfg.baseline_intensity.sample(&mut rng)).collect();
        SubjectParams { index, id: subject_id(index), gain, channel_gain, baseline_intensity }
    }
}

fn standard_normal(rng: &mut impl Rng) -> f64 {
    Normal::new(0.0, 1.0).expect("unit normal").sample(rng)
}

fn lognormal(rng: &mut impl Rng, sd: f64) -> f64 {
    (sd * standard_normal(rng)).exp()
}

/// Known answer for one synthetic trial.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub label: Label,
    /// `<chan>:HbO`, `<chan>:HbR` for every long channel, micromolar.
    pub columns: Vec<String>,
    pub dc: Array2<f64>,
    /// Injected motion artifacts (merged, half-open sample ranges).
    pub artifacts: Vec<Segment>,
    /// 1 during task blocks.
    pub boxcar: Vec<f64>,
}

impl GroundTruth {
    /// Columns of `dc` covering `region`, in the same order as the preprocessed series.
    pub fn region_dc(&self, montage: &Montage, region: Region) -> Result<Array2<f64>> {
        Ok(self.dc.select(ndarray::Axis(1), &montage.region_columns(region)?))
    }
}

/// Which trial to simulate.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub day: u32,
    pub trial: u32,
    pub label: Label,
}

fn boxcar(n: usize, fs: f64, design: &BlockDesign, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let mut t = design.lead_s.sample(rng);
    loop {
        let on = design.on_s.sample(rng);
        let start = (t * fs).round() as usize;
        let end = (((t + on) * fs).round() as usize).min(n);
        if start >= n {
            break;
        }
        out[start..end].iter_mut().for_each(|v| *v = 1.0);
        t += on + design.off_s.sample(rng);
    }
    out
}

fn convolve_causal(x: &[f64], k: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|t| k.iter().enumerate().take(t + 1).map(|(j, kv)| kv * x[t - j]).sum())
        .collect()
}

/// Simulates one trial. All randomness comes from `rng`, in a fixed order.
pub fn simulate_trial(
    spec: &TrialSpec,
    subject: &SubjectParams,
    cfg: &ScenarioConfig,
    montage: &Montage,
    rng: &mut impl Rng,
) -> Result<(TrialRecording, GroundTruth)> {
    cfg.validate(montage)?;
    let fs = montage.sample_rate_hz;
    let duration = cfg.duration_s.sample(rng);
    let n = (duration * fs).round() as usize;
    let long: Vec<_> = montage.long_channels().collect();
    let n_cols = 2 * long.len();

    // Evoked concentration changes.
    let boxcar = boxcar(n, fs, &cfg.block, rng);
    let kernel = Hrf::new(cfg.hrf).kernel(fs, 30.0);
    let response = convolve_causal(&boxcar, &kernel);
    let trial_gain = lognormal(rng, cfg.trial_variability);
    let mut dc = Array2::zeros((n, n_cols));
    for (c, ch) in long.iter().enumerate() {
        let amp = cfg.hbo_amplitude_um
            * subject.gain
            * trial_gain
            * subject.channel_gain[c]
            * cfg.multiplier(ch.region, spec.label, spec.trial);
        for t in 0..n {
            dc[[t, 2 * c]] = amp * response[t];
            dc[[t, 2 * c + 1]] = -cfg.hbr_ratio * amp * response[t];
        }
    }
    let seps: Vec<f64> = long.iter().map(|c| c.separation_cm).collect();
    let mut od = beer_lambert_forward(&dc, &cfg.beer_lambert(montage)?, &seps)?;

    // Systemic oscillations share a phase across channels; drift and white noise do not.
    let nz = &cfg.noise;
    let jitter = |rng: &mut dyn rand::RngCore| 1.0 + 0.05 * (rng.random::<f64>() * 2.0 - 1.0);
    let systemic = [
        (nz.cardiac_hz * jitter(rng), nz.cardiac_amp, rng.random::<f64>() * 2.0 * PI),
        (nz.resp_hz * jitter(rng), nz.resp_amp, rng.random::<f64>() * 2.0 * PI),
        (nz.mayer_hz * jitter(rng), nz.mayer_amp, rng.random::<f64>() * 2.0 * PI),
    ];
    let white = Normal::new(0.0, nz.white_sd.max(f64::MIN_POSITIVE)).expect("finite sd");
    for c in 0..n_cols {
        let scales: Vec<f64> = (0..3).map(|_| rng.random_range(0.7..1.3)).collect();
        let slope = nz.drift_slope * (rng.random::<f64>() * 2.0 - 1.0);
        for t in 0..n {
            let ts = t as f64 / fs;
            let mut v = slope * ts;
            for ((f, a, ph), s) in systemic.iter().zip(&scales) {
                v += s * a * (2.0 * PI * f * ts + ph).sin();
            }
            if nz.white_sd > 0.0 {
                v += white.sample(rng);
            }
            od[[t, c]] += v;
        }
    }

    // Motion artifacts.
    let mc = &cfg.motion;
    let mut artifacts = Vec::new();
    let expected = mc.rate_per_min * duration / 60.0;
    let count = if expected > 0.0 {
        Poisson::new(expected).expect("positive rate").sample(rng) as usize
    } else {
        0
    };
    for _ in 0..count {
        let onset = rng.random_range(0..n);
        let spike = rng.random::<f64>() < mc.spike_fraction;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let col_scale: Vec<f64> = (0..n_cols).map(|_| rng.random_range(0.5..1.0)).collect();
        if spike {
            let half = (SPIKE_HALF_S * fs).round() as usize;
            let (lo, hi) = (onset.saturating_sub(half), (onset + half + 1).min(n));
            let tau = 0.3 * fs;
            for t in lo..hi {
                let shape = (-(t as f64 - onset as f64).abs() / tau).exp();
                for c in 0..n_cols {
                    od[[t, c]] += sign * mc.spike_od * col_scale[c] * shape;
                }
            }
            artifacts.push(Segment { start: lo, end: hi });
        } else {
            let half = (STEP_HALF_S * fs).round() as usize;
            for t in onset..n {
                for c in 0..n_cols {
                    od[[t, c]] += sign * mc.step_od * col_scale[c];
                }
            }
            artifacts.push(Segment { start: onset.saturating_sub(half), end: (onset + half + 1).min(n) });
        }
    }

    let mut raw = Array2::zeros((n, n_cols));
    for t in 0..n {
        for c in 0..n_cols {
            raw[[t, c]] = subject.baseline_intensity[c] * 10f64.powf(-od[[t, c]]);
        }
    }
    let recording = TrialRecording {
        subject_id: subject.id.clone(),
        task: cfg.task,
        day: spec.day,
        trial_index: spec.trial,
        label: spec.label,
        columns: montage.raw_columns(),
        raw,
    };
    let truth = GroundTruth {
        label: spec.label,
        columns: long.iter().flat_map(|c| [format!("{}:HbO", c.id), format!("{}:HbR", c.id)]).collect(),
        dc,
        artifacts: merge_segments(artifacts),
        boxcar,
    };
    Ok((recording, truth))
}

/// One generated trial with its manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTrial {
    pub recording: TrialRecording,
    pub truth: GroundTruth,
    pub record: ManifestRecord,
}

fn trial_stem(subject: &str, day: u32, trial: u32) -> String {
    format!("{subject}_d{day:02}_t{trial:02}")
}

/// Labels for trials in (subject, day, trial) order: exactly
/// `round(n * positive_fraction)` positives at shuffled positions.
pub fn assign_labels(cfg: &ScenarioConfig) -> Vec<Label> {
    let n = cfg.n_trials();
    let n_pos = (n as f64 * cfg.positive_fraction).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::substream(cfg.seed, &[seeds::SYNTH_LABELS]));
    let mut labels = vec![Label::Successful; n];
    for &i in &order[..n_pos] {
        labels[i] = Label::Unsuccessful;
    }
    labels
}

/// Generates every trial of the scenario in memory.
pub fn generate_trials(cfg: &ScenarioConfig, montage: &Montage) -> Result<Vec<SynthTrial>> {
    cfg.validate(montage)?;
    let labels = assign_labels(cfg);
    let mut out = Vec::with_capacity(labels.len());
    let mut i = 0;
    for s in 0..cfg.n_subjects {
        let subject = SubjectParams::draw(s, cfg, montage);
        for day in 1..=cfg.days {
            for trial in 1..=cfg.trials_per_day {
                let spec = TrialSpec { day, trial, label: labels[i] };
                i += 1;
                let mut rng = seeds::substream(cfg.seed, &[seeds::SYNTH_TRIAL, s as u64, day as u64, trial as u64]);
                let (recording, truth) = simulate_trial(&spec, &subject, cfg, montage, &mut rng)?;
                let duration_s = recording.n_samples() as f64 / montage.sample_rate_hz;
                let score_rng = rng.random::<f64>();
                let fls_score = if spec.label.is_positive() { 10.0 + 50.0 * score_rng } else { 60.0 + 40.0 * score_rng };
                let record = ManifestRecord {
                    subject: subject.id.clone(),
                    task: cfg.task,
                    day,
                    trial,
                    label: spec.label,
                    duration_s,
                    fls_score: Some((fls_score * 10.0).round() / 10.0),
                    logged_duration_s: Some(duration_s),
                    n_samples: Some(recording.n_samples()),
                    path: PathBuf::from("trials").join(format!("{}.csv", trial_stem(&subject.id, day, trial))),
                };
                out.push(SynthTrial { recording, truth, record });
            }
        }
    }
    Ok(out)
}

/// Path of the ground-truth file written beside a trial CSV.
pub fn truth_path(trial_csv: &Path) -> PathBuf {
    trial_csv.with_extension("truth.csv")
}

fn write_truth(path: &Path, fs: f64, truth: &GroundTruth) -> Result<()> {
    let n = truth.dc.nrows();
    let mut data = Array2::zeros((n, truth.dc.ncols() + 2));
    let mut in_artifact = vec![0.0; n];
    for s in &truth.artifacts {
        in_artifact[s.start..s.end].iter_mut().for_each(|v| *v = 1.0);
    }
    for t in 0..n {
        for c in 0..truth.dc.ncols() {
            data[[t, c]] = truth.dc[[t, c]];
        }
        data[[t, truth.dc.ncols()]] = truth.boxcar[t];
        data[[t, truth.dc.ncols() + 1]] = in_artifact[t];
    }
    let mut columns = truth.columns.clone();
    columns.push("task".into());
    columns.push("motion".into());
    write_matrix_csv(path, fs, &columns, &data)
}

/// Reads a ground-truth file back: concentration columns, task boxcar and artifact segments.
pub fn read_truth(path: &Path, label: Label) -> Result<GroundTruth> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| Error::parse(path, e))?.iter().map(str::to_string).collect();
    if headers.len() < 3 || headers[0] != "t_s" || headers[headers.len() - 2] != "task" || headers[headers.len() - 1] != "motion" {
        return Err(Error::parse(path, "expected t_s, concentration columns, task, motion"));
    }
    let n_dc = headers.len() - 3;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        let vals: std::result::Result<Vec<f64>, _> = row.iter().skip(1).map(|f| f.trim().parse::<f64>()).collect();
        rows.push(vals.map_err(|e| Error::parse(path, e))?);
    }
    let n = rows.len();
    let dc = Array2::from_shape_fn((n, n_dc), |(t, c)| rows[t][c]);
    let boxcar = rows.iter().map(|r| r[n_dc]).collect();
    let mut artifacts = Vec::new();
    let mut start = None;
    for (t, r) in rows.iter().enumerate() {
        match (r[n_dc + 1] > 0.5, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                artifacts.push(Segment { start: s, end: t });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        artifacts.push(Segment { start: s, end: n });
    }
    Ok(GroundTruth { label, columns: headers[1..=n_dc].to_vec(), dc, artifacts, boxcar })
}

/// Writes trials, ground truth, the montage and `manifest.json` under `out_dir`.
pub fn generate_dataset(cfg: &ScenarioConfig, out_dir: &Path) -> Result<DatasetManifest> {
    let montage = Montage::resolve(&cfg.montage)?;
    let trials = generate_trials(cfg, &montage)?;
    let trial_dir = out_dir.join("trials");
    fs::create_dir_all(&trial_dir).map_err(|e| Error::io(&trial_dir, e))?;
    let montage_path = out_dir.join("montage.json");
    let text = serde_json::to_string_pretty(&montage).expect("montage serialises");
    fs::write(&montage_path, text).map_err(|e| Error::io(&montage_path, e))?;
    let fs_hz = montage.sample_rate_hz;
    for t in &trials {
        let path = out_dir.join(&t.record.path);
        write_matrix_csv(&path, fs_hz, &t.recording.columns, &t.recording.raw)?;
        write_truth(&truth_path(&path), fs_hz, &t.truth)?;
    }
    let manifest = DatasetManifest {
        montage,
        base_dir: out_dir.to_path_buf(),
        max_duration_s: cfg.max_duration_s,
        min_len_samples: MIN_LEN_SAMPLES,
        downsample_factor: cfg.downsample_factor,
        duration_tolerance: 0.10,
        records: trials.into_iter().map(|t| t.record).collect(),
    };
    manifest.write(&out_dir.join("manifest.json"), Path::new("montage.json"))?;
    Ok(manifest)
}
