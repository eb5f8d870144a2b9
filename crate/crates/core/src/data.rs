//! Montage descriptors, trial recordings, dataset manifests and the trial
//! exclusion rules.
//!
//! Trial columns are named `<channel_id>@<wavelength>` and ordered by montage
//! channel order, shorter wavelength first within a channel. Only long
//! separation channels carry data columns.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum trial length, in samples after downsampling, that the network accepts.
pub const MIN_LEN_SAMPLES: usize = 17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    LPFC,
    RPFC,
    LSMA,
    RSMA,
    LSMC,
    RSMC,
    LPAR,
    RPAR,
    SMA,
    LMC,
    RMC,
}

impl Region {
    pub const ALL: [Region; 11] = [
        Region::LPFC,
        Region::RPFC,
        Region::LSMA,
        Region::RSMA,
        Region::LSMC,
        Region::RSMC,
        Region::LPAR,
        Region::RPAR,
        Region::SMA,
        Region::LMC,
        Region::RMC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::LPFC => "LPFC",
            Region::RPFC => "RPFC",
            Region::LSMA => "LSMA",
            Region::RSMA => "RSMA",
            Region::LSMC => "LSMC",
            Region::RSMC => "RSMC",
            Region::LPAR => "LPAR",
            Region::RPAR => "RPAR",
            Region::SMA => "SMA",
            Region::LMC => "LMC",
            Region::RMC => "RMC",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .iter()
            .copied()
            .find(|r| r.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::UnknownRegion(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelKind {
    Long,
    Short,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Channel {
    pub id: String,
    #[serde(rename = "source")]
    pub source_id: String,
    #[serde(rename = "detector")]
    pub detector_id: String,
    pub separation_cm: f64,
    pub region: Region,
    pub kind: ChannelKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Montage {
    #[serde(default)]
    pub name: String,
    pub wavelengths_nm: [f64; 2],
    pub sample_rate_hz: f64,
    pub channels: Vec<Channel>,
}

const TEN_TEN_JSON: &str = include_str!("../data/montage_10-10.json");
const CUSTOM_JSON: &str = include_str!("../data/montage_custom.json");

impl Montage {
    /// `"10-10"` and `"custom"` name the shipped layouts; anything else is a JSON path.
    pub fn resolve(spec: &str) -> Result<Montage> {
        match spec {
            "10-10" | "ten_ten" => Ok(Montage::ten_ten()),
            "custom" => Ok(Montage::custom()),
            path => Montage::load(Path::new(path)),
        }
    }

    /// The shipped 10-10 layout: 46 long and 8 short channels over 8 regions.
    pub fn ten_ten() -> Montage {
        Montage::from_json(TEN_TEN_JSON).expect("shipped 10-10 montage is valid")
    }

    /// The shipped pattern-cutting layout: 28 long channels over 5 regions.
    pub fn custom() -> Montage {
        Montage::from_json(CUSTOM_JSON).expect("shipped custom montage is valid")
    }

    pub fn from_json(text: &str) -> Result<Montage> {
        let m: Montage =
            serde_json::from_str(text).map_err(|e| Error::parse("<montage>", e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Montage> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Montage = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let [a, b] = self.wavelengths_nm;
        if !(a > 0.0 && b > 0.0) || a == b {
            return Err(Error::Config(format!(
                "montage needs two distinct positive wavelengths, got {a} and {b}"
            )));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::Config("montage sample rate must be positive".into()));
        }
        let mut seen = HashSet::new();
        for ch in &self.channels {
            if !seen.insert(ch.id.as_str()) {
                return Err(Error::Config(format!("duplicate channel id {}", ch.id)));
            }
            let nominal = match ch.kind {
                ChannelKind::Long => 3.0,
                ChannelKind::Short => 0.8,
            };
            let tol = match ch.kind {
                ChannelKind::Long => 0.5,
                ChannelKind::Short => 0.3,
            };
            if (ch.separation_cm - nominal).abs() > tol {
                return Err(Error::Config(format!(
                    "channel {} separation {} cm is not a {:?} channel",
                    ch.id, ch.separation_cm, ch.kind
                )));
            }
        }
        Ok(())
    }

    pub fn long_channels(&self) -> impl Iterator<Item = &Channel> {
        self.channels.iter().filter(|c| c.kind == ChannelKind::Long)
    }

    pub fn n_long(&self) -> usize {
        self.long_channels().count()
    }

    /// Regions that own at least one long channel, in first-appearance order.
    pub fn regions(&self) -> Vec<Region> {
        let mut out = Vec::new();
        for ch in self.long_channels() {
            if !out.contains(&ch.region) {
                out.push(ch.region);
            }
        }
        out
    }

    pub fn region_channels(&self, region: Region) -> Vec<&Channel> {
        self.long_channels().filter(|c| c.region == region).collect()
    }

    /// Wavelength label used in column names: integral values print without decimals.
    pub fn wavelength_label(&self, index: usize) -> String {
        let w = self.wavelengths_nm[index];
        if w.fract() == 0.0 {
            format!("{}", w as i64)
        } else {
            format!("{w}")
        }
    }

    /// Column names of a full raw trial for this montage.
    pub fn raw_columns(&self) -> Vec<String> {
        let labels = self.wavelength_order();
        self.long_channels()
            .flat_map(|c| labels.iter().map(move |w| format!("{}@{}", c.id, w)))
            .collect()
    }

    /// Wavelength labels, shortest wavelength first.
    pub fn wavelength_order(&self) -> [String; 2] {
        let (lo, hi) = if self.wavelengths_nm[0] <= self.wavelengths_nm[1] { (0, 1) } else { (1, 0) };
        [self.wavelength_label(lo), self.wavelength_label(hi)]
    }

    /// Wavelength indices (into `wavelengths_nm`), shortest first.
    pub fn wavelength_indices(&self) -> [usize; 2] {
        if self.wavelengths_nm[0] <= self.wavelengths_nm[1] {
            [0, 1]
        } else {
            [1, 0]
        }
    }

    /// Indices into the raw column list covering `region`, in column order.
    pub fn region_columns(&self, region: Region) -> Result<Vec<usize>> {
        let mut cols = Vec::new();
        for (i, ch) in self.long_channels().enumerate() {
            if ch.region == region {
                cols.push(2 * i);
                cols.push(2 * i + 1);
            }
        }
        if cols.is_empty() {
            return Err(Error::UnknownRegion(region.to_string()));
        }
        Ok(cols)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "FLS_S")]
    FlsSuturing,
    #[serde(rename = "FLS_PC")]
    FlsPatternCutting,
    #[serde(rename = "ETI")]
    Eti,
    #[serde(rename = "custom")]
    Custom,
}

/// Trial outcome. Successful trials are the negative class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Successful,
    Unsuccessful,
}

impl Label {
    pub fn is_positive(self) -> bool {
        self == Label::Unsuccessful
    }

    pub fn as_index(self) -> usize {
        match self {
            Label::Successful => 0,
            Label::Unsuccessful => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Label> {
        match i {
            0 => Ok(Label::Successful),
            1 => Ok(Label::Unsuccessful),
            other => Err(Error::InvalidInput(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn from_positive(positive: bool) -> Label {
        if positive {
            Label::Unsuccessful
        } else {
            Label::Successful
        }
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_index() as u8)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        Label::from_index(v as usize).map_err(serde::de::Error::custom)
    }
}

/// One task repetition: raw intensities (rows = samples, one column per
/// channel and wavelength) plus its identifying metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub subject_id: String,
    pub task: Task,
    pub day: u32,
    pub trial_index: u32,
    pub label: Label,
    pub columns: Vec<String>,
    pub raw: Array2<f64>,
}

impl TrialRecording {
    pub fn n_samples(&self) -> usize {
        self.raw.nrows()
    }

    pub fn key(&self) -> TrialKey {
        TrialKey { subject: self.subject_id.clone(), day: self.day, trial: self.trial_index }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TrialKey {
    pub subject: String,
    pub day: u32,
    pub trial: u32,
}

/// A manifest entry: trial metadata and where its samples live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub subject: String,
    pub task: Task,
    pub day: u32,
    pub trial: u32,
    pub label: Label,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fls_score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logged_duration_s: Option<f64>,
    /// Raw sample count; estimated from the duration when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_samples: Option<usize>,
    pub path: PathBuf,
}

impl ManifestRecord {
    pub fn key(&self) -> TrialKey {
        TrialKey { subject: self.subject.clone(), day: self.day, trial: self.trial }
    }
}

fn default_min_len() -> usize {
    MIN_LEN_SAMPLES
}
fn default_tolerance() -> f64 {
    0.10
}
fn default_factor() -> usize {
    8
}

/// On-disk manifest document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub montage: PathBuf,
    pub max_duration_s: f64,
    #[serde(default = "default_min_len")]
    pub min_len_samples: usize,
    #[serde(default = "default_factor")]
    pub downsample_factor: usize,
    /// Relative tolerance on |duration - logged duration|.
    #[serde(default = "default_tolerance")]
    pub duration_tolerance: f64,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub montage: Montage,
    /// Directory that relative record paths are resolved against.
    pub base_dir: PathBuf,
    pub max_duration_s: f64,
    pub min_len_samples: usize,
    pub downsample_factor: usize,
    pub duration_tolerance: f64,
    pub records: Vec<ManifestRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestSummary {
    pub n_records: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub subjects: Vec<String>,
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ManifestFile = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let montage = Montage::load(&base_dir.join(&file.montage))?;
    let manifest = DatasetManifest {
        montage,
        base_dir,
        max_duration_s: file.max_duration_s,
        min_len_samples: file.min_len_samples,
        downsample_factor: file.downsample_factor,
        duration_tolerance: file.duration_tolerance,
        records: file.records,
    };
    manifest.check_unique()?;
    for rec in &manifest.records {
        let p = manifest.resolve(rec);
        if !p.is_file() {
            return Err(Error::parse(path, format!("dangling trial path {}", p.display())));
        }
    }
    Ok(manifest)
}

impl DatasetManifest {
    pub fn check_unique(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for rec in &self.records {
            if !seen.insert(rec.key()) {
                return Err(Error::DuplicateTrial {
                    subject: rec.subject.clone(),
                    day: rec.day,
                    trial: rec.trial,
                });
            }
        }
        Ok(())
    }

    pub fn resolve(&self, rec: &ManifestRecord) -> PathBuf {
        self.base_dir.join(&rec.path)
    }

    pub fn summary(&self) -> ManifestSummary {
        let n_positive = self.records.iter().filter(|r| r.label.is_positive()).count();
        let mut subjects: Vec<String> = self.records.iter().map(|r| r.subject.clone()).collect();
        subjects.sort();
        subjects.dedup();
        ManifestSummary {
            n_records: self.records.len(),
            n_positive,
            n_negative: self.records.len() - n_positive,
            subjects,
        }
    }

    /// Writes the manifest document; `montage_path` is stored relative to the manifest.
    pub fn write(&self, path: &Path, montage_path: &Path) -> Result<()> {
        let file = ManifestFile {
            montage: montage_path.to_path_buf(),
            max_duration_s: self.max_duration_s,
            min_len_samples: self.min_len_samples,
            downsample_factor: self.downsample_factor,
            duration_tolerance: self.duration_tolerance,
            records: self.records.clone(),
        };
        let text = serde_json::to_string_pretty(&file).expect("manifest serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_trial(&self, rec: &ManifestRecord) -> Result<TrialRecording> {
        read_trial_csv(&self.resolve(rec), rec, &self.montage)
    }

    pub fn load_all(&self) -> Result<Vec<TrialRecording>> {
        self.records.iter().map(|r| self.load_trial(r)).collect()
    }

    fn estimated_len(&self, rec: &ManifestRecord) -> usize {
        let raw = rec
            .n_samples
            .unwrap_or_else(|| (rec.duration_s * self.montage.sample_rate_hz).round() as usize);
        raw.div_ceil(self.downsample_factor.max(1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    OverTimeLimit,
    ZeroScore,
    DurationMismatch,
    MinLength,
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExclusionReason::OverTimeLimit => "over-time-limit",
            ExclusionReason::ZeroScore => "zero-score",
            ExclusionReason::DurationMismatch => "duration-mismatch",
            ExclusionReason::MinLength => "min-length",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroppedRecord {
    pub record: ManifestRecord,
    pub reason: ExclusionReason,
}

/// Splits the manifest into kept records and dropped records with the first
/// rule each one violated.
pub fn apply_exclusions(manifest: &DatasetManifest) -> (DatasetManifest, Vec<DroppedRecord>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for rec in &manifest.records {
        match exclusion_reason(manifest, rec) {
            Some(reason) => dropped.push(DroppedRecord { record: rec.clone(), reason }),
            None => kept.push(rec.clone()),
        }
    }
    let out = DatasetManifest { records: kept, ..manifest.clone() };
    (out, dropped)
}

fn exclusion_reason(m: &DatasetManifest, rec: &ManifestRecord) -> Option<ExclusionReason> {
    if rec.duration_s > m.max_duration_s {
        return Some(ExclusionReason::OverTimeLimit);
    }
    if rec.fls_score == Some(0.0) {
        return Some(ExclusionReason::ZeroScore);
    }
    if let Some(logged) = rec.logged_duration_s {
        if (rec.duration_s - logged).abs() > m.duration_tolerance * logged.abs() {
            return Some(ExclusionReason::DurationMismatch);
        }
    }
    if m.estimated_len(rec) < m.min_len_samples {
        return Some(ExclusionReason::MinLength);
    }
    None
}

/// Restricts a full-montage trial to one region's long channels.
pub fn select_region(trial: &TrialRecording, montage: &Montage, region: Region) -> Result<TrialRecording> {
    let expected = montage.raw_columns();
    if trial.columns != expected {
        return Err(Error::ColumnMismatch {
            expected: format!("{} montage columns", expected.len()),
            found: format!("{} trial columns", trial.columns.len()),
        });
    }
    let cols = montage.region_columns(region)?;
    let raw = trial.raw.select(ndarray::Axis(1), &cols);
    Ok(TrialRecording {
        columns: cols.iter().map(|&i| trial.columns[i].clone()).collect(),
        raw,
        ..trial.clone()
    })
}

/// Reads a trial CSV (`t_s` then one column per channel and wavelength).
pub fn read_trial_csv(path: &Path, rec: &ManifestRecord, montage: &Montage) -> Result<TrialRecording> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, e))?.clone();
    if headers.get(0) != Some("t_s") {
        return Err(Error::parse(path, "first column must be t_s"));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let expected = montage.raw_columns();
    if columns != expected {
        return Err(Error::ColumnMismatch {
            expected: expected.join(","),
            found: columns.join(","),
        });
    }
    let mut values = Vec::new();
    let mut n_rows = 0;
    for row in rdr.records() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        for field in row.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::parse(path, format!("bad number {field:?} on row {n_rows}")))?;
            values.push(v);
        }
        n_rows += 1;
    }
    let raw = Array2::from_shape_vec((n_rows, columns.len()), values)
        .map_err(|e| Error::parse(path, e))?;
    Ok(TrialRecording {
        subject_id: rec.subject.clone(),
        task: rec.task,
        day: rec.day,
        trial_index: rec.trial,
        label: rec.label,
        columns,
        raw,
    })
}

/// Writes a `t_s`-indexed matrix with the given column names.
pub fn write_matrix_csv(path: &Path, sample_rate_hz: f64, columns: &[String], data: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    let mut header = vec!["t_s".to_string()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(|e| Error::parse(path, e))?;
    for (i, row) in data.rows().into_iter().enumerate() {
        let mut rec = vec![format!("{}", i as f64 / sample_rate_hz)];
        rec.extend(row.iter().map(|v| format!("{v}")));
        w.write_record(&rec).map_err(|e| Error::parse(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Groups record indices by subject, subjects sorted.
pub fn by_subject(records: &[ManifestRecord]) -> BTreeMap<String, Vec<usize>> {
    let mut out: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        out.entry(r.subject.clone()).or_default().push(i);
    }
    out
}
