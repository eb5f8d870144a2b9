//! End-to-end runs: load a dataset, prepare one region at a time, pretrain,
//! train classifiers and evaluate them. The command-line tool is a thin
//! layer over these functions.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{apply_exclusions, load_manifest, DroppedRecord, Montage, Region, TrialRecording};
use crate::error::{Error, Result};
use crate::eval::{
    self, kfold_cv, loso_cv, trial_index_analysis, CvOptions, Evaluation, FoldResult, FoldScores, FoldSpec,
    LosoResult, RegionCv, TrialCurve, TrialMeta,
};
use crate::model::{
    build_model, load_weights, save_classifier, save_weights, ClassifierModel, EncoderDecoderModel, Mode, ModelConfig,
};
use crate::preprocess::Preprocessor;
use crate::seeds;
use crate::train::{infer_labels, prepare_trials, pretrain, train_classifier, Normalizer, PreparedTrial, TrainReport};

/// Trials that survived the exclusion rules, in manifest order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub montage: Montage,
    pub trials: Vec<TrialRecording>,
    pub dropped: Vec<DroppedRecord>,
}

impl Dataset {
    pub fn load(manifest: &Path, exclusions: bool) -> Result<Dataset> {
        let m = load_manifest(manifest)?;
        let (kept, dropped) = if exclusions { apply_exclusions(&m) } else { (m.clone(), Vec::new()) };
        for d in &dropped {
            log::info!("dropped {}/d{}/t{}: {}", d.record.subject, d.record.day, d.record.trial, d.reason);
        }
        Ok(Dataset { montage: m.montage.clone(), trials: kept.load_all()?, dropped })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.trials.iter().map(|t| t.label.as_index()).collect()
    }

    pub fn subjects(&self) -> Vec<String> {
        self.trials.iter().map(|t| t.subject_id.clone()).collect()
    }

    pub fn meta(&self) -> Vec<TrialMeta> {
        self.trials
            .iter()
            .map(|t| TrialMeta { day: t.day, trial_index: t.trial_index, label: t.label.as_index() })
            .collect()
    }
}

/// Regions to run: the configured list, or every region of the montage.
pub fn regions(cfg: &RunConfig, montage: &Montage) -> Result<Vec<Region>> {
    let available = montage.regions();
    if cfg.data.regions.is_empty() {
        let mut all = available;
        all.sort();
        return Ok(all);
    }
    for r in &cfg.data.regions {
        if !available.contains(r) {
            return Err(Error::Config(format!("region {r} has no long channels in this montage")));
        }
    }
    Ok(cfg.data.regions.clone())
}

/// Seed for everything done on `region`. It does not depend on the mode, so
/// both modes see the same folds and initialisations.
pub fn region_seed(master: u64, region: Region) -> u64 {
    let idx = Region::ALL.iter().position(|r| *r == region).expect("known region") as u64;
    seeds::derive(master, &[seeds::REGION, idx])
}

/// One region of a dataset, preprocessed for one mode.
#[derive(Debug, Clone)]
pub struct RegionData {
    pub region: Region,
    pub mode: Mode,
    pub model_cfg: ModelConfig,
    pub prepared: Vec<PreparedTrial>,
}

impl RegionData {
    pub fn labels(&self) -> Vec<usize> {
        self.prepared.iter().map(|p| p.label.as_index()).collect()
    }

    fn subset(&self, idx: &[usize]) -> Vec<PreparedTrial> {
        idx.iter().map(|&i| self.prepared[i].clone()).collect()
    }
}

pub fn prepare_region(cfg: &RunConfig, ds: &Dataset, region: Region, mode: Mode) -> Result<RegionData> {
    let pp = Preprocessor::new(&cfg.preprocess, &ds.montage)?;
    let n_ch = ds.montage.region_channels(region).len();
    let model_cfg = ModelConfig { n_ch, mode, ..cfg.model.clone() };
    model_cfg.validate()?;
    let prepared = prepare_trials(&ds.trials, &pp, region, mode)?;
    Ok(RegionData { region, mode, model_cfg, prepared })
}

/// A pretrained encoder-decoder with the scaling it was trained under.
#[derive(Debug, Clone)]
pub struct Pretrained {
    pub normalizer: Normalizer,
    pub model: EncoderDecoderModel,
    pub report: TrainReport,
}

/// Fits the normaliser and pretrains on the trials `idx`.
pub fn pretrain_on(cfg: &RunConfig, data: &RegionData, idx: &[usize], seed: u64) -> Result<Pretrained> {
    let train = data.subset(idx);
    let normalizer = Normalizer::fit(&train)?;
    let examples = normalizer.apply(&train)?;
    let model = build_model(&data.model_cfg, &mut seeds::substream(seed, &[seeds::MODEL_INIT]))?;
    let (model, report) = pretrain(model, &examples, &cfg.train, seed, &mut seeds::substream(seed, &[seeds::PRETRAIN]))?;
    log::info!(
        "{} {}: pretrained {} epochs, loss {:.4e} -> {:.4e}",
        data.region,
        data.mode,
        report.epochs_run(),
        report.initial_loss,
        report.best_loss
    );
    Ok(Pretrained { normalizer, model, report })
}

/// Trains a classifier head on the trials `idx` over the frozen encoder.
pub fn classifier_on(
    cfg: &RunConfig,
    pre: &Pretrained,
    data: &RegionData,
    idx: &[usize],
    seed: u64,
) -> Result<(ClassifierModel, TrainReport)> {
    let examples = pre.normalizer.apply(&data.subset(idx))?;
    let encoder = crate::model::freeze_encoder(pre.model.clone());
    train_classifier(&encoder, &examples, &cfg.train, seed, &mut seeds::substream(seed, &[seeds::CLASSIFIER]))
}

/// `p_positive` for each trial in `idx`.
pub fn score(pre: &Pretrained, clf: &ClassifierModel, data: &RegionData, idx: &[usize]) -> Result<Vec<f64>> {
    let examples = pre.normalizer.apply(&data.subset(idx))?;
    Ok(infer_labels(clf, &examples, 0.5)?.into_iter().map(|(p, _)| p).collect())
}

fn fold_scores(
    cfg: &RunConfig,
    data: &RegionData,
    retention: Option<&RegionData>,
    shared: Option<&Pretrained>,
    spec: &FoldSpec,
) -> Result<FoldScores> {
    let own;
    let pre = match shared {
        Some(p) if !cfg.eval.pretrain_per_fold => p,
        _ => {
            own = pretrain_on(cfg, data, &spec.train, spec.seed)?;
            &own
        }
    };
    let (clf, _) = classifier_on(cfg, pre, data, &spec.train, spec.seed)?;
    let test = score(pre, &clf, data, &spec.test)?;
    let retention = match retention {
        Some(r) => {
            let all: Vec<usize> = (0..r.prepared.len()).collect();
            Some((score(pre, &clf, r, &all)?, r.labels()))
        }
        None => None,
    };
    Ok(FoldScores { test, retention })
}

fn cv_options(cfg: &RunConfig) -> CvOptions {
    CvOptions { k: cfg.eval.k, stratified: cfg.eval.stratified, threshold: cfg.train.threshold, workers: cfg.eval.workers }
}

/// Pretrains once on every trial of the region (labels unused), unless the
/// config asks for pretraining inside each fold.
pub fn shared_pretraining(cfg: &RunConfig, data: &RegionData, seed: u64) -> Result<Option<Pretrained>> {
    if cfg.eval.pretrain_per_fold {
        return Ok(None);
    }
    let all: Vec<usize> = (0..data.prepared.len()).collect();
    pretrain_on(cfg, data, &all, seed).map(Some)
}

/// k-fold cross-validation of one region.
pub fn cross_validate(
    cfg: &RunConfig,
    data: &RegionData,
    retention: Option<&RegionData>,
    shared: Option<&Pretrained>,
    seed: u64,
) -> Result<Vec<FoldResult>> {
    kfold_cv(&data.labels(), &cv_options(cfg), seed, |spec| fold_scores(cfg, data, retention, shared, spec))
}

/// Leave-one-subject-out cross-validation of one region.
pub fn leave_one_subject_out(
    cfg: &RunConfig,
    ds: &Dataset,
    data: &RegionData,
    shared: Option<&Pretrained>,
    seed: u64,
) -> Result<LosoResult> {
    loso_cv(&ds.subjects(), &data.labels(), &cv_options(cfg), seed, |spec| fold_scores(cfg, data, None, shared, spec))
}

/// Stratified train/test split holding out about `fraction` of the trials.
pub fn holdout_split(labels: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let k = (1.0 / fraction).round().max(2.0) as usize;
    let folds = eval::stratified_kfold(labels, k, &mut seeds::substream(seed, &[seeds::HOLDOUT]))?;
    let test = folds[0].clone();
    let train = (0..labels.len()).filter(|i| !test.contains(i)).collect();
    Ok((train, test))
}

#[derive(Debug, Clone)]
pub struct HoldoutRun {
    pub pretrained: Pretrained,
    pub classifier: ClassifierModel,
    pub classifier_report: TrainReport,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub scores: Vec<f64>,
    pub eval: Evaluation,
}

/// Pretraining and classifier both see only the training part of the split.
pub fn holdout(cfg: &RunConfig, data: &RegionData, seed: u64) -> Result<HoldoutRun> {
    let labels = data.labels();
    let (train, test) = holdout_split(&labels, cfg.eval.holdout_fraction, seed)?;
    let pretrained = pretrain_on(cfg, data, &train, seed)?;
    let (classifier, classifier_report) = classifier_on(cfg, &pretrained, data, &train, seed)?;
    let scores = score(&pretrained, &classifier, data, &test)?;
    let y: Vec<usize> = test.iter().map(|&i| labels[i]).collect();
    let eval = eval::evaluate(&scores, &y, cfg.train.threshold)?;
    Ok(HoldoutRun { pretrained, classifier, classifier_report, train, test, scores, eval })
}

// ---------------------------------------------------------------------------
// Files.

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub const ENCODER_FILE: &str = "encoder.fnsw";
pub const NORMALIZER_FILE: &str = "normalizer.json";
pub const CLASSIFIER_FILE: &str = "classifier.fnsw";

/// `encoder.fnsw`, `normalizer.json` and `pretrain_report.json` under `dir`.
pub fn write_pretrained(dir: &Path, pre: &Pretrained) -> Result<()> {
    save_weights(&pre.model, dir.join(ENCODER_FILE))?;
    let norm = serde_json::to_string_pretty(&pre.normalizer).expect("normaliser serialises");
    write_text(&dir.join(NORMALIZER_FILE), &norm)?;
    write_text(&dir.join("pretrain_report.json"), &pre.report.to_json())
}

pub fn read_pretrained(dir: &Path, model_cfg: &ModelConfig) -> Result<Pretrained> {
    let model = load_weights(dir.join(ENCODER_FILE), model_cfg)?;
    let path = dir.join(NORMALIZER_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let normalizer = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    let path = dir.join("pretrain_report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let report = serde_json::from_str(&text).map_err(|e| Error::parse(&path, e))?;
    Ok(Pretrained { normalizer, model, report })
}

pub fn write_classifier(dir: &Path, clf: &ClassifierModel, report: &TrainReport) -> Result<()> {
    save_classifier(clf, dir.join(CLASSIFIER_FILE))?;
    write_text(&dir.join("classifier_report.json"), &report.to_json())
}

/// A scored trial, as stored in `predictions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub region: Region,
    /// `cv`, `retention`, `loso`, `holdout` or `infer`.
    pub split: String,
    pub fold: usize,
    pub subject: String,
    pub day: u32,
    pub trial: u32,
    pub label: usize,
    pub score: f64,
}

pub fn fold_predictions(data: &RegionData, split: &str, folds: &[FoldResult]) -> Vec<Prediction> {
    let mut out = Vec::new();
    for f in folds {
        for (&i, &s) in f.test.iter().zip(&f.scores) {
            let p = &data.prepared[i];
            out.push(Prediction {
                region: data.region,
                split: split.into(),
                fold: f.fold,
                subject: p.key.subject.clone(),
                day: p.key.day,
                trial: p.key.trial,
                label: p.label.as_index(),
                score: s,
            });
        }
    }
    out
}

pub fn predictions_csv(preds: &[Prediction]) -> String {
    let mut out = String::from("region,split,fold,subject,day,trial,label,score\n");
    for p in preds {
        let _ = writeln!(out, "{},{},{},{},{},{},{},{}", p.region, p.split, p.fold, p.subject, p.day, p.trial, p.label, p.score);
    }
    out
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    rdr.deserialize().map(|r| r.map_err(|e| Error::parse(path, e))).collect()
}

/// Rebuilds per-region fold results from stored cross-validation predictions.
/// Retention predictions are attached to the fold with the same id.
pub fn folds_from_predictions(preds: &[Prediction], threshold: f64) -> Result<Vec<RegionCv>> {
    type Scored = (Vec<f64>, Vec<usize>);
    let mut by: BTreeMap<Region, BTreeMap<usize, (Scored, Option<Scored>)>> = BTreeMap::new();
    for p in preds {
        let slot = by.entry(p.region).or_default().entry(p.fold).or_default();
        match p.split.as_str() {
            "cv" => {
                slot.0 .0.push(p.score);
                slot.0 .1.push(p.label);
            }
            "retention" => {
                let r = slot.1.get_or_insert_with(Default::default);
                r.0.push(p.score);
                r.1.push(p.label);
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    for (region, folds) in by {
        let mut results = Vec::new();
        for (fold, ((scores, labels), ret)) in folds {
            if scores.is_empty() {
                continue;
            }
            let (retention, retention_scores) = match ret {
                Some((s, y)) => (Some(eval::evaluate(&s, &y, threshold)?), s),
                None => (None, Vec::new()),
            };
            results.push(FoldResult {
                fold,
                subject: None,
                test: (0..scores.len()).collect(),
                eval: eval::evaluate(&scores, &labels, threshold)?,
                scores,
                labels,
                retention,
                retention_scores,
            });
        }
        if !results.is_empty() {
            out.push(RegionCv { region, folds: results });
        }
    }
    Ok(out)
}

/// Writes `metrics.csv`, the curve files of each region and `predictions.csv`.
pub fn write_cv_results(dir: &Path, results: &[RegionCv], preds: &[Prediction]) -> Result<()> {
    eval::write_metrics(dir, results)?;
    for r in results {
        eval::write_curves(dir, r.region, &r.folds)?;
    }
    write_text(&dir.join("predictions.csv"), &predictions_csv(preds))
}

/// Cross-validates every configured region and writes the result files.
/// The shared pretraining of each region goes to `<dir>/<region>/`.
pub fn run_cv(cfg: &RunConfig, ds: &Dataset, retention: Option<&Dataset>, mode: Mode, dir: &Path) -> Result<Vec<RegionCv>> {
    let mut results = Vec::new();
    let mut preds = Vec::new();
    for region in regions(cfg, &ds.montage)? {
        let seed = region_seed(cfg.seed, region);
        let data = prepare_region(cfg, ds, region, mode)?;
        let ret = retention.map(|r| prepare_region(cfg, r, region, mode)).transpose()?;
        let shared = shared_pretraining(cfg, &data, seed)?;
        if let Some(p) = &shared {
            write_pretrained(&dir.join(region.as_str()), p)?;
        }
        let folds = cross_validate(cfg, &data, ret.as_ref(), shared.as_ref(), seed)?;
        preds.extend(fold_predictions(&data, "cv", &folds));
        if let Some(r) = &ret {
            for f in &folds {
                for (p, &score) in r.prepared.iter().zip(&f.retention_scores) {
                    preds.push(Prediction {
                        region,
                        split: "retention".into(),
                        fold: f.fold,
                        subject: p.key.subject.clone(),
                        day: p.key.day,
                        trial: p.key.trial,
                        label: p.label.as_index(),
                        score,
                    });
                }
            }
        }
        let m = eval::summarize(&folds.iter().map(|f| &f.eval).collect::<Vec<_>>());
        log::info!("{region} {mode}: mean accuracy {:.4}", m.mean.get("accuracy").copied().unwrap_or(f64::NAN));
        results.push(RegionCv { region, folds });
    }
    write_cv_results(dir, &results, &preds)?;
    Ok(results)
}

/// Leave-one-subject-out for every configured region; writes `loso_mce.csv`
/// and `predictions.csv`.
pub fn run_loso(cfg: &RunConfig, ds: &Dataset, mode: Mode, dir: &Path) -> Result<Vec<(Region, LosoResult)>> {
    let mut out = Vec::new();
    let mut preds = Vec::new();
    for region in regions(cfg, &ds.montage)? {
        let seed = region_seed(cfg.seed, region);
        let data = prepare_region(cfg, ds, region, mode)?;
        let shared = shared_pretraining(cfg, &data, seed)?;
        let r = leave_one_subject_out(cfg, ds, &data, shared.as_ref(), seed)?;
        log::info!("{region} {mode}: mean MCE {:.4}", r.mean_mce);
        preds.extend(fold_predictions(&data, "loso", &r.folds));
        out.push((region, r));
    }
    eval::write_loso(dir, &out)?;
    write_text(&dir.join("predictions.csv"), &predictions_csv(&preds))?;
    Ok(out)
}

/// Trial-index analysis over every configured region; writes `trial_curve.csv`.
pub fn run_trial_curve(cfg: &RunConfig, ds: &Dataset, mode: Mode, dir: &Path) -> Result<TrialCurve> {
    let regions = regions(cfg, &ds.montage)?;
    let mut prepared = BTreeMap::new();
    for &region in &regions {
        let data = prepare_region(cfg, ds, region, mode)?;
        let shared = shared_pretraining(cfg, &data, region_seed(cfg.seed, region))?;
        prepared.insert(region, (data, shared));
    }
    let opts = CvOptions { k: cfg.eval.trial_curve_k, ..cv_options(cfg) };
    let curve = trial_index_analysis(&ds.meta(), &regions, cfg.eval.trial_curve_from_day, &opts, cfg.seed, |region, spec, _| {
        let (data, shared) = &prepared[&region];
        fold_scores(cfg, data, None, shared.as_ref(), spec)
    })?;
    eval::write_trial_curve(dir, &curve)?;
    Ok(curve)
}

/// Task name and metrics of one results directory, for comparisons.
pub fn read_results(dir: &Path) -> Result<eval::RegionMeans> {
    eval::read_metrics_means(&dir.join("metrics.csv"))
}

/// `comparison.csv` rows for pairs of results directories. When `a` itself
/// holds no `metrics.csv`, each subdirectory present in both `a` and `b` is
/// one task.
pub fn compare_dirs(a: &Path, b: &Path, task: &str) -> Result<String> {
    let mut rows = Vec::new();
    if a.join("metrics.csv").is_file() {
        rows.push((task.to_string(), eval::compare_means(&read_results(a)?, &read_results(b)?)));
    } else {
        let entries = std::fs::read_dir(a).map_err(|e| Error::io(a, e))?;
        let mut names: Vec<String> = entries
            .filter_map(|e| e.ok())
            .filter(|e| e.path().join("metrics.csv").is_file() && b.join(e.file_name()).join("metrics.csv").is_file())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        if names.is_empty() {
            return Err(Error::InvalidInput(format!("no metrics.csv found under {}", a.display())));
        }
        for n in names {
            rows.push((n.clone(), eval::compare_means(&read_results(&a.join(&n))?, &read_results(&b.join(&n))?)));
        }
    }
    Ok(eval::comparison_csv(&rows))
}
