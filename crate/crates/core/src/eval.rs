//! Metrics, curves, cross-validation drivers, paired tests and result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Region;
use crate::error::{Error, Result};
use crate::seeds;

/// Positive is the unsuccessful trial (label index 1).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Exchanges the roles of the two classes.
    pub fn swapped(&self) -> ConfusionMatrix {
        ConfusionMatrix { tp: self.tn, fp: self.fn_, tn: self.tp, fn_: self.fp }
    }

    pub fn add(&mut self, o: &ConfusionMatrix) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }
}

fn check_scores(scores: &[f64], labels: &[usize]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(&y) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::InvalidInput(format!("label {y} is not 0 or 1")));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidInput("score is NaN".into()));
    }
    Ok(())
}

/// Counts with `score >= threshold` predicted positive.
pub fn confusion(scores: &[f64], labels: &[usize], threshold: f64) -> Result<ConfusionMatrix> {
    check_scores(scores, labels)?;
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mcc: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    pub balanced_accuracy: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Threshold metrics. Ratios with a zero denominator are reported as 0,
/// which for MCC is the usual convention.
pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    if cm.total() == 0 {
        return Err(Error::InvalidInput("empty confusion matrix".into()));
    }
    let (tp, fp, tn, fn_) = (cm.tp as f64, cm.fp as f64, cm.tn as f64, cm.fn_ as f64);
    let sensitivity = ratio(cm.tp, cm.tp + cm.fn_);
    let specificity = ratio(cm.tn, cm.tn + cm.fp);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den.sqrt() };
    Ok(Metrics {
        mcc,
        f1: ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_),
        sensitivity,
        specificity,
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        balanced_accuracy: (sensitivity + specificity) / 2.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveResult {
    /// ROC: (fpr, tpr). PR: (recall, precision).
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// Cumulative (tp, fp) after each group of tied scores, highest score first.
fn sweep(scores: &[f64], labels: &[usize]) -> Result<(Vec<(u64, u64)>, u64, u64)> {
    check_scores(scores, labels)?;
    let pos = labels.iter().filter(|&&y| y == 1).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("curve needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push((tp, fp));
        }
    }
    Ok((out, pos, neg))
}

/// ROC curve over the distinct scores; area by the trapezoid rule.
pub fn roc_curve(scores: &[f64], labels: &[usize]) -> Result<CurveResult> {
    let (steps, pos, neg) = sweep(scores, labels)?;
    let mut points = vec![(0.0, 0.0)];
    points.extend(steps.iter().map(|&(tp, fp)| (fp as f64 / neg as f64, tp as f64 / pos as f64)));
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum();
    Ok(CurveResult { points, auc })
}

/// Precision-recall curve; area by right-constant steps, `sum (R_k - R_{k-1}) P_k`.
pub fn pr_curve(scores: &[f64], labels: &[usize]) -> Result<CurveResult> {
    let (steps, pos, _) = sweep(scores, labels)?;
    let mut points = vec![(0.0, 1.0)];
    points.extend(steps.iter().map(|&(tp, fp)| (tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64)));
    let auc = points.windows(2).map(|w| (w[1].0 - w[0].0) * w[1].1).sum();
    Ok(CurveResult { points, auc })
}

/// Share of positive-negative pairs ranked correctly, ties counted as half.
pub fn concordance(scores: &[f64], labels: &[usize]) -> Result<f64> {
    check_scores(scores, labels)?;
    let (mut hits, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                pairs += 1.0;
                hits += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    if pairs == 0.0 {
        return Err(Error::InvalidInput("concordance needs both classes".into()));
    }
    Ok(hits / pairs)
}

/// Stratified partition of `0..labels.len()` into `k` validation folds.
///
/// Each class is shuffled and the classes are laid end to end and dealt
/// round-robin, so fold sizes differ by at most one and every fold holds
/// `floor` or `ceil` of each class's share.
pub fn stratified_kfold(labels: &[usize], k: usize, rng: &mut impl rand::Rng) -> Result<Vec<Vec<usize>>> {
    check_k(labels.len(), k)?;
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    let mut dealt = Vec::with_capacity(labels.len());
    for idx in by_class.values_mut() {
        idx.shuffle(rng);
        dealt.extend_from_slice(idx);
    }
    Ok(deal(&dealt, k))
}

/// Unstratified partition into `k` folds of a shuffled order.
pub fn plain_kfold(n: usize, k: usize, rng: &mut impl rand::Rng) -> Result<Vec<Vec<usize>>> {
    check_k(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(deal(&order, k))
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidInput(format!("k = {k} exceeds the {n} available trials")));
    }
    Ok(())
}

fn deal(order: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut folds = vec![Vec::new(); k];
    for (pos, &i) in order.iter().enumerate() {
        folds[pos % k].push(i);
    }
    folds.iter_mut().for_each(|f| f.sort_unstable());
    folds
}

/// One validation fold per subject, subjects in sorted order.
pub fn loso_folds(subjects: &[String]) -> Vec<(String, Vec<usize>)> {
    let mut by: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in subjects.iter().enumerate() {
        by.entry(s).or_default().push(i);
    }
    by.into_iter().map(|(s, v)| (s.to_string(), v)).collect()
}

fn complement(n: usize, test: &[usize]) -> Vec<usize> {
    let mut held = vec![false; n];
    test.iter().for_each(|&i| held[i] = true);
    (0..n).filter(|&i| !held[i]).collect()
}

/// What a fold's training callback receives.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSpec {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Derived from the master seed and the fold id.
    pub seed: u64,
}

/// What a fold's training callback returns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldScores {
    /// `p_positive` for each index of `FoldSpec::test`, in order.
    pub test: Vec<f64>,
    /// Optional scores and labels on a separate retention set.
    pub retention: Option<(Vec<f64>, Vec<usize>)>,
}

/// Metrics of one validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
    /// `None` when the set holds a single class.
    pub roc_auc: Option<f64>,
    pub pr_auc: Option<f64>,
}

pub fn evaluate(scores: &[f64], labels: &[usize], threshold: f64) -> Result<Evaluation> {
    let confusion = confusion(scores, labels, threshold)?;
    let metrics = metrics(&confusion)?;
    let both = labels.contains(&0) && labels.contains(&1);
    let roc_auc = if both { Some(roc_curve(scores, labels)?.auc) } else { None };
    let pr_auc = if both { Some(pr_curve(scores, labels)?.auc) } else { None };
    Ok(Evaluation { confusion, metrics, roc_auc, pr_auc })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    /// Subject id for leave-one-subject-out folds.
    pub subject: Option<String>,
    pub test: Vec<usize>,
    pub scores: Vec<f64>,
    pub labels: Vec<usize>,
    pub eval: Evaluation,
    pub retention: Option<Evaluation>,
    /// Retention-set scores, empty without a retention set.
    pub retention_scores: Vec<f64>,
}

/// Runs `run` on every fold, up to `workers` folds at a time. Results are
/// returned sorted by fold id and do not depend on `workers`.
fn run_folds<F>(specs: Vec<FoldSpec>, workers: usize, run: &F) -> Result<Vec<(FoldSpec, FoldScores)>>
where
    F: Fn(&FoldSpec) -> Result<FoldScores> + Sync,
{
    let workers = workers.max(1);
    let mut out: Vec<Option<Result<FoldScores>>> = (0..specs.len()).map(|_| None).collect();
    for chunk in specs.chunks(workers).zip(out.chunks_mut(workers)) {
        let (specs, slots) = chunk;
        if workers == 1 {
            slots[0] = Some(run(&specs[0]));
            continue;
        }
        std::thread::scope(|s| {
            let handles: Vec<_> = specs.iter().map(|spec| s.spawn(move || run(spec))).collect();
            for (slot, h) in slots.iter_mut().zip(handles) {
                *slot = Some(h.join().unwrap_or_else(|_| Err(Error::InvalidInput("fold worker panicked".into()))));
            }
        });
    }
    specs
        .into_iter()
        .zip(out)
        .map(|(spec, r)| Ok((spec, r.expect("every fold ran")?)))
        .collect()
}

fn finish_fold(spec: FoldSpec, scores: FoldScores, labels: &[usize], threshold: f64, subject: Option<String>) -> Result<FoldResult> {
    if scores.test.len() != spec.test.len() {
        return Err(Error::Shape(format!("fold {}: {} scores for {} trials", spec.fold, scores.test.len(), spec.test.len())));
    }
    let y: Vec<usize> = spec.test.iter().map(|&i| labels[i]).collect();
    let eval = evaluate(&scores.test, &y, threshold)?;
    let retention = match &scores.retention {
        Some((s, l)) => Some(evaluate(s, l, threshold)?),
        None => None,
    };
    let retention_scores = scores.retention.map(|r| r.0).unwrap_or_default();
    Ok(FoldResult { fold: spec.fold, subject, test: spec.test, scores: scores.test, labels: y, eval, retention, retention_scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvOptions {
    pub k: usize,
    pub stratified: bool,
    pub threshold: f64,
    pub workers: usize,
}

impl Default for CvOptions {
    fn default() -> Self {
        CvOptions { k: 15, stratified: true, threshold: 0.5, workers: 1 }
    }
}

/// k-fold cross-validation. Fold `f` trains with seed `h(master, f)`.
pub fn kfold_cv<F>(labels: &[usize], opts: &CvOptions, master_seed: u64, run: F) -> Result<Vec<FoldResult>>
where
    F: Fn(&FoldSpec) -> Result<FoldScores> + Sync,
{
    let mut rng = seeds::substream(master_seed, &[seeds::FOLDS]);
    let folds = if opts.stratified {
        for class in [0, 1] {
            let n = labels.iter().filter(|&&y| y == class).count();
            if n < opts.k {
                return Err(Error::InvalidInput(format!(
                    "class {class} has {n} trials, fewer than k = {}; some folds would hold a single class",
                    opts.k
                )));
            }
        }
        stratified_kfold(labels, opts.k, &mut rng)?
    } else {
        plain_kfold(labels.len(), opts.k, &mut rng)?
    };
    let specs = folds
        .into_iter()
        .enumerate()
        .map(|(f, test)| FoldSpec {
            fold: f,
            train: complement(labels.len(), &test),
            test,
            seed: seeds::derive(master_seed, &[seeds::FOLD_RUN, f as u64]),
        })
        .collect();
    run_folds(specs, opts.workers, &run)?
        .into_iter()
        .map(|(spec, scores)| finish_fold(spec, scores, labels, opts.threshold, None))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMce {
    pub subject: String,
    pub n_trials: usize,
    pub mce: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LosoResult {
    pub folds: Vec<FoldResult>,
    pub subjects: Vec<SubjectMce>,
    pub mean_mce: f64,
    /// Metrics over all held-out predictions pooled.
    pub pooled: Evaluation,
}

/// Leave-one-subject-out cross-validation.
pub fn loso_cv<F>(subjects: &[String], labels: &[usize], opts: &CvOptions, master_seed: u64, run: F) -> Result<LosoResult>
where
    F: Fn(&FoldSpec) -> Result<FoldScores> + Sync,
{
    if subjects.len() != labels.len() {
        return Err(Error::Shape("one subject id per label required".into()));
    }
    let groups = loso_folds(subjects);
    if groups.len() < 2 {
        return Err(Error::InvalidInput("leave-one-subject-out needs at least two subjects".into()));
    }
    let names: Vec<String> = groups.iter().map(|(s, _)| s.clone()).collect();
    let specs = groups
        .into_iter()
        .enumerate()
        .map(|(f, (_, test))| FoldSpec {
            fold: f,
            train: complement(labels.len(), &test),
            test,
            seed: seeds::derive(master_seed, &[seeds::FOLD_RUN, f as u64]),
        })
        .collect();
    let folds: Vec<FoldResult> = run_folds(specs, opts.workers, &run)?
        .into_iter()
        .zip(names)
        .map(|((spec, scores), name)| finish_fold(spec, scores, labels, opts.threshold, Some(name)))
        .collect::<Result<_>>()?;
    let subjects: Vec<SubjectMce> = folds
        .iter()
        .map(|f| SubjectMce {
            subject: f.subject.clone().unwrap_or_default(),
            n_trials: f.test.len(),
            mce: 1.0 - f.eval.metrics.accuracy,
        })
        .collect();
    let mean_mce = subjects.iter().map(|s| s.mce).sum::<f64>() / subjects.len() as f64;
    let (s, y) = pooled_scores(&folds);
    let pooled = evaluate(&s, &y, opts.threshold)?;
    Ok(LosoResult { folds, subjects, mean_mce, pooled })
}

/// Held-out scores and labels of all folds, concatenated in fold order.
pub fn pooled_scores(folds: &[FoldResult]) -> (Vec<f64>, Vec<usize>) {
    let s = folds.iter().flat_map(|f| f.scores.iter().copied()).collect();
    let y = folds.iter().flat_map(|f| f.labels.iter().copied()).collect();
    (s, y)
}

/// Mean and sample SD (n - 1) of each fold metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: BTreeMap<String, f64>,
    pub sd: BTreeMap<String, f64>,
}

pub const METRIC_COLUMNS: [&str; 8] =
    ["mcc", "f1", "sensitivity", "specificity", "accuracy", "balanced_accuracy", "roc_auc", "pr_auc"];

fn metric_row(e: &Evaluation) -> [Option<f64>; 8] {
    let m = &e.metrics;
    [
        Some(m.mcc),
        Some(m.f1),
        Some(m.sensitivity),
        Some(m.specificity),
        Some(m.accuracy),
        Some(m.balanced_accuracy),
        e.roc_auc,
        e.pr_auc,
    ]
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (mean, sd)
}

pub fn summarize(evals: &[&Evaluation]) -> MetricSummary {
    let mut mean = BTreeMap::new();
    let mut sd = BTreeMap::new();
    let rows: Vec<_> = evals.iter().map(|e| metric_row(e)).collect();
    for (j, name) in METRIC_COLUMNS.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
        if !vals.is_empty() {
            let (m, s) = mean_sd(&vals);
            mean.insert(name.to_string(), m);
            sd.insert(name.to_string(), s);
        }
    }
    MetricSummary { mean, sd }
}

/// Trial metadata needed by the trial-index analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMeta {
    pub day: u32,
    pub trial_index: u32,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialCurve {
    pub regions: Vec<Region>,
    pub trial_indices: Vec<u32>,
    /// `values[t][r]`: balanced accuracy for trial index `trial_indices[t]` and region `regions[r]`.
    pub values: Vec<Vec<f64>>,
    pub sums: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

/// Least-squares line `y = slope x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidInput("linear fit needs at least two points".into()));
    }
    let (mx, _) = mean_sd(x);
    let (my, _) = mean_sd(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("linear fit needs distinct x values".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// For each trial index, restricts to trials from `from_day` on with that
/// index, cross-validates within them (stratified, `opts.k` folds, capped
/// by the minority count) for every region, and records the pooled
/// balanced accuracy. The trend is a line through the per-index sums.
pub fn trial_index_analysis<F>(
    meta: &[TrialMeta],
    regions: &[Region],
    from_day: u32,
    opts: &CvOptions,
    master_seed: u64,
    run: F,
) -> Result<TrialCurve>
where
    F: Fn(Region, &FoldSpec, &[usize]) -> Result<FoldScores> + Sync,
{
    let mut indices: Vec<u32> = meta.iter().filter(|m| m.day >= from_day).map(|m| m.trial_index).collect();
    indices.sort_unstable();
    indices.dedup();
    if indices.is_empty() {
        return Err(Error::InvalidInput(format!("no trials on or after day {from_day}")));
    }
    let mut values = Vec::new();
    for &t in &indices {
        let subset: Vec<usize> =
            (0..meta.len()).filter(|&i| meta[i].day >= from_day && meta[i].trial_index == t).collect();
        let labels: Vec<usize> = subset.iter().map(|&i| meta[i].label).collect();
        let minority = labels.iter().filter(|&&y| y == 1).count().min(labels.iter().filter(|&&y| y == 0).count());
        if minority == 0 {
            return Err(Error::InvalidInput(format!("trial index {t} holds a single class")));
        }
        let k = opts.k.min(minority).max(2);
        if minority < 2 {
            return Err(Error::InvalidInput(format!("trial index {t}: too few trials of one class to cross-validate")));
        }
        let seed = seeds::derive(master_seed, &[t as u64]);
        let sub_opts = CvOptions { k, stratified: true, ..*opts };
        let mut row = Vec::with_capacity(regions.len());
        for &region in regions {
            let folds = kfold_cv(&labels, &sub_opts, seed, |spec| {
                // Translate fold positions back to dataset indices.
                let mapped = FoldSpec {
                    fold: spec.fold,
                    train: spec.train.iter().map(|&i| subset[i]).collect(),
                    test: spec.test.iter().map(|&i| subset[i]).collect(),
                    seed: spec.seed,
                };
                run(region, &mapped, &subset)
            })?;
            let (s, y) = pooled_scores(&folds);
            row.push(metrics(&confusion(&s, &y, opts.threshold)?)?.balanced_accuracy);
        }
        values.push(row);
    }
    let sums: Vec<f64> = values.iter().map(|r| r.iter().sum()).collect();
    let x: Vec<f64> = indices.iter().map(|&t| t as f64).collect();
    let (slope, intercept) = if x.len() >= 2 { linear_fit(&x, &sums)? } else { (0.0, sums[0]) };
    Ok(TrialCurve { regions: regions.to_vec(), trial_indices: indices, values, sums, slope, intercept })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences `b - a`.
    pub statistic: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    /// One-sided p-value for `median(b) > median(a)`.
    pub p: f64,
    pub exact: bool,
}

/// Largest sample size for which the p-value is computed exactly.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Average ranks of `|d|`, doubled so ties stay integral.
fn doubled_ranks(d: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0u64; d.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        // Positions i..=j share rank (i + 1 + j + 1) / 2; doubled: i + j + 2.
        for &k in &order[i..=j] {
            ranks[k] = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    ranks
}

/// One-sided signed-rank test on `b - a`. Exact (every sign pattern
/// counted) up to 25 non-zero pairs, normal approximation with tie and
/// continuity correction beyond.
pub fn wilcoxon_one_sided(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let d: Vec<f64> = pairs.iter().map(|(a, b)| b - a).filter(|x| *x != 0.0).collect();
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("non-finite difference".into()));
    }
    if d.is_empty() {
        return Err(Error::InvalidInput("all paired differences are zero".into()));
    }
    let n = d.len();
    let r2 = doubled_ranks(&d);
    let w2: u64 = d.iter().zip(&r2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let statistic = w2 as f64 / 2.0;
    if n <= WILCOXON_EXACT_MAX {
        // counts[s]: number of sign patterns whose doubled positive-rank sum is s.
        let total: u64 = r2.iter().sum();
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &r2 {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] > 0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let upper: u64 = counts[w2 as usize..].iter().sum();
        let p = upper as f64 / 2f64.powi(n as i32);
        return Ok(WilcoxonResult { statistic, n, p, exact: true });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie = 0.0;
    let mut sorted = r2.clone();
    sorted.sort_unstable();
    for g in sorted.chunk_by(|a, b| a == b) {
        let t = g.len() as f64;
        tie += t * t * t - t;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
    let z = (statistic - mean - 0.5) / var.sqrt();
    let p = 0.5 * libm::erfc(z / std::f64::consts::SQRT_2);
    Ok(WilcoxonResult { statistic, n, p, exact: false })
}

// ---------------------------------------------------------------------------
// Result files.

fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Cross-validation outcome for one region.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionCv {
    pub region: Region,
    pub folds: Vec<FoldResult>,
}

pub const METRICS_HEADER: &str = "region,split,fold,mcc,f1,sensitivity,specificity,accuracy,balanced_accuracy,roc_auc,pr_auc";

/// `metrics.csv`: one row per fold and split, then `mean` and `sd` rows per region and split.
pub fn metrics_csv(results: &[RegionCv]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    let mut sorted: Vec<&RegionCv> = results.iter().collect();
    sorted.sort_by_key(|r| r.region);
    for r in sorted {
        let mut folds: Vec<&FoldResult> = r.folds.iter().collect();
        folds.sort_by_key(|f| f.fold);
        let splits: [(&str, Vec<&Evaluation>); 2] = [
            ("cv", folds.iter().map(|f| &f.eval).collect()),
            ("retention", folds.iter().filter_map(|f| f.retention.as_ref()).collect()),
        ];
        for (split, evals) in splits {
            if evals.is_empty() {
                continue;
            }
            for (f, e) in folds.iter().zip(&evals) {
                let row = metric_row(e);
                let _ = writeln!(out, "{},{split},{},{}", r.region, f.fold, row.map(opt).join(","));
            }
            let s = summarize(&evals);
            for (name, map) in [("mean", &s.mean), ("sd", &s.sd)] {
                let vals: Vec<String> = METRIC_COLUMNS.iter().map(|c| opt(map.get(*c).copied())).collect();
                let _ = writeln!(out, "{},{split},{name},{}", r.region, vals.join(","));
            }
        }
    }
    out
}

fn curve_csv(header: &str, c: &CurveResult) -> String {
    let mut out = format!("{header}\n");
    for (x, y) in &c.points {
        let _ = writeln!(out, "{},{}", num(*x), num(*y));
    }
    out
}

/// `roc_<region>.csv` and `pr_<region>.csv` from pooled held-out scores.
pub fn write_curves(dir: &Path, region: Region, folds: &[FoldResult]) -> Result<(CurveResult, CurveResult)> {
    let (s, y) = pooled_scores(folds);
    let roc = roc_curve(&s, &y)?;
    let pr = pr_curve(&s, &y)?;
    write_text(&dir.join(format!("roc_{region}.csv")), &curve_csv("fpr,tpr", &roc))?;
    write_text(&dir.join(format!("pr_{region}.csv")), &curve_csv("recall,precision", &pr))?;
    Ok((roc, pr))
}

pub fn write_metrics(dir: &Path, results: &[RegionCv]) -> Result<()> {
    write_text(&dir.join("metrics.csv"), &metrics_csv(results))
}

/// `loso_mce.csv`: per-subject misclassification error, then a mean row per region.
pub fn loso_csv(results: &[(Region, LosoResult)]) -> String {
    let mut out = String::from("region,subject,n_trials,mce\n");
    for (region, r) in results {
        for s in &r.subjects {
            let _ = writeln!(out, "{region},{},{},{}", s.subject, s.n_trials, num(s.mce));
        }
        let n: usize = r.subjects.iter().map(|s| s.n_trials).sum();
        let _ = writeln!(out, "{region},mean,{n},{}", num(r.mean_mce));
    }
    out
}

pub fn write_loso(dir: &Path, results: &[(Region, LosoResult)]) -> Result<()> {
    write_text(&dir.join("loso_mce.csv"), &loso_csv(results))
}

/// `trial_curve.csv`: balanced accuracy per trial index and region, their sum and the fitted trend.
pub fn trial_curve_csv(c: &TrialCurve) -> String {
    let regions: Vec<String> = c.regions.iter().map(|r| r.to_string()).collect();
    let mut out = format!("trial_index,{},sum,trend\n", regions.join(","));
    for (i, t) in c.trial_indices.iter().enumerate() {
        let vals: Vec<String> = c.values[i].iter().map(|v| num(*v)).collect();
        let trend = c.slope * *t as f64 + c.intercept;
        let _ = writeln!(out, "{t},{},{},{}", vals.join(","), num(c.sums[i]), num(trend));
    }
    out
}

pub fn write_trial_curve(dir: &Path, c: &TrialCurve) -> Result<()> {
    write_text(&dir.join("trial_curve.csv"), &trial_curve_csv(c))
}

/// Per-region mean metrics read back from a `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMeans {
    pub cv: BTreeMap<Region, BTreeMap<String, f64>>,
    pub retention: BTreeMap<Region, BTreeMap<String, f64>>,
}

pub fn read_metrics_means(path: &Path) -> Result<RegionMeans> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    let headers: Vec<String> = rdr.headers().map_err(|e| Error::parse(path, e))?.iter().map(str::to_string).collect();
    if headers.join(",") != METRICS_HEADER {
        return Err(Error::parse(path, "unexpected metrics.csv header"));
    }
    let mut means = RegionMeans { cv: BTreeMap::new(), retention: BTreeMap::new() };
    for row in rdr.records() {
        let row = row.map_err(|e| Error::parse(path, e))?;
        if &row[2] != "mean" {
            continue;
        }
        let region: Region = row[0].parse()?;
        let mut m = BTreeMap::new();
        for (j, name) in METRIC_COLUMNS.iter().enumerate() {
            let cell = &row[3 + j];
            if !cell.is_empty() {
                m.insert(name.to_string(), cell.parse::<f64>().map_err(|e| Error::parse(path, e))?);
            }
        }
        match &row[1] {
            "cv" => means.cv.insert(region, m),
            "retention" => means.retention.insert(region, m),
            other => return Err(Error::parse(path, format!("unknown split {other:?}"))),
        };
    }
    Ok(means)
}

/// Column order of `comparison.csv` after the task column.
pub const COMPARISON_COLUMNS: [(&str, &str); 8] = [
    ("mcc", "mcc"),
    ("f1_score", "f1"),
    ("sensitivity", "sensitivity"),
    ("specificity", "specificity"),
    ("accuracy", "accuracy"),
    ("roc_auc", "roc_auc"),
    ("pr_auc", "pr_auc"),
    ("test_accuracy", "accuracy"),
];

/// One comparison row: for each metric, the one-sided p-value that model
/// `b` beats model `a`, pairing regions present in both. Cells stay empty
/// when there is nothing to test.
pub fn compare_means(a: &RegionMeans, b: &RegionMeans) -> Vec<Option<WilcoxonResult>> {
    COMPARISON_COLUMNS
        .iter()
        .enumerate()
        .map(|(j, (_, metric))| {
            let (ma, mb) = if j == 7 { (&a.retention, &b.retention) } else { (&a.cv, &b.cv) };
            let pairs: Vec<(f64, f64)> = ma
                .iter()
                .filter_map(|(region, m)| Some((*m.get(*metric)?, *mb.get(region)?.get(*metric)?)))
                .collect();
            wilcoxon_one_sided(&pairs).ok()
        })
        .collect()
}

pub fn comparison_csv(rows: &[(String, Vec<Option<WilcoxonResult>>)]) -> String {
    let cols: Vec<&str> = COMPARISON_COLUMNS.iter().map(|c| c.0).collect();
    let mut out = format!("task,{}\n", cols.join(","));
    for (task, tests) in rows {
        let cells: Vec<String> = tests.iter().map(|t| opt(t.map(|t| t.p))).collect();
        let _ = writeln!(out, "{task},{}", cells.join(","));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_confusion_example() {
        let cm = ConfusionMatrix { tp: 90, fn_: 10, tn: 80, fp: 20 };
        let m = metrics(&cm).unwrap();
        assert!((m.f1 - 180.0 / 210.0).abs() < 1e-15);
        let mcc = (90.0 * 80.0 - 20.0 * 10.0) / (110.0f64 * 100.0 * 100.0 * 90.0).sqrt();
        assert!((m.mcc - mcc).abs() < 1e-15);
        assert!((m.mcc - 0.7035).abs() < 1e-4);
    }

    #[test]
    fn half_scores_are_positive() {
        let cm = confusion(&[0.5, 0.5, 0.5], &[0, 1, 0], 0.5).unwrap();
        assert_eq!(cm, ConfusionMatrix { tp: 1, fp: 2, tn: 0, fn_: 0 });
    }

    #[test]
    fn small_roc_example() {
        let r = roc_curve(&[0.9, 0.8, 0.4, 0.2], &[1, 0, 1, 0]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-15);
        let flat = roc_curve(&[0.3; 6], &[1, 0, 1, 0, 0, 1]).unwrap();
        assert_eq!(flat.auc, 0.5);
        assert!(roc_curve(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn pr_area_is_step_sum() {
        // Ranked labels 1, 0, 1: precision 1 at recall 0.5, 2/3 at recall 1.
        let r = pr_curve(&[0.9, 0.8, 0.7], &[1, 0, 1]).unwrap();
        assert!((r.auc - (0.5 * 1.0 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn wilcoxon_anchor_values() {
        let five: Vec<(f64, f64)> = (1..=5).map(|i| (0.0, i as f64)).collect();
        assert_eq!(wilcoxon_one_sided(&five).unwrap().p, 0.03125);
        let eight: Vec<(f64, f64)> = (1..=8).map(|i| (1.0, 1.0 + 0.1 * i as f64)).collect();
        let p = wilcoxon_one_sided(&eight).unwrap().p;
        assert_eq!(p, 1.0 / 256.0);
        assert!((p - 0.004).abs() < 1e-3);
    }

    #[test]
    fn wilcoxon_tied_ranks() {
        // Differences +1, -1, +1: ranks 2, 2, 2 (all tied); W+ = 4.
        let r = wilcoxon_one_sided(&[(0.0, 1.0), (1.0, 0.0), (0.0, 1.0)]).unwrap();
        assert_eq!(r.statistic, 4.0);
        // Sign patterns with W+ >= 4: two or three positives, 4 of 8.
        assert_eq!(r.p, 0.5);
        assert!(wilcoxon_one_sided(&[(1.0, 1.0)]).is_err());
    }

    #[test]
    fn linear_fit_recovers_line() {
        let (s, i) = linear_fit(&[1.0, 2.0, 3.0], &[3.0, 5.0, 7.0]).unwrap();
        assert!((s - 2.0).abs() < 1e-12 && (i - 1.0).abs() < 1e-12);
    }
}
