//! Two-stage training: masked reconstruction pretraining of the
//! encoder-decoder, then a classifier head on frozen-encoder contexts.

use std::path::PathBuf;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Label, MIN_LEN_SAMPLES, Region, TrialKey, TrialRecording};
use crate::error::{Error, Result};
use crate::model::{save_weights, ClassifierModel, EncoderDecoderModel, FrozenEncoder, Mode};
use crate::nn::{
    adam_step, channel_dropout_mask, l1l2_grad, l1l2_penalty, masked_mse, weighted_cross_entropy,
    weighted_cross_entropy_logit_grad, AdamConfig, AdamState, CyclicalLr, Mask, Tensor, DEFAULT_LOSS_WINDOW,
};
use crate::preprocess::{apply_norm, fit_norm, NormalizationStats, Preprocessor};

/// Which data the pretraining checkpoint rule watches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Monitor {
    /// Reconstruction loss on the training trials.
    Train,
    /// Reconstruction loss on a random held-out share of the training trials.
    Holdout { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub loss_window: usize,
    pub lr: CyclicalLr,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Stop once this many epochs pass without a new minimum.
    pub patience: usize,
    pub monitor: Monitor,
    pub classifier_epochs: usize,
    /// Loss weight of the rarer class in the training split; the other class gets `1 - w`.
    pub minority_weight: f64,
    pub threshold: f64,
    /// Weight file rewritten at every new pretraining minimum.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            loss_window: DEFAULT_LOSS_WINDOW,
            lr: CyclicalLr::default(),
            adam: AdamConfig::default(),
            max_epochs: 6000,
            patience: 250,
            monitor: Monitor::Train,
            classifier_epochs: 1500,
            minority_weight: 0.7,
            threshold: 0.5,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.loss_window == 0 {
            return bad("loss_window must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if !(self.minority_weight > 0.0 && self.minority_weight < 1.0) {
            return bad("minority_weight must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        if let Monitor::Holdout { fraction } = self.monitor {
            if !(fraction > 0.0 && fraction < 1.0) {
                return bad("holdout fraction must lie in (0, 1)");
            }
        }
        if self.lr.base_lr != self.lr.max_lr {
            self.lr.validate()?;
        }
        Ok(())
    }
}

/// One model-ready sequence: `(time, channels)` input and target plus label index.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Array2<f64>,
    pub target: Array2<f64>,
    pub label: usize,
}

impl Example {
    pub fn len(&self) -> usize {
        self.input.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.input.nrows() == 0
    }
}

/// A trial after preprocessing, before normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedTrial {
    pub key: TrialKey,
    pub label: Label,
    pub input: Array2<f64>,
    pub target: Array2<f64>,
}

/// Builds model inputs and targets for `region`.
///
/// The target is always the fully processed HbO/HbR series. End-to-end
/// input is the band-limited optical density; baseline input is the target.
pub fn prepare_trials(
    trials: &[TrialRecording],
    pp: &Preprocessor,
    region: Region,
    mode: Mode,
) -> Result<Vec<PreparedTrial>> {
    trials
        .iter()
        .map(|t| {
            let target = pp.full(t, region)?.data;
            let input = match mode {
                Mode::EndToEnd => pp.raw(t, region)?.data,
                Mode::Baseline => target.clone(),
            };
            Ok(PreparedTrial { key: t.key(), label: t.label, input, target })
        })
        .collect()
}

/// Per-channel 0-1 scaling fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub input: NormalizationStats,
    pub target: NormalizationStats,
}

impl Normalizer {
    pub fn fit(trials: &[PreparedTrial]) -> Result<Normalizer> {
        Ok(Normalizer {
            input: fit_norm(trials.iter().map(|t| &t.input))?,
            target: fit_norm(trials.iter().map(|t| &t.target))?,
        })
    }

    pub fn apply(&self, trials: &[PreparedTrial]) -> Result<Vec<Example>> {
        trials
            .iter()
            .map(|t| {
                Ok(Example {
                    input: apply_norm(&t.input, &self.input)?,
                    target: apply_norm(&t.target, &self.target)?,
                    label: t.label.as_index(),
                })
            })
            .collect()
    }
}

/// Padded mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Tensor,
    pub target: Tensor,
    pub mask: Mask,
    pub labels: Vec<usize>,
    /// Positions of the examples in the source slice.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn lengths(&self) -> &[usize] {
        &self.mask.lengths
    }
}

fn pad(rows: &[&Array2<f64>], t_max: usize) -> Tensor {
    let c = rows[0].ncols();
    let mut out = Tensor::zeros(&[rows.len(), t_max, c]);
    for (b, x) in rows.iter().enumerate() {
        for (t, row) in x.rows().into_iter().enumerate() {
            let base = (b * t_max + t) * c;
            out.data[base..base + c].iter_mut().zip(row.iter()).for_each(|(o, v)| *o = *v);
        }
    }
    out
}

fn check_examples(examples: &[Example]) -> Result<()> {
    let first = examples.first().ok_or_else(|| Error::InvalidInput("no training examples".into()))?;
    let (ci, co) = (first.input.ncols(), first.target.ncols());
    for (i, e) in examples.iter().enumerate() {
        if e.input.ncols() != ci || e.target.ncols() != co {
            return Err(Error::ColumnMismatch {
                expected: format!("{ci} input and {co} target columns"),
                found: format!("example {i}: {} and {}", e.input.ncols(), e.target.ncols()),
            });
        }
        if e.input.nrows() != e.target.nrows() {
            return Err(Error::Shape(format!("example {i}: input and target lengths differ")));
        }
        if e.len() < MIN_LEN_SAMPLES {
            return Err(Error::TooShort { len: e.len(), min: MIN_LEN_SAMPLES });
        }
    }
    Ok(())
}

/// Splits `examples` into batches of `batch_size`, each padded to its own
/// longest sequence. With `shuffle`, the order is drawn from `rng`.
pub fn make_batches(examples: &[Example], batch_size: usize, rng: &mut impl Rng, shuffle: bool) -> Result<Vec<Batch>> {
    check_examples(examples)?;
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if shuffle {
        order.shuffle(rng);
    }
    Ok(order.chunks(batch_size).map(|idx| batch_of(examples, idx)).collect())
}

fn batch_of(examples: &[Example], idx: &[usize]) -> Batch {
    let lengths: Vec<usize> = idx.iter().map(|&i| examples[i].len()).collect();
    let t_max = *lengths.iter().max().expect("non-empty chunk");
    let inputs: Vec<&Array2<f64>> = idx.iter().map(|&i| &examples[i].input).collect();
    let targets: Vec<&Array2<f64>> = idx.iter().map(|&i| &examples[i].target).collect();
    Batch {
        input: pad(&inputs, t_max),
        target: pad(&targets, t_max),
        mask: Mask::new(lengths, t_max).expect("lengths bounded by t_max"),
        labels: idx.iter().map(|&i| examples[i].label).collect(),
        indices: idx.to_vec(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

/// Loss history of one training run.
///
/// Equality ignores `wall_time_s`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub stage: String,
    pub seed: u64,
    /// Monitored loss before the first update.
    pub initial_loss: f64,
    /// Monitored loss after each epoch (weights at the end of that epoch).
    pub epoch_losses: Vec<f64>,
    /// Mean training loss seen by the optimiser during each epoch.
    pub running_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_loss: f64,
    pub stop_reason: StopReason,
    /// Not serialised, so report files stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl PartialEq for TrainReport {
    fn eq(&self, o: &Self) -> bool {
        self.stage == o.stage
            && self.seed == o.seed
            && self.initial_loss.to_bits() == o.initial_loss.to_bits()
            && self.epoch_losses == o.epoch_losses
            && self.running_losses == o.running_losses
            && self.best_epoch == o.best_epoch
            && self.best_loss.to_bits() == o.best_loss.to_bits()
            && self.stop_reason == o.stop_reason
    }
}

impl TrainReport {
    pub fn epochs_run(&self) -> usize {
        self.epoch_losses.len()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }

    pub fn write(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Masked reconstruction loss of `model` over `examples`, dropout off.
pub fn reconstruction_loss(model: &EncoderDecoderModel, examples: &[Example], cfg: &TrainConfig) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    let order: Vec<usize> = (0..examples.len()).collect();
    for idx in order.chunks(cfg.batch_size) {
        let b = batch_of(examples, idx);
        let (y, _) = model.forward_with_masks(&b.input, &b.mask, [None, None])?;
        let (loss, _) = masked_mse(&y, &b.target, &b.mask, cfg.loss_window)?;
        let n = contributing(&b, cfg.loss_window);
        sum += loss * n as f64;
        count += n;
    }
    Ok(sum / count as f64)
}

fn contributing(b: &Batch, window: usize) -> usize {
    let c = b.target.shape[2];
    b.mask.lengths.iter().map(|&l| l.min(window) * c).sum()
}

/// Self-supervised pretraining. Returns the weights of the epoch with the
/// lowest monitored loss and the full report.
pub fn pretrain(
    mut model: EncoderDecoderModel,
    examples: &[Example],
    cfg: &TrainConfig,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<(EncoderDecoderModel, TrainReport)> {
    cfg.validate()?;
    check_examples(examples)?;
    let io = model.cfg.io_channels();
    if examples[0].input.ncols() != io || examples[0].target.ncols() != io {
        return Err(Error::ColumnMismatch {
            expected: format!("{io} columns"),
            found: format!("{} input, {} target", examples[0].input.ncols(), examples[0].target.ncols()),
        });
    }
    let start = Instant::now();
    let (train, monitor): (Vec<Example>, Vec<Example>) = match cfg.monitor {
        Monitor::Train => (examples.to_vec(), examples.to_vec()),
        Monitor::Holdout { fraction } => {
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(rng);
            let n_hold = ((examples.len() as f64 * fraction).round() as usize).clamp(1, examples.len() - 1);
            let hold = order[..n_hold].iter().map(|&i| examples[i].clone()).collect();
            let fit = order[n_hold..].iter().map(|&i| examples[i].clone()).collect();
            (fit, hold)
        }
    };
    let mut adam = AdamState::new(model.params(), cfg.adam);
    let initial_loss = reconstruction_loss(&model, &monitor, cfg)?;
    let mut best = (model.clone(), usize::MAX, f64::INFINITY);
    let mut epoch_losses = Vec::new();
    let mut running_losses = Vec::new();
    let mut iter = 0u64;
    let mut stop_reason = StopReason::MaxEpochs;
    for epoch in 0..cfg.max_epochs {
        let mut sum = 0.0;
        let mut count = 0usize;
        for batch in make_batches(&train, cfg.batch_size, rng, true)? {
            model.zero_grad();
            let (y, cache) = model.forward_train(&batch.input, &batch.mask, rng)?;
            let (loss, dy) = masked_mse(&y, &batch.target, &batch.mask, cfg.loss_window)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            model.backward(&cache, &dy)?;
            adam_step(&mut model.params_mut(), &mut adam, cfg.lr.lr(iter))?;
            iter += 1;
            let n = contributing(&batch, cfg.loss_window);
            sum += loss * n as f64;
            count += n;
        }
        running_losses.push(sum / count as f64);
        let loss = reconstruction_loss(&model, &monitor, cfg)?;
        if !loss.is_finite() {
            return Err(Error::Diverged { epoch, loss });
        }
        epoch_losses.push(loss);
        log::debug!("pretrain epoch {epoch}: loss {loss:.6e}");
        if loss < best.2 {
            best = (model.clone(), epoch, loss);
            if let Some(path) = &cfg.checkpoint {
                save_weights(&model, path)?;
            }
        } else if epoch - best.1 > cfg.patience {
            stop_reason = StopReason::EarlyStop;
            break;
        }
    }
    let (mut best_model, best_epoch, best_loss) = best;
    best_model.zero_grad();
    let report = TrainReport {
        stage: "pretrain".into(),
        seed,
        initial_loss,
        epoch_losses,
        running_losses,
        best_epoch,
        best_loss,
        stop_reason,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((best_model, report))
}

/// Class weights for a training split: `minority_weight` on the rarer
/// class, `1 - minority_weight` on the other, equal weights on a tie.
pub fn class_weights(labels: &[usize], minority_weight: f64) -> Result<[f64; 2]> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidInput("training split holds a single class".into()));
    }
    Ok(match pos.cmp(&neg) {
        std::cmp::Ordering::Less => [1.0 - minority_weight, minority_weight],
        std::cmp::Ordering::Greater => [minority_weight, 1.0 - minority_weight],
        std::cmp::Ordering::Equal => [0.5, 0.5],
    })
}

/// Context vectors `(n, 24)` for `examples`, in order.
pub fn contexts(encoder: &FrozenEncoder, examples: &[Example], batch_size: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(examples.len() * crate::model::CONTEXT_DIM);
    let order: Vec<usize> = (0..examples.len()).collect();
    for idx in order.chunks(batch_size.max(1)) {
        let b = batch_of(examples, idx);
        data.extend(encoder.encode(&b.input, &b.mask)?.data);
    }
    Tensor::new(vec![examples.len(), crate::model::CONTEXT_DIM], data)
}

fn rows(t: &Tensor, idx: &[usize]) -> Tensor {
    let c = t.shape[1];
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(&t.data[i * c..(i + 1) * c]);
    }
    Tensor { shape: vec![idx.len(), c], data }
}

/// Trains the classifier head on top of `encoder`. The encoder is never updated.
pub fn train_classifier(
    encoder: &FrozenEncoder,
    examples: &[Example],
    cfg: &TrainConfig,
    seed: u64,
    rng: &mut impl Rng,
) -> Result<(ClassifierModel, TrainReport)> {
    cfg.validate()?;
    check_examples(examples)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let weights = class_weights(&labels, cfg.minority_weight)?;
    let ctx = contexts(encoder, examples, cfg.batch_size)?;
    let start = Instant::now();
    let mut model = ClassifierModel::new(encoder.clone(), rng);
    model.head.fit_standardisation(&ctx)?;
    let head_cfg = model.head.cfg.clone();
    let mut adam = AdamState::new(model.head.params(), cfg.adam);
    let objective = |head: &crate::model::ClassifierHead| -> Result<f64> {
        let (_, cache) = head.forward_with_mask(&ctx, None)?;
        let w: Vec<&Tensor> = head.penalised().into_iter().map(|p| &p.value).collect();
        Ok(weighted_cross_entropy(&cache.probs, &labels, &weights)? + l1l2_penalty(&w, head_cfg.l1, head_cfg.l2))
    };
    let initial_loss = objective(&model.head)?;
    let mut epoch_losses = Vec::with_capacity(cfg.classifier_epochs);
    let mut running_losses = Vec::with_capacity(cfg.classifier_epochs);
    let mut iter = 0u64;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for epoch in 0..cfg.classifier_epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let x = rows(&ctx, idx);
            let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            let head = &mut model.head;
            for p in head.params_mut() {
                p.zero_grad();
            }
            let drop = (head_cfg.dropout > 0.0).then(|| channel_dropout_mask(idx.len(), head_cfg.hidden, head_cfg.dropout, rng));
            let (_, cache) = head.forward_with_mask(&x, drop)?;
            let w: Vec<&Tensor> = head.penalised().into_iter().map(|p| &p.value).collect();
            let loss = weighted_cross_entropy(&cache.probs, &y, &weights)? + l1l2_penalty(&w, head_cfg.l1, head_cfg.l2);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            let dlogits = weighted_cross_entropy_logit_grad(&cache.probs, &y, &weights)?;
            head.backward(&cache, &dlogits)?;
            for p in [&mut head.w1, &mut head.w2] {
                let g = l1l2_grad(&p.value, head_cfg.l1, head_cfg.l2);
                p.grad.add_assign(&g);
            }
            adam_step(&mut head.params_mut(), &mut adam, cfg.lr.lr(iter))?;
            iter += 1;
            sum += loss * idx.len() as f64;
        }
        running_losses.push(sum / examples.len() as f64);
        epoch_losses.push(objective(&model.head)?);
    }
    let (best_epoch, best_loss) = epoch_losses
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, l)| if l < a.1 { (i, l) } else { a });
    let report = TrainReport {
        stage: "classifier".into(),
        seed,
        initial_loss,
        epoch_losses,
        running_losses,
        best_epoch,
        best_loss,
        stop_reason: StopReason::MaxEpochs,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}

/// Per-example `(p_positive, predicted positive)`.
pub fn infer_labels(model: &ClassifierModel, examples: &[Example], threshold: f64) -> Result<Vec<(f64, bool)>> {
    if examples.is_empty() {
        return Ok(Vec::new());
    }
    let ctx = contexts(&model.encoder, examples, 32)?;
    let (_, cache) = model.head.forward_with_mask(&ctx, None)?;
    Ok((0..examples.len())
        .map(|i| {
            let p = cache.probs.data[2 * i + 1];
            (p, crate::model::decide(p, threshold))
        })
        .collect())
}
