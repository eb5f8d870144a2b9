//! The convolutional encoder-decoder and the frozen-encoder classifier.
//!
//! Input and output are `(batch, time, 2 * n_ch)`; the bottleneck has 24
//! channels and its masked time average is the context vector.

mod weights;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::{
    apply_channel_mask, channel_dropout_mask, conv1d_causal, conv1d_causal_backward, conv_transpose1d,
    conv_transpose1d_backward, dense, dense_backward, global_avg_pool_masked, global_avg_pool_masked_backward,
    softmax, Activation, DropoutMask, Mask, Parameter, SeBlock, SeCache, SeShape, Squeeze, Tensor,
};

pub use weights::{load_classifier, load_weights, save_classifier, save_weights, WEIGHT_MAGIC, WEIGHT_VERSION};

/// Width of the context vector.
pub const CONTEXT_DIM: usize = 24;
pub const ENCODER_KERNELS: [usize; 3] = [11, 3, 3];
pub const DECODER_KERNELS: [usize; 3] = [3, 3, 11];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Band-limited optical density in, chromophores out.
    EndToEnd,
    /// Chromophores in, the same chromophores out.
    Baseline,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "end_to_end" | "end-to-end" => Ok(Mode::EndToEnd),
            "baseline" => Ok(Mode::Baseline),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::EndToEnd => "end_to_end",
            Mode::Baseline => "baseline",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SePlacement {
    /// After each of the three encoder convolutions.
    Every,
    /// Only after the bottleneck convolution.
    BottleneckOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub dropout: f64,
    pub hidden_activation: Activation,
    pub l1: f64,
    pub l2: f64,
    pub n_classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 120,
            dropout: 0.5,
            hidden_activation: Activation::Relu,
            l1: 1e-5,
            l2: 1e-4,
            n_classes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Long channels in the region; the network sees `2 * n_ch` columns.
    pub n_ch: usize,
    pub mode: Mode,
    /// `(f1, f2, bottleneck)`; the bottleneck must equal [`CONTEXT_DIM`].
    pub encoder_filters: [usize; 3],
    pub encoder_kernels: [usize; 3],
    pub decoder_kernels: [usize; 3],
    pub se_ratio: usize,
    pub se_activation: Activation,
    pub se_placement: SePlacement,
    /// `causal` keeps every encoder feature independent of later input.
    pub se_squeeze: Squeeze,
    pub decoder_channel_dropout: f64,
    pub classifier: ClassifierConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_ch: 6,
            mode: Mode::EndToEnd,
            encoder_filters: [12, 16, CONTEXT_DIM],
            encoder_kernels: ENCODER_KERNELS,
            decoder_kernels: DECODER_KERNELS,
            se_ratio: 4,
            se_activation: Activation::Relu,
            se_placement: SePlacement::Every,
            se_squeeze: Squeeze::Causal,
            decoder_channel_dropout: 1.0 / 6.0,
            classifier: ClassifierConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn with_channels(n_ch: usize) -> ModelConfig {
        ModelConfig { n_ch, ..ModelConfig::default() }
    }

    pub fn io_channels(&self) -> usize {
        2 * self.n_ch
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_ch == 0 {
            return bad("n_ch must be positive".into());
        }
        if self.encoder_filters.contains(&0) {
            return bad(format!("encoder filters must be positive, got {:?}", self.encoder_filters));
        }
        if self.encoder_filters[2] != CONTEXT_DIM {
            return bad(format!("bottleneck must have {CONTEXT_DIM} filters, got {}", self.encoder_filters[2]));
        }
        if self.encoder_kernels != ENCODER_KERNELS || self.decoder_kernels != DECODER_KERNELS {
            return bad(format!(
                "kernels are fixed at {ENCODER_KERNELS:?} (encoder) and {DECODER_KERNELS:?} (decoder)"
            ));
        }
        if !matches!(self.se_activation, Activation::Relu | Activation::Gelu) {
            return bad("SE activation must be relu or gelu".into());
        }
        for (i, &c) in self.encoder_filters.iter().enumerate() {
            if self.se_on(i) {
                SeShape { channels: c, reduction: self.se_ratio }.hidden()?;
            }
        }
        if !(0.0..1.0).contains(&self.decoder_channel_dropout) {
            return bad(format!("decoder dropout {} outside [0, 1)", self.decoder_channel_dropout));
        }
        let c = &self.classifier;
        if c.hidden == 0 || c.n_classes < 2 {
            return bad("classifier needs a hidden layer and at least two classes".into());
        }
        if !(0.0..1.0).contains(&c.dropout) || c.l1 < 0.0 || c.l2 < 0.0 {
            return bad("classifier dropout must lie in [0, 1) and penalties be nonnegative".into());
        }
        Ok(())
    }

    fn se_on(&self, layer: usize) -> bool {
        match self.se_placement {
            SePlacement::Every => true,
            SePlacement::BottleneckOnly => layer == 2,
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> [u8; 32] {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).into()
    }

    /// Parameter count from layer formulas, without building the model.
    pub fn closed_form_params(&self) -> usize {
        let io = self.io_channels();
        let [f1, f2, f3] = self.encoder_filters;
        let [k1, k2, k3] = self.encoder_kernels;
        let [d1, d2, d3] = self.decoder_kernels;
        let conv = |k: usize, ci: usize, co: usize| k * ci * co + co;
        let se = |c: usize| {
            let h = c / self.se_ratio;
            c * h + h + h * c + c
        };
        let mut n = conv(k1, io, f1) + conv(k2, f1, f2) + conv(k3, f2, f3);
        for (i, &c) in [f1, f2, f3].iter().enumerate() {
            if self.se_on(i) {
                n += se(c);
            }
        }
        n + conv(d1, f3, f2) + conv(d2, f2, f1) + conv(d3, f1, io)
    }
}

/// Convolution weights `(k, c_in, c_out)` and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub w: Parameter,
    pub b: Parameter,
}

impl ConvLayer {
    fn new(name: &str, k: usize, ci: usize, co: usize, rng: &mut impl Rng) -> ConvLayer {
        ConvLayer {
            w: Parameter::new(format!("{name}.w"), Tensor::lecun_normal(&[k, ci, co], k * ci, rng)),
            b: Parameter::new(format!("{name}.b"), Tensor::zeros(&[co])),
        }
    }
}

#[derive(Debug, Clone)]
struct EncoderLayerCache {
    input: Tensor,
    pre: Tensor,
    act: Tensor,
    se: Option<SeCache>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    mask: Mask,
    encoder: Vec<EncoderLayerCache>,
    features: Tensor,
    /// Inputs to each transposed convolution.
    dec_inputs: Vec<Tensor>,
    /// Pre-activations of the first two transposed convolutions.
    dec_pre: Vec<Tensor>,
    dropout: Vec<Option<DropoutMask>>,
}

/// Encoder (three causal convolutions with SeLU and squeeze-excitation)
/// followed by three transposed convolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderDecoderModel {
    pub cfg: ModelConfig,
    pub conv: Vec<ConvLayer>,
    pub se: Vec<Option<SeBlock>>,
    pub deconv: Vec<ConvLayer>,
}

pub fn build_model(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<EncoderDecoderModel> {
    cfg.validate()?;
    let io = cfg.io_channels();
    let enc_in = [io, cfg.encoder_filters[0], cfg.encoder_filters[1]];
    let mut conv = Vec::with_capacity(3);
    let mut se = Vec::with_capacity(3);
    for i in 0..3 {
        let co = cfg.encoder_filters[i];
        conv.push(ConvLayer::new(&format!("conv{}", i + 1), cfg.encoder_kernels[i], enc_in[i], co, rng));
        se.push(if cfg.se_on(i) {
            Some(SeBlock::new(
                &format!("se{}", i + 1),
                SeShape { channels: co, reduction: cfg.se_ratio },
                cfg.se_activation,
                rng,
            )?
            .with_squeeze(cfg.se_squeeze))
        } else {
            None
        });
    }
    let [f1, f2, f3] = cfg.encoder_filters;
    let dec = [(f3, f2), (f2, f1), (f1, io)];
    let deconv = dec
        .iter()
        .enumerate()
        .map(|(j, &(ci, co))| ConvLayer::new(&format!("deconv{}", j + 1), cfg.decoder_kernels[j], ci, co, rng))
        .collect();
    Ok(EncoderDecoderModel { cfg: cfg.clone(), conv, se, deconv })
}

impl EncoderDecoderModel {
    /// All parameters in a fixed order (encoder layers, then decoder).
    pub fn params(&self) -> Vec<&Parameter> {
        let mut v = Vec::new();
        for (c, s) in self.conv.iter().zip(&self.se) {
            v.push(&c.w);
            v.push(&c.b);
            if let Some(s) = s {
                v.extend(s.params());
            }
        }
        for d in &self.deconv {
            v.push(&d.w);
            v.push(&d.b);
        }
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        let mut v = Vec::new();
        for (c, s) in self.conv.iter_mut().zip(self.se.iter_mut()) {
            v.push(&mut c.w);
            v.push(&mut c.b);
            if let Some(s) = s {
                v.extend(s.params_mut());
            }
        }
        for d in &mut self.deconv {
            v.push(&mut d.w);
            v.push(&mut d.b);
        }
        v
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Parameter::zero_grad);
    }

    fn check_input(&self, x: &Tensor, mask: &Mask) -> Result<()> {
        let (nb, nt, c) = x.dims3()?;
        if c != self.cfg.io_channels() {
            return Err(Error::Shape(format!("model expects {} input columns, got {c}", self.cfg.io_channels())));
        }
        if mask.lengths.len() != nb || mask.max_len != nt {
            return Err(Error::Shape("mask does not match input".into()));
        }
        Ok(())
    }

    fn encoder_forward(&self, x: &Tensor, mask: &Mask) -> Result<(Tensor, Vec<EncoderLayerCache>)> {
        self.check_input(x, mask)?;
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(3);
        for (layer, se) in self.conv.iter().zip(&self.se) {
            let pre = conv1d_causal(&h, &layer.w.value, &layer.b.value.data, mask)?;
            let act = Activation::Selu.forward(&pre);
            let (out, se_cache) = match se {
                Some(s) => {
                    let (o, c) = s.forward(&act, mask)?;
                    (o, Some(c))
                }
                None => (act.clone(), None),
            };
            caches.push(EncoderLayerCache { input: h, pre, act, se: se_cache });
            h = out;
        }
        Ok((h, caches))
    }

    /// Bottleneck features `(batch, time, 24)`.
    pub fn encoder_features(&self, x: &Tensor, mask: &Mask) -> Result<Tensor> {
        Ok(self.encoder_forward(x, mask)?.0)
    }

    /// Full pass with explicit decoder dropout masks (`None` disables dropout).
    pub fn forward_with_masks(
        &self,
        x: &Tensor,
        mask: &Mask,
        dropout: [Option<DropoutMask>; 2],
    ) -> Result<(Tensor, ForwardCache)> {
        let (features, encoder) = self.encoder_forward(x, mask)?;
        let mut h = features.clone();
        let mut dec_inputs = Vec::with_capacity(3);
        let mut dec_pre = Vec::with_capacity(2);
        for (j, layer) in self.deconv.iter().enumerate() {
            let z = conv_transpose1d(&h, &layer.w.value, &layer.b.value.data, mask)?;
            dec_inputs.push(h);
            if j < 2 {
                let a = Activation::Selu.forward(&z);
                h = match &dropout[j] {
                    Some(m) => apply_channel_mask(&a, m),
                    None => a,
                };
                dec_pre.push(z);
            } else {
                h = z;
            }
        }
        let cache = ForwardCache {
            mask: mask.clone(),
            encoder,
            features,
            dec_inputs,
            dec_pre,
            dropout: dropout.into_iter().collect(),
        };
        Ok((h, cache))
    }

    /// Training pass: decoder channel dropout drawn from `rng`.
    pub fn forward_train(&self, x: &Tensor, mask: &Mask, rng: &mut impl Rng) -> Result<(Tensor, ForwardCache)> {
        let rate = self.cfg.decoder_channel_dropout;
        let nb = x.shape[0];
        let masks = if rate > 0.0 {
            let [f1, f2, _] = self.cfg.encoder_filters;
            [Some(channel_dropout_mask(nb, f2, rate, rng)), Some(channel_dropout_mask(nb, f1, rate, rng))]
        } else {
            [None, None]
        };
        self.forward_with_masks(x, mask, masks)
    }

    /// Accumulates parameter gradients from `d loss / d output`; returns `d loss / d input`.
    pub fn backward(&mut self, cache: &ForwardCache, dout: &Tensor) -> Result<Tensor> {
        let mask = &cache.mask;
        let mut g = dout.clone();
        for j in (0..3).rev() {
            if j < 2 {
                if let Some(m) = &cache.dropout[j] {
                    g = apply_channel_mask(&g, m);
                }
                g = Activation::Selu.backward(&cache.dec_pre[j], &g);
            }
            let layer = &mut self.deconv[j];
            let (dx, dw, db) = conv_transpose1d_backward(&cache.dec_inputs[j], &layer.w.value, &g, mask)?;
            layer.w.grad.add_assign(&dw);
            layer.b.grad.data.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
            g = dx;
        }
        self.encoder_backward(&cache.encoder, g, mask)
    }

    fn encoder_backward(&mut self, caches: &[EncoderLayerCache], mut g: Tensor, mask: &Mask) -> Result<Tensor> {
        for i in (0..3).rev() {
            let c = &caches[i];
            if let (Some(se), Some(sc)) = (self.se[i].as_mut(), c.se.as_ref()) {
                g = se.backward(&c.act, sc, &g, mask)?;
            }
            g = Activation::Selu.backward(&c.pre, &g);
            let layer = &mut self.conv[i];
            let (dx, dw, db) = conv1d_causal_backward(&c.input, &layer.w.value, &g, mask)?;
            layer.w.grad.add_assign(&dw);
            layer.b.grad.data.iter_mut().zip(&db).for_each(|(a, b)| *a += b);
            g = dx;
        }
        Ok(g)
    }

    /// Bottleneck features of a cached pass.
    pub fn cached_features<'a>(&self, cache: &'a ForwardCache) -> &'a Tensor {
        &cache.features
    }
}

/// Encoder forward followed by masked average pooling: `(batch, 24)`.
pub fn encode(model: &EncoderDecoderModel, x: &Tensor, mask: &Mask) -> Result<Tensor> {
    global_avg_pool_masked(&model.encoder_features(x, mask)?, mask)
}

/// Deterministic reconstruction (no dropout).
pub fn reconstruct(model: &EncoderDecoderModel, x: &Tensor, mask: &Mask) -> Result<Tensor> {
    Ok(model.forward_with_masks(x, mask, [None, None])?.0)
}

/// Parameter count by walking the built tensors.
pub fn count_params(model: &EncoderDecoderModel) -> usize {
    model.params().iter().map(|p| p.len()).sum()
}

/// Gradient of a scalar loss on the context vector, propagated into the encoder.
pub fn encode_backward(model: &mut EncoderDecoderModel, x: &Tensor, mask: &Mask, dctx: &Tensor) -> Result<Tensor> {
    let (_, caches) = model.encoder_forward(x, mask)?;
    let g = global_avg_pool_masked_backward(dctx, mask, CONTEXT_DIM);
    model.encoder_backward(&caches, g, mask)
}

/// Read-only encoder: the classifier can compute contexts but never update it.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEncoder {
    model: EncoderDecoderModel,
}

impl FrozenEncoder {
    pub fn encode(&self, x: &Tensor, mask: &Mask) -> Result<Tensor> {
        encode(&self.model, x, mask)
    }

    pub fn model(&self) -> &EncoderDecoderModel {
        &self.model
    }

    pub fn into_inner(self) -> EncoderDecoderModel {
        self.model
    }
}

pub fn freeze_encoder(model: EncoderDecoderModel) -> FrozenEncoder {
    FrozenEncoder { model }
}

/// `dense(24 -> hidden) -> act -> dropout -> dense(hidden -> classes) -> softmax`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead {
    pub cfg: ClassifierConfig,
    /// Fixed context standardisation `(ctx - ctx_mean) * ctx_scale`, set
    /// from training contexts and never updated by the optimiser.
    pub ctx_mean: Parameter,
    pub ctx_scale: Parameter,
    pub w1: Parameter,
    pub b1: Parameter,
    pub w2: Parameter,
    pub b2: Parameter,
}

#[derive(Debug, Clone)]
pub struct HeadCache {
    input: Tensor,
    pre: Tensor,
    hidden: Tensor,
    dropout: Option<DropoutMask>,
    pub probs: Tensor,
}

impl ClassifierHead {
    pub fn new(cfg: &ClassifierConfig, rng: &mut impl Rng) -> ClassifierHead {
        let (h, k) = (cfg.hidden, cfg.n_classes);
        ClassifierHead {
            cfg: cfg.clone(),
            ctx_mean: Parameter::new("head.ctx_mean", Tensor::zeros(&[CONTEXT_DIM])),
            ctx_scale: Parameter::new("head.ctx_scale", Tensor::filled(&[CONTEXT_DIM], 1.0)),
            w1: Parameter::new("head.w1", Tensor::glorot_uniform(&[CONTEXT_DIM, h], CONTEXT_DIM, h, rng)),
            b1: Parameter::new("head.b1", Tensor::zeros(&[h])),
            w2: Parameter::new("head.w2", Tensor::glorot_uniform(&[h, k], h, k, rng)),
            b2: Parameter::new("head.b2", Tensor::zeros(&[k])),
        }
    }

    pub fn params(&self) -> Vec<&Parameter> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Every stored tensor: the standardisation followed by the trainable parameters.
    pub fn stored(&self) -> Vec<&Parameter> {
        vec![&self.ctx_mean, &self.ctx_scale, &self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn stored_mut(&mut self) -> Vec<&mut Parameter> {
        vec![&mut self.ctx_mean, &mut self.ctx_scale, &mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    /// Sets the standardisation from a `(n, 24)` batch of contexts:
    /// per-dimension mean and inverse population SD (1 for constant dimensions).
    pub fn fit_standardisation(&mut self, ctx: &Tensor) -> Result<()> {
        let (n, d) = ctx.dims2()?;
        if d != CONTEXT_DIM || n == 0 {
            return Err(Error::Shape(format!("standardisation needs (n > 0, {CONTEXT_DIM}), got {:?}", ctx.shape)));
        }
        for j in 0..d {
            let mean = (0..n).map(|i| ctx.data[i * d + j]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (ctx.data[i * d + j] - mean).powi(2)).sum::<f64>() / n as f64;
            self.ctx_mean.value.data[j] = mean;
            self.ctx_scale.value.data[j] = if var > 0.0 { 1.0 / var.sqrt() } else { 1.0 };
        }
        Ok(())
    }

    fn standardise(&self, ctx: &Tensor) -> Result<Tensor> {
        let (_, d) = ctx.dims2()?;
        if d != CONTEXT_DIM {
            return Err(Error::Shape(format!("context has {d} columns, expected {CONTEXT_DIM}")));
        }
        let (m, s) = (&self.ctx_mean.value.data, &self.ctx_scale.value.data);
        Ok(Tensor::from_fn(&ctx.shape, |i| (ctx.data[i] - m[i % d]) * s[i % d]))
    }

    /// Weight matrices subject to the L1-L2 penalty.
    pub fn penalised(&self) -> Vec<&Parameter> {
        vec![&self.w1, &self.w2]
    }

    pub fn forward_with_mask(&self, ctx: &Tensor, dropout: Option<DropoutMask>) -> Result<(Tensor, HeadCache)> {
        let z = self.standardise(ctx)?;
        let pre = dense(&z, &self.w1.value, &self.b1.value.data)?;
        let mut hidden = self.cfg.hidden_activation.forward(&pre);
        if let Some(m) = &dropout {
            hidden = apply_channel_mask(&hidden, m);
        }
        let logits = dense(&hidden, &self.w2.value, &self.b2.value.data)?;
        let probs = softmax(&logits)?;
        Ok((logits, HeadCache { input: z, pre, hidden, dropout, probs }))
    }

    pub fn forward(&self, ctx: &Tensor, training: Option<&mut dyn rand::RngCore>) -> Result<(Tensor, HeadCache)> {
        let mask = match training {
            Some(rng) if self.cfg.dropout > 0.0 => {
                Some(channel_dropout_mask(ctx.shape[0], self.cfg.hidden, self.cfg.dropout, rng))
            }
            _ => None,
        };
        self.forward_with_mask(ctx, mask)
    }

    /// Accumulates gradients from `d loss / d logits`; returns `d loss / d context`.
    pub fn backward(&mut self, cache: &HeadCache, dlogits: &Tensor) -> Result<Tensor> {
        let (dh, dw2, db2) = dense_backward(&cache.hidden, &self.w2.value, dlogits)?;
        self.w2.grad.add_assign(&dw2);
        self.b2.grad.data.iter_mut().zip(&db2).for_each(|(a, b)| *a += b);
        let dh = match &cache.dropout {
            Some(m) => apply_channel_mask(&dh, m),
            None => dh,
        };
        let dpre = self.cfg.hidden_activation.backward(&cache.pre, &dh);
        let (dz, dw1, db1) = dense_backward(&cache.input, &self.w1.value, &dpre)?;
        self.w1.grad.add_assign(&dw1);
        self.b1.grad.data.iter_mut().zip(&db1).for_each(|(a, b)| *a += b);
        let s = &self.ctx_scale.value.data;
        Ok(Tensor::from_fn(&dz.shape, |i| dz.data[i] * s[i % CONTEXT_DIM]))
    }
}

/// Frozen encoder plus trainable head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel {
    pub encoder: FrozenEncoder,
    pub head: ClassifierHead,
}

impl ClassifierModel {
    pub fn new(encoder: FrozenEncoder, rng: &mut impl Rng) -> ClassifierModel {
        let head = ClassifierHead::new(&encoder.model.cfg.classifier, rng);
        ClassifierModel { encoder, head }
    }

    pub fn count_params(&self) -> usize {
        self.head.params().iter().map(|p| p.len()).sum()
    }
}

/// Class probabilities `(batch, n_classes)`; column 1 is the positive class.
pub fn classify(model: &ClassifierModel, x: &Tensor, mask: &Mask) -> Result<Tensor> {
    let ctx = model.encoder.encode(x, mask)?;
    Ok(model.head.forward(&ctx, None)?.1.probs)
}

/// Positive iff `p_positive >= threshold`.
pub fn decide(p_positive: f64, threshold: f64) -> bool {
    p_positive >= threshold
}
