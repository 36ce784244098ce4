//! The trainable classifier: a registered compact backbone followed by the
//! fine-tuning head
//!
//! ```text
//! backbone → GAP → [BN → dropout → FC-64 → ReLU] → [BN → dropout → FC-4] → softmax
//! ```
//!
//! Backbones are a non-learned average-pooling stem followed by blocks of
//! `conv3×3 → BN → ReLU → maxpool 2×2`. Global average pooling makes the head
//! independent of the input resolution.

pub mod checkpoint;
pub mod layers;

use std::sync::{OnceLock, RwLock};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::imageops::ImageTensor;
use crate::seed;

use layers::Activations;

pub const SUPPORTED_INPUT_SIZES: [usize; 3] = [224, 240, 260];
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

/// A class-probability vector on the 4-simplex.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionVector([f64; NUM_CLASSES]);

impl PredictionVector {
    pub const SUM_TOLERANCE: f64 = 1e-6;

    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self> {
        Self::with_tolerance(p, Self::SUM_TOLERANCE)
    }

    pub fn with_tolerance(p: [f64; NUM_CLASSES], sum_tolerance: f64) -> Result<Self> {
        if p.iter().any(|v| !v.is_finite() || *v < -1e-12 || *v > 1.0 + 1e-12) {
            return Err(Error::InvalidPrediction(format!("entries outside [0,1]: {p:?}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > sum_tolerance {
            return Err(Error::InvalidPrediction(format!("entries sum to {sum}, not 1: {p:?}")));
        }
        Ok(PredictionVector(p))
    }

    /// Scales non-negative finite weights onto the simplex.
    pub fn normalized(p: [f64; NUM_CLASSES]) -> Result<Self> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) || sum <= 0.0 {
            return Err(Error::InvalidPrediction(format!("cannot normalise {p:?}")));
        }
        Ok(PredictionVector(p.map(|v| v / sum)))
    }

    pub fn one_hot(c: ClassLabel) -> Self {
        let mut p = [0.0; NUM_CLASSES];
        p[c.index()] = 1.0;
        PredictionVector(p)
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> ClassLabel {
        let mut best = 0;
        for i in 1..NUM_CLASSES {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        ClassLabel::from_index(best).expect("index within class range")
    }
}

/// A compact, from-scratch backbone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub id: String,
    /// Side of the non-overlapping average-pooling stem.
    pub stem_pool: usize,
    /// Output channels of each conv block.
    pub widths: Vec<usize>,
}

impl BackboneSpec {
    pub fn feature_dim(&self) -> usize {
        self.widths.last().copied().unwrap_or(3)
    }
}

fn registry() -> &'static RwLock<Vec<BackboneSpec>> {
    static REGISTRY: OnceLock<RwLock<Vec<BackboneSpec>>> = OnceLock::new();
    REGISTRY.get_or_init(|| {
        let spec = |id: &str, stem_pool, widths: &[usize]| BackboneSpec {
            id: id.to_string(),
            stem_pool,
            widths: widths.to_vec(),
        };
        RwLock::new(vec![
            spec("compact-a", 8, &[8, 16, 32]),
            spec("compact-b", 8, &[12, 24]),
            spec("compact-c", 4, &[8, 16, 24]),
            spec("compact-wide", 2, &[16, 32, 64, 128]),
        ])
    })
}

/// Registers (or replaces) a backbone so `ModelConfig::backbone_id` can name it.
pub fn register_backbone(spec: BackboneSpec) -> Result<()> {
    if spec.stem_pool == 0 || spec.widths.contains(&0) {
        return Err(Error::Config(format!("backbone {:?} has a zero-sized stage", spec.id)));
    }
    let min_side = SUPPORTED_INPUT_SIZES[0] / spec.stem_pool;
    if min_side >> spec.widths.len() == 0 {
        return Err(Error::Config(format!("backbone {:?} downsamples below one pixel", spec.id)));
    }
    let mut reg = registry().write().expect("backbone registry poisoned");
    reg.retain(|b| b.id != spec.id);
    reg.push(spec);
    Ok(())
}

pub fn backbone(id: &str) -> Result<BackboneSpec> {
    registry()
        .read()
        .expect("backbone registry poisoned")
        .iter()
        .find(|b| b.id == id)
        .cloned()
        .ok_or_else(|| Error::UnknownBackbone(id.to_string()))
}

pub fn registered_backbones() -> Vec<String> {
    registry()
        .read()
        .expect("backbone registry poisoned")
        .iter()
        .map(|b| b.id.clone())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone_id: String,
    pub input_size: usize,
    pub head_hidden: usize,
    pub head_out: usize,
    pub drop_factor: f64,
    pub head_lr_multiplier: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone_id: "compact-a".into(),
            input_size: 260,
            head_hidden: 64,
            head_out: NUM_CLASSES,
            drop_factor: 0.3,
            head_lr_multiplier: 10.0,
        }
    }
}

impl ModelConfig {
    pub fn new(backbone_id: impl Into<String>, input_size: usize) -> Self {
        ModelConfig {
            backbone_id: backbone_id.into(),
            input_size,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_INPUT_SIZES.contains(&self.input_size) {
            return Err(Error::Config(format!(
                "input_size {} not in {:?}",
                self.input_size, SUPPORTED_INPUT_SIZES
            )));
        }
        if !(0.0..1.0).contains(&self.drop_factor) {
            return Err(Error::Config(format!("drop_factor {} not in [0,1)", self.drop_factor)));
        }
        if self.head_out != NUM_CLASSES {
            return Err(Error::Config(format!("head_out must be {NUM_CLASSES}, got {}", self.head_out)));
        }
        if self.head_hidden == 0 || self.head_lr_multiplier <= 0.0 {
            return Err(Error::Config("head_hidden and head_lr_multiplier must be positive".into()));
        }
        backbone(&self.backbone_id).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Backbone,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TensorRole {
    Weight,
    Bias,
    BnScale,
    BnShift,
    RunningMean,
    RunningVar,
}

impl TensorRole {
    pub fn learnable(self) -> bool {
        !matches!(self, TensorRole::RunningMean | TensorRole::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub role: TensorRole,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Layer {
    Stem { factor: usize },
    Conv { weight: usize, cout: usize },
    BatchNorm { gamma: usize, beta: usize, mean: usize, var: usize },
    Relu,
    MaxPool,
    GlobalAvgPool,
    Dropout,
    Dense { weight: usize, bias: usize, fout: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    config: ModelConfig,
    tensors: Vec<NamedTensor>,
    layers: Vec<Layer>,
}

struct Builder {
    tensors: Vec<NamedTensor>,
    layers: Vec<Layer>,
}

impl Builder {
    fn tensor(&mut self, name: String, shape: Vec<usize>, group: ParamGroup, role: TensorRole, data: Vec<f64>) -> usize {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.tensors.push(NamedTensor { name, shape, group, role, data });
        self.tensors.len() - 1
    }

    fn batchnorm(&mut self, prefix: &str, channels: usize, group: ParamGroup) {
        let gamma = self.tensor(format!("{prefix}.gamma"), vec![channels], group, TensorRole::BnScale, vec![1.0; channels]);
        let beta = self.tensor(format!("{prefix}.beta"), vec![channels], group, TensorRole::BnShift, vec![0.0; channels]);
        let mean = self.tensor(format!("{prefix}.running_mean"), vec![channels], group, TensorRole::RunningMean, vec![0.0; channels]);
        let var = self.tensor(format!("{prefix}.running_var"), vec![channels], group, TensorRole::RunningVar, vec![1.0; channels]);
        self.layers.push(Layer::BatchNorm { gamma, beta, mean, var });
    }
}

fn uniform(rng: &mut seed::Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Xavier/Glorot uniform bound.
pub fn xavier_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Backbone convolutions use He-uniform initialisation; the head's dense
/// layers use Xavier-uniform. Biases start at zero, BN at scale 1 / shift 0.
pub fn build_model(cfg: &ModelConfig, init_seed: u64) -> Result<NetworkParams> {
    cfg.validate()?;
    let spec = backbone(&cfg.backbone_id)?;
    let mut rng = seed::rng(init_seed);
    let mut b = Builder {
        tensors: Vec::new(),
        layers: vec![Layer::Stem { factor: spec.stem_pool }],
    };
    let mut cin = 3;
    for (i, &cout) in spec.widths.iter().enumerate() {
        let bound = (6.0 / (cin * 9) as f64).sqrt();
        let data = uniform(&mut rng, cout * cin * 9, bound);
        let weight = b.tensor(format!("backbone.block{i}.conv.weight"), vec![cout, cin, 3, 3], ParamGroup::Backbone, TensorRole::Weight, data);
        b.layers.push(Layer::Conv { weight, cout });
        b.batchnorm(&format!("backbone.block{i}.bn"), cout, ParamGroup::Backbone);
        b.layers.push(Layer::Relu);
        b.layers.push(Layer::MaxPool);
        cin = cout;
    }
    b.layers.push(Layer::GlobalAvgPool);

    let features = spec.feature_dim();
    let head = ParamGroup::Head;
    b.batchnorm("head.bn1", features, head);
    b.layers.push(Layer::Dropout);
    let data = uniform(&mut rng, features * cfg.head_hidden, xavier_bound(features, cfg.head_hidden));
    let weight = b.tensor("head.fc1.weight".into(), vec![features, cfg.head_hidden], head, TensorRole::Weight, data);
    let bias = b.tensor("head.fc1.bias".into(), vec![cfg.head_hidden], head, TensorRole::Bias, vec![0.0; cfg.head_hidden]);
    b.layers.push(Layer::Dense { weight, bias, fout: cfg.head_hidden });
    b.layers.push(Layer::Relu);

    b.batchnorm("head.bn2", cfg.head_hidden, head);
    b.layers.push(Layer::Dropout);
    let data = uniform(&mut rng, cfg.head_hidden * cfg.head_out, xavier_bound(cfg.head_hidden, cfg.head_out));
    let weight = b.tensor("head.fc2.weight".into(), vec![cfg.head_hidden, cfg.head_out], head, TensorRole::Weight, data);
    let bias = b.tensor("head.fc2.bias".into(), vec![cfg.head_out], head, TensorRole::Bias, vec![0.0; cfg.head_out]);
    b.layers.push(Layer::Dense { weight, bias, fout: cfg.head_out });

    Ok(NetworkParams {
        config: cfg.clone(),
        tensors: b.tensors,
        layers: b.layers,
    })
}

impl NetworkParams {
    /// Rebuilds the layer graph for `config` and fills it with `tensors`,
    /// which must match names and shapes exactly.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<NamedTensor>) -> Result<Self> {
        let mut params = build_model(&config, 0)?;
        if params.tensors.len() != tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, got {}",
                params.tensors.len(),
                tensors.len()
            )));
        }
        for (slot, t) in params.tensors.iter_mut().zip(tensors) {
            if slot.name != t.name || slot.shape != t.shape || t.data.len() != slot.data.len() {
                return Err(Error::Shape(format!(
                    "tensor {}{:?} does not match expected {}{:?}",
                    t.name, t.shape, slot.name, slot.shape
                )));
            }
            if t.role == TensorRole::RunningVar && t.data.iter().any(|v| *v < 0.0) {
                return Err(Error::Shape(format!("{} has negative running variance", t.name)));
            }
            slot.data = t.data;
        }
        Ok(params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[NamedTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [NamedTensor] {
        &mut self.tensors
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn learnable_count(&self) -> usize {
        self.tensors.iter().filter(|t| t.role.learnable()).map(|t| t.data.len()).sum()
    }

    /// Dimension of the pooled feature vector entering the head.
    pub fn feature_dim(&self) -> usize {
        self.tensor("head.bn1.gamma").map_or(0, |t| t.shape[0])
    }

    /// Folds batch statistics into the running estimates:
    /// `running = momentum·running + (1 − momentum)·batch`.
    pub fn update_running_stats(&mut self, stats: &BatchStatistics) {
        for s in &stats.layers {
            for (r, b) in self.tensors[s.mean].data.iter_mut().zip(&s.batch_mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
            for (r, b) in self.tensors[s.var].data.iter_mut().zip(&s.batch_var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * b;
            }
        }
    }

    /// Overwrites the running estimates with the given batch statistics.
    pub fn set_running_stats(&mut self, stats: &BatchStatistics) {
        for s in &stats.layers {
            self.tensors[s.mean].data.clone_from(&s.batch_mean);
            self.tensors[s.var].data.clone_from(&s.batch_var);
        }
    }
}

enum LayerCache {
    None,
    Conv { input: Activations },
    BatchNorm(layers::BatchNormCache),
    Relu { output: Activations },
    MaxPool { shape: (usize, usize, usize, usize), argmax: Vec<usize> },
    GlobalAvgPool { shape: (usize, usize, usize, usize) },
    Dropout { mask: Vec<f64> },
    Dense { input: Activations },
}

/// Intermediates recorded by a training-mode forward pass.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    batch: usize,
}

pub struct ForwardOutput {
    pub probs: Vec<PredictionVector>,
    pub logits: Vec<[f64; NUM_CLASSES]>,
    cache: Option<ForwardCache>,
}

impl ForwardOutput {
    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnBatchStats {
    mean: usize,
    var: usize,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Per-layer batch statistics from a training forward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchStatistics {
    pub layers: Vec<BnBatchStats>,
}

/// Gradients for every learnable tensor, in parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    entries: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            entries: params
                .tensors
                .iter()
                .map(|t| t.role.learnable().then(|| vec![0.0; t.data.len()]))
                .collect(),
        }
    }

    /// Gradient for tensor `index`, `None` for running statistics.
    pub fn get(&self, index: usize) -> Option<&[f64]> {
        self.entries.get(index).and_then(|e| e.as_deref())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.entries.iter().enumerate().filter_map(|(i, e)| e.as_deref().map(|g| (i, g)))
    }

    fn accumulate(&mut self, index: usize, g: &[f64]) {
        let slot = self.entries[index].as_mut().expect("gradient for a learnable tensor");
        for (s, v) in slot.iter_mut().zip(g) {
            *s += v;
        }
    }

    pub fn fill(&mut self, v: f64) {
        for e in self.entries.iter_mut().flatten() {
            e.fill(v);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for e in self.entries.iter_mut().flatten() {
            e.iter_mut().for_each(|v| *v *= k);
        }
    }
}

pub struct BackwardOutput {
    pub grads: Gradients,
    pub batch_stats: BatchStatistics,
}

/// Non-overlapping `factor`×`factor` average pooling, HWC images → NCHW.
fn stem(batch: &[&ImageTensor], factor: usize) -> Activations {
    let (h, w) = (batch[0].height() / factor, batch[0].width() / factor);
    let mut out = Activations::zeros(batch.len(), 3, h, w);
    let norm = 1.0 / (factor * factor) as f64;
    let hw = h * w;
    for (n, img) in batch.iter().enumerate() {
        let src = img.data();
        let iw = img.width();
        let dst = &mut out.data[n * 3 * hw..(n + 1) * 3 * hw];
        for y in 0..h * factor {
            let oy = y / factor;
            let row = &src[y * iw * 3..(y * iw + w * factor) * 3];
            for (x, px) in row.chunks_exact(3).enumerate() {
                let o = oy * w + x / factor;
                dst[o] += px[0];
                dst[hw + o] += px[1];
                dst[2 * hw + o] += px[2];
            }
        }
        dst.iter_mut().for_each(|v| *v *= norm);
    }
    out
}

/// Runs the network on a batch.
///
/// In training mode batch normalisation uses batch statistics, dropout masks
/// are drawn from `rng`, and the returned output carries the cache needed by
/// [`backward`]. In inference mode `rng` is not touched.
pub fn forward(params: &NetworkParams, batch: &[&ImageTensor], training: bool, rng: &mut seed::Rng) -> Result<ForwardOutput> {
    let size = params.config.input_size;
    if batch.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    if let Some(img) = batch.iter().find(|i| i.height() != size || i.width() != size) {
        return Err(Error::Shape(format!(
            "input {}x{} does not match model input size {size}",
            img.height(),
            img.width()
        )));
    }
    let t = &params.tensors;
    let keep = 1.0 - params.config.drop_factor;
    let mut caches = Vec::with_capacity(params.layers.len());
    let mut x = Activations::zeros(0, 0, 0, 0);
    for layer in &params.layers {
        let cache = match *layer {
            Layer::Stem { factor } => {
                x = stem(batch, factor);
                LayerCache::None
            }
            Layer::Conv { weight, cout } => {
                let y = layers::conv3x3_forward(&x, &t[weight].data, cout);
                let input = std::mem::replace(&mut x, y);
                if training {
                    LayerCache::Conv { input }
                } else {
                    LayerCache::None
                }
            }
            Layer::BatchNorm { gamma, beta, mean, var } => {
                if training {
                    let (y, c) = layers::batchnorm_train(&x, &t[gamma].data, &t[beta].data, BN_EPS);
                    x = y;
                    LayerCache::BatchNorm(c)
                } else {
                    x = layers::batchnorm_eval(&x, &t[gamma].data, &t[beta].data, &t[mean].data, &t[var].data, BN_EPS);
                    LayerCache::None
                }
            }
            Layer::Relu => {
                layers::relu_forward(&mut x);
                if training {
                    LayerCache::Relu { output: x.clone() }
                } else {
                    LayerCache::None
                }
            }
            Layer::MaxPool => {
                let shape = (x.n, x.c, x.h, x.w);
                let (y, argmax) = layers::maxpool2_forward(&x);
                x = y;
                LayerCache::MaxPool { shape, argmax }
            }
            Layer::GlobalAvgPool => {
                let shape = (x.n, x.c, x.h, x.w);
                x = layers::global_avg_pool_forward(&x);
                LayerCache::GlobalAvgPool { shape }
            }
            Layer::Dropout => {
                if training && keep < 1.0 {
                    let mask: Vec<f64> = (0..x.data.len())
                        .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    x.data.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                    LayerCache::Dropout { mask }
                } else {
                    LayerCache::None
                }
            }
            Layer::Dense { weight, bias, fout } => {
                let y = layers::dense_forward(&x, &t[weight].data, &t[bias].data, fout);
                let input = std::mem::replace(&mut x, y);
                if training {
                    LayerCache::Dense { input }
                } else {
                    LayerCache::None
                }
            }
        };
        caches.push(cache);
    }

    let mut probs = Vec::with_capacity(batch.len());
    let mut logits = Vec::with_capacity(batch.len());
    for z in x.data.chunks_exact(NUM_CLASSES) {
        let p = layers::softmax(z);
        let mut arr = [0.0; NUM_CLASSES];
        arr.copy_from_slice(&p);
        // Guard rounding so the simplex invariant holds exactly enough.
        let s: f64 = arr.iter().sum();
        arr.iter_mut().for_each(|v| *v /= s);
        probs.push(PredictionVector(arr));
        let mut zl = [0.0; NUM_CLASSES];
        zl.copy_from_slice(z);
        logits.push(zl);
    }
    Ok(ForwardOutput {
        probs,
        logits,
        cache: training.then_some(ForwardCache {
            layers: caches,
            batch: batch.len(),
        }),
    })
}

/// Inference on a batch; never touches a random stream.
pub fn predict(params: &NetworkParams, batch: &[&ImageTensor]) -> Result<Vec<PredictionVector>> {
    let mut unused = seed::rng(0);
    forward(params, batch, false, &mut unused).map(|o| o.probs)
}

/// Back-propagates `dlogits` (gradient of the loss with respect to the
/// softmax inputs, one row per batch element).
pub fn backward(params: &NetworkParams, forward_out: &ForwardOutput, dlogits: &[[f64; NUM_CLASSES]]) -> Result<BackwardOutput> {
    let cache = forward_out.cache.as_ref().ok_or(Error::MissingCache)?;
    if dlogits.len() != cache.batch {
        return Err(Error::Shape(format!(
            "{} logit gradients for a batch of {}",
            dlogits.len(),
            cache.batch
        )));
    }
    let t = &params.tensors;
    let mut grads = Gradients::zeros_like(params);
    let mut stats = BatchStatistics::default();
    let mut d = Activations {
        n: cache.batch,
        c: NUM_CLASSES,
        h: 1,
        w: 1,
        data: dlogits.iter().flatten().copied().collect(),
    };
    let first_conv = params.layers.iter().position(|l| matches!(l, Layer::Conv { .. }));
    for (i, (layer, lc)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        match (*layer, lc) {
            (Layer::Stem { .. }, _) => {}
            (Layer::Conv { weight, .. }, LayerCache::Conv { input }) => {
                let need_dx = Some(i) != first_conv;
                let (dw, dx) = layers::conv3x3_backward(input, &t[weight].data, &d, need_dx);
                grads.accumulate(weight, &dw);
                if let Some(dx) = dx {
                    d = dx;
                }
            }
            (Layer::BatchNorm { gamma, beta, mean, var }, LayerCache::BatchNorm(c)) => {
                let (dg, db, dx) = layers::batchnorm_backward(&d, &t[gamma].data, c);
                grads.accumulate(gamma, &dg);
                grads.accumulate(beta, &db);
                stats.layers.push(BnBatchStats {
                    mean,
                    var,
                    batch_mean: c.mean.clone(),
                    batch_var: c.var.clone(),
                });
                d = dx;
            }
            (Layer::Relu, LayerCache::Relu { output }) => layers::relu_backward(output, &mut d),
            (Layer::MaxPool, LayerCache::MaxPool { shape, argmax }) => {
                d = layers::maxpool2_backward(*shape, argmax, &d);
            }
            (Layer::GlobalAvgPool, LayerCache::GlobalAvgPool { shape }) => {
                d = layers::global_avg_pool_backward(*shape, &d);
            }
            (Layer::Dropout, LayerCache::Dropout { mask }) => {
                d.data.iter_mut().zip(mask).for_each(|(v, m)| *v *= m);
            }
            (Layer::Dropout, LayerCache::None) => {}
            (Layer::Dense { weight, bias, .. }, LayerCache::Dense { input }) => {
                let (dw, db, dx) = layers::dense_backward(input, &t[weight].data, &d);
                grads.accumulate(weight, &dw);
                grads.accumulate(bias, &db);
                d = dx;
            }
            _ => return Err(Error::MissingCache),
        }
    }
    stats.layers.reverse();
    Ok(BackwardOutput { grads, batch_stats: stats })
}
