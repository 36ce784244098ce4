//! Weighted focal loss, the step-halving learning-rate schedule and Adam.

use serde::{Deserialize, Serialize};

use crate::dataset::{ClassLabel, ClassMap, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::network::{layers, Gradients, NetworkParams, ParamGroup, PredictionVector};

/// Per-class weights published for the challenge training set.
pub const CHALLENGE_CLASS_WEIGHTS: [f64; NUM_CLASSES] = [7.20, 14.59, 1.37, 15.57];

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub class_weights: ClassMap<f64>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_gamma() -> f64 {
    2.0
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            class_weights: ClassMap([1.0; NUM_CLASSES]),
            gamma: default_gamma(),
        }
    }
}

impl LossConfig {
    pub fn new(class_weights: ClassMap<f64>, gamma: f64) -> Result<Self> {
        let cfg = LossConfig { class_weights, gamma };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_weights.0.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(Error::Config(format!("class weights must be finite and positive: {:?}", self.class_weights.0)));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(Error::Config(format!("gamma must be non-negative, got {}", self.gamma)));
        }
        Ok(())
    }
}

fn target_prob(probs: &PredictionVector, target: ClassLabel) -> f64 {
    probs.probs()[target.index()].clamp(PROB_FLOOR, 1.0)
}

/// `w_t · (1 − p_t)^γ · (−ln p_t)`.
pub fn focal_loss(probs: &PredictionVector, target: ClassLabel, cfg: &LossConfig) -> f64 {
    focal_loss_at(target_prob(probs, target), cfg.class_weights[target], cfg.gamma)
}

pub fn focal_loss_at(p: f64, weight: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0);
    weight * (1.0 - p).powf(gamma) * (0.0 - p.ln())
}

/// d/dp of [`focal_loss_at`]:
/// `w · [γ (1 − p)^(γ−1) ln p − (1 − p)^γ / p]`.
pub fn focal_loss_derivative(p: f64, weight: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_FLOOR, 1.0);
    let q = 1.0 - p;
    let focus = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        gamma * q.powf(gamma - 1.0) * p.ln()
    };
    weight * (focus - q.powf(gamma) / p)
}

/// Gradient with respect to the probability vector; zero off-target.
pub fn focal_loss_grad(probs: &PredictionVector, target: ClassLabel, cfg: &LossConfig) -> [f64; NUM_CLASSES] {
    let mut g = [0.0; NUM_CLASSES];
    g[target.index()] = focal_loss_derivative(target_prob(probs, target), cfg.class_weights[target], cfg.gamma);
    g
}

/// Mean focal loss over a batch and its gradient with respect to the
/// softmax inputs of each element.
pub fn batch_focal_loss(
    probs: &[PredictionVector],
    targets: &[ClassLabel],
    cfg: &LossConfig,
) -> Result<(f64, Vec<[f64; NUM_CLASSES]>)> {
    if probs.len() != targets.len() || probs.is_empty() {
        return Err(Error::Shape(format!("{} predictions for {} targets", probs.len(), targets.len())));
    }
    let n = probs.len() as f64;
    let mut total = 0.0;
    let mut dlogits = Vec::with_capacity(probs.len());
    for (p, &t) in probs.iter().zip(targets) {
        total += focal_loss(p, t, cfg);
        let dp = focal_loss_grad(p, t, cfg).map(|g| g / n);
        let dz = layers::softmax_backward(p.probs(), &dp);
        let mut row = [0.0; NUM_CLASSES];
        row.copy_from_slice(&dz);
        dlogits.push(row);
    }
    Ok((total / n, dlogits))
}

/// `base_lr · 0.5^⌊epoch / period⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepHalving {
    pub base_lr: f64,
    pub period: usize,
}

impl StepHalving {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.base_lr * 0.5f64.powi((epoch / self.period.max(1)) as i32)
    }
}

pub const HALVING_PERIOD: usize = 7;

pub fn lr_at_epoch(base_lr: f64, epoch: usize) -> f64 {
    StepHalving {
        base_lr,
        period: HALVING_PERIOD,
    }
    .lr_at(epoch)
}

/// Learning-rate multipliers per parameter group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrMultipliers {
    pub backbone: f64,
    pub head: f64,
}

impl LrMultipliers {
    pub fn for_model(params: &NetworkParams) -> Self {
        LrMultipliers {
            backbone: 1.0,
            head: params.config().head_lr_multiplier,
        }
    }

    fn get(&self, g: ParamGroup) -> f64 {
        match g {
            ParamGroup::Backbone => self.backbone,
            ParamGroup::Head => self.head,
        }
    }
}

/// Bias-corrected Adam with per-tensor moment buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: StepHalving,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &NetworkParams, schedule: StepHalving) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .tensors()
            .iter()
            .map(|t| if t.role.learnable() { vec![0.0; t.data.len()] } else { Vec::new() })
            .collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            schedule,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update at the learning rate scheduled for `epoch`.
    pub fn step(&mut self, params: &mut NetworkParams, grads: &Gradients, epoch: usize, mult: LrMultipliers) -> Result<()> {
        if grads.len() != params.tensors().len() || self.m.len() != grads.len() {
            return Err(Error::Shape(format!(
                "{} gradients, {} tensors, {} moment buffers",
                grads.len(),
                params.tensors().len(),
                self.m.len()
            )));
        }
        for (i, g) in grads.iter() {
            if g.len() != params.tensors()[i].data.len() || self.m[i].len() != g.len() {
                return Err(Error::Shape(format!("gradient for {} has the wrong length", params.tensors()[i].name)));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let lr = self.schedule.lr_at(epoch);
        for (i, g) in grads.iter() {
            let tensor = &mut params.tensors_mut()[i];
            let rate = lr * mult.get(tensor.group);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((w, &gi), mi), vi) in tensor.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
