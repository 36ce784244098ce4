//! Confidence-filtered test-time augmentation.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::ensemble;
use crate::error::{Error, Result};
use crate::imageops::{augment, AugmentationConfig, ImageSource, ImageTensor};
use crate::network::{self, NetworkParams, PredictionVector};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtaConfig {
    pub repeats: usize,
    pub confidence_threshold: f64,
    pub augmentation: AugmentationConfig,
    pub seed: u64,
}

impl Default for TtaConfig {
    fn default() -> Self {
        TtaConfig {
            repeats: 25,
            confidence_threshold: 0.5,
            augmentation: AugmentationConfig::default(),
            seed: 0,
        }
    }
}

impl TtaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("tta repeats must be at least 1".into()));
        }
        if !(self.confidence_threshold > 0.0 && self.confidence_threshold < 1.0) {
            return Err(Error::Config(format!(
                "confidence_threshold {} not in (0, 1)",
                self.confidence_threshold
            )));
        }
        self.augmentation.validate()
    }
}

/// Indices of the vectors whose maximum reaches `threshold`.
pub fn survivors(vectors: &[PredictionVector], threshold: f64) -> Vec<usize> {
    vectors
        .iter()
        .enumerate()
        .filter(|(_, v)| v.max() >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Mean of the vectors whose max is at least `threshold`, renormalized.
/// Falls back to the mean of all vectors when none survive.
pub fn filter_and_average(vectors: &[PredictionVector], threshold: f64) -> Result<PredictionVector> {
    if vectors.is_empty() {
        return Err(Error::EmptyFusion);
    }
    let keep = survivors(vectors, threshold);
    if keep.is_empty() {
        log::debug!("all {} TTA vectors below {threshold}; using the plain mean", vectors.len());
        return ensemble::fuse(vectors);
    }
    ensemble::fuse(keep.iter().map(|&i| &vectors[i]))
}

/// The `repeats` augmented views of a preprocessed image, cropped to the
/// model's input size when it is smaller than the image.
pub fn tta_views(params: &NetworkParams, image: &ImageTensor, cfg: &TtaConfig) -> Result<Vec<ImageTensor>> {
    let size = params.config().input_size;
    let aug = cfg.augmentation.clone().with_crop(Some(size));
    let mut rng = seed::rng(cfg.seed);
    (0..cfg.repeats).map(|_| augment(image, &aug, &mut rng)).collect()
}

/// Raw per-repeat prediction vectors, before filtering.
pub fn tta_vectors(params: &NetworkParams, image: &ImageTensor, cfg: &TtaConfig) -> Result<Vec<PredictionVector>> {
    let views = tta_views(params, image, cfg)?;
    let refs: Vec<&ImageTensor> = views.iter().collect();
    network::predict(params, &refs)
}

pub fn tta_predict(params: &NetworkParams, image: &ImageTensor, cfg: &TtaConfig) -> Result<PredictionVector> {
    let vectors = tta_vectors(params, image, cfg)?;
    filter_and_average(&vectors, cfg.confidence_threshold)
}

/// Successful predictions and per-sample failures.
#[derive(Debug, Default)]
pub struct SplitPredictions {
    pub predictions: BTreeMap<String, PredictionVector>,
    pub errors: BTreeMap<String, Error>,
}

/// TTA over a set of samples. Each sample's stream is seeded from
/// `cfg.seed` and its id, so results do not depend on order or threading.
pub fn predict_split<S: ImageSource + ?Sized>(
    params: &NetworkParams,
    samples: &[Sample],
    source: &S,
    cfg: &TtaConfig,
) -> SplitPredictions {
    let results: Vec<(String, Result<PredictionVector>)> = samples
        .par_iter()
        .map(|s| {
            let sample_cfg = TtaConfig {
                seed: seed::mix_str(cfg.seed, &s.id),
                ..cfg.clone()
            };
            let r = source.load(s).and_then(|img| tta_predict(params, &img, &sample_cfg));
            (s.id.clone(), r)
        })
        .collect();
    let mut out = SplitPredictions::default();
    for (id, r) in results {
        match r {
            Ok(v) => {
                out.predictions.insert(id, v);
            }
            Err(e) => {
                log::warn!("sample {id}: {e}");
                out.errors.insert(id, e);
            }
        }
    }
    out
}
