//! Four-class pollen grain image classification with an ensemble of
//! fine-tuned convolutional networks.
//!
//! The crate covers the full pipeline:
//!
//! - [`dataset`]: labelled manifests, class weights and stratified K-fold splits
//! - [`imageops`]: decoding, mean subtraction and resize, seeded augmentation
//! - [`network`]: compact registered backbones plus the GAP → BN → dropout → FC head
//! - [`optimize`]: weighted focal loss, Adam and the step-halving schedule
//! - [`trainer`]: per-fold training and the resumable (architecture, size, fold) grid
//! - [`tta`]: confidence-filtered test-time augmentation
//! - [`ensemble`]: hierarchical fusion of prediction vectors
//! - [`metrics`]: accuracy, balanced accuracy, weighted F1 and table reports
//! - [`report`]: per-size and fused cross-validation tables
//! - [`cli`]: the `pollenfuse` command-line surface
//!
//! Runnable walkthroughs of each capability live in the crate's `examples/`.

pub mod cli;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod imageops;
pub mod metrics;
pub mod network;
pub mod optimize;
pub mod report;
pub mod seed;
pub mod synthetic;
pub mod trainer;
pub mod tta;

pub use dataset::{ClassLabel, ClassMap, FoldAssignment, Manifest, Sample, NUM_CLASSES};
pub use ensemble::{FusionTree, PredictionSet};
pub use error::{Error, Result};
pub use imageops::{AugmentationConfig, ImageTensor};
pub use metrics::{ConfusionMatrix, MetricsReport};
pub use network::{ModelConfig, NetworkParams, PredictionVector};
pub use optimize::{Adam, LossConfig};
pub use trainer::{RunRecord, TrainConfig};
pub use tta::TtaConfig;
