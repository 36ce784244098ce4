//! Per-fold training and the (architecture, input size, fold) grid.
//!
//! Each grid cell writes three files named `{arch}_{size}_fold{k}`:
//! a checkpoint, a training log CSV `epoch,lr,train_loss` and its out-of-fold
//! predictions in the prediction-file format. The checkpoint is written last,
//! so a cell counts as finished once all three exist.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{compute_class_weights, csv_io, ClassLabel, FoldAssignment, Manifest, Sample};
use crate::ensemble::{self, LeafKey, PredictionSet};
use crate::error::{Error, Result};
use crate::imageops::{augment, AugmentationConfig, ImageSource, ImageTensor};
use crate::network::{self, checkpoint, build_model, ModelConfig, NetworkParams, PredictionVector, SUPPORTED_INPUT_SIZES};
use crate::optimize::{batch_focal_loss, Adam, LossConfig, LrMultipliers, StepHalving, HALVING_PERIOD};
use crate::seed;
use crate::tta::{self, TtaConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub halving_period: usize,
    pub seed: u64,
    /// Head settings; `backbone_id` and `input_size` are set per cell.
    pub model: ModelConfig,
    pub loss: LossConfig,
    /// Replace `loss.class_weights` with `N_total / N_c` from the manifest.
    pub auto_class_weights: bool,
    pub augmentation: AugmentationConfig,
    pub input_sizes: Vec<usize>,
    pub architectures: Vec<String>,
    pub tta: TtaConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 32,
            base_lr: 0.001,
            halving_period: HALVING_PERIOD,
            seed: 0,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            auto_class_weights: true,
            augmentation: AugmentationConfig::default(),
            input_sizes: SUPPORTED_INPUT_SIZES.to_vec(),
            architectures: vec!["compact-a".into()],
            tta: TtaConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.halving_period == 0 {
            return Err(Error::Config("epochs, batch_size and halving_period must be positive".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        if self.input_sizes.is_empty() || self.architectures.is_empty() {
            return Err(Error::Config("input_sizes and architectures must be non-empty".into()));
        }
        for (i, s) in self.input_sizes.iter().enumerate() {
            if self.input_sizes[..i].contains(s) {
                return Err(Error::Config(format!("input size {s} listed twice")));
            }
        }
        for (i, a) in self.architectures.iter().enumerate() {
            if self.architectures[..i].contains(a) {
                return Err(Error::Config(format!("architecture {a:?} listed twice")));
            }
            for &s in &self.input_sizes {
                self.cell_model(a, s).validate()?;
            }
        }
        self.loss.validate()?;
        self.augmentation.validate()?;
        self.tta.validate()
    }

    pub fn cell_model(&self, arch: &str, size: usize) -> ModelConfig {
        ModelConfig {
            backbone_id: arch.to_string(),
            input_size: size,
            ..self.model.clone()
        }
    }

    pub fn schedule(&self) -> StepHalving {
        StepHalving {
            base_lr: self.base_lr,
            period: self.halving_period,
        }
    }

    fn resolved_loss(&self, manifest: &Manifest) -> Result<LossConfig> {
        let mut loss = self.loss.clone();
        if self.auto_class_weights {
            loss.class_weights = compute_class_weights(&manifest.counts())?;
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub key: LeafKey,
    pub checkpoint: PathBuf,
    pub epochs: Vec<EpochLog>,
    pub oof: BTreeMap<String, PredictionVector>,
    /// Ids that appeared in training batches; `None` for resumed cells.
    pub trained_ids: Option<BTreeSet<String>>,
    pub resumed: bool,
}

/// Output locations for grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPaths {
    pub checkpoints: PathBuf,
    pub logs: PathBuf,
    pub predictions: PathBuf,
}

impl GridPaths {
    pub fn under(out: impl AsRef<Path>) -> Self {
        let out = out.as_ref();
        GridPaths {
            checkpoints: out.join("checkpoints"),
            logs: out.join("logs"),
            predictions: out.join("predictions"),
        }
    }

    pub fn with_checkpoint_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.checkpoints = dir.into();
        self
    }

    fn stem(key: &LeafKey) -> String {
        format!("{}_{}_fold{}", key.arch, key.size, key.fold)
    }

    pub fn checkpoint(&self, key: &LeafKey) -> PathBuf {
        self.checkpoints.join(format!("{}.pfck", Self::stem(key)))
    }

    pub fn log(&self, key: &LeafKey) -> PathBuf {
        self.logs.join(format!("{}.csv", Self::stem(key)))
    }

    pub fn predictions(&self, key: &LeafKey) -> PathBuf {
        self.predictions.join(format!("{}.csv", Self::stem(key)))
    }

    fn is_complete(&self, key: &LeafKey) -> bool {
        self.checkpoint(key).is_file() && self.log(key).is_file() && self.predictions(key).is_file()
    }
}

/// Seed for everything inside one grid cell.
pub fn cell_seed(base: u64, arch: &str, size: usize, fold: usize) -> u64 {
    seed::mix(seed::mix(seed::mix_str(base, arch), size as u64), fold as u64)
}

/// Batch index ranges for `n` items. A trailing batch of one is merged into
/// its predecessor, since batch statistics of a single image are degenerate.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let bs = batch_size.max(1);
    let mut out: Vec<_> = (0..n).step_by(bs).map(|s| s..(s + bs).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").end = last.end;
    }
    out
}

/// A trained model and what happened while training it.
pub struct Fitted {
    pub params: NetworkParams,
    pub epochs: Vec<EpochLog>,
    pub trained_ids: BTreeSet<String>,
}

/// Trains a freshly initialised model on `train`.
pub fn fit<S: ImageSource + ?Sized>(
    cfg: &TrainConfig,
    model: &ModelConfig,
    loss: &LossConfig,
    train: &[Sample],
    source: &S,
    run_seed: u64,
) -> Result<Fitted> {
    model.validate()?;
    let mut params = build_model(model, seed::mix(run_seed, 1))?;
    let schedule = cfg.schedule();
    let mut adam = Adam::new(&params, schedule);
    let mult = LrMultipliers::for_model(&params);
    let aug = cfg.augmentation.clone().with_crop(Some(model.input_size));

    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut trained_ids = BTreeSet::new();

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seed::rng(seed::mix(cfg.seed, epoch as u64)));
        let lr = schedule.lr_at(epoch);
        let mut loss_sum = 0.0;
        for (b, range) in batch_ranges(order.len(), cfg.batch_size).into_iter().enumerate() {
            let idx = &order[range];
            let mut rng = seed::rng(seed::mix(seed::mix(run_seed, 2 + epoch as u64), b as u64));
            let views: Vec<ImageTensor> = idx
                .iter()
                .map(|&i| augment(&source.load(&train[i])?, &aug, &mut rng))
                .collect::<Result<_>>()?;
            let targets: Vec<ClassLabel> = idx.iter().map(|&i| train[i].label).collect();
            trained_ids.extend(idx.iter().map(|&i| train[i].id.clone()));

            let refs: Vec<&ImageTensor> = views.iter().collect();
            let out = network::forward(&params, &refs, true, &mut rng)?;
            let (batch_loss, dlogits) = batch_focal_loss(&out.probs, &targets, loss)?;
            let back = network::backward(&params, &out, &dlogits)?;
            adam.step(&mut params, &back.grads, epoch, mult)?;
            params.update_running_stats(&back.batch_stats);
            loss_sum += batch_loss * idx.len() as f64;
        }
        let train_loss = loss_sum / train.len() as f64;
        log::debug!("  epoch {epoch:>2} lr {lr:.3e} loss {train_loss:.5}");
        epochs.push(EpochLog { epoch, lr, train_loss });
    }
    Ok(Fitted {
        params,
        epochs,
        trained_ids,
    })
}

/// Trains on every fold except `fold_index`, predicts the held-out fold with
/// TTA and writes the cell's log, predictions and checkpoint.
#[allow(clippy::too_many_arguments)]
pub fn train_fold<S: ImageSource + ?Sized>(
    cfg: &TrainConfig,
    manifest: &Manifest,
    folds: &FoldAssignment,
    fold_index: usize,
    arch: &str,
    size: usize,
    source: &S,
    paths: &GridPaths,
) -> Result<RunRecord> {
    if fold_index >= folds.k() {
        return Err(Error::Config(format!("fold {fold_index} out of range for k={}", folds.k())));
    }
    let (train, test) = folds.split(manifest, fold_index)?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSplit(fold_index));
    }
    let key = LeafKey::new(arch, size as u32, fold_index);
    let run_seed = cell_seed(cfg.seed, arch, size, fold_index);
    let loss = cfg.resolved_loss(manifest)?;
    log::info!("training {arch}/{size} fold {fold_index}: {} train, {} held out", train.len(), test.len());

    let fitted = fit(cfg, &cfg.cell_model(arch, size), &loss, train.samples(), source, run_seed)?;
    if let Some(leak) = test.samples().iter().find(|s| fitted.trained_ids.contains(&s.id)) {
        return Err(Error::Config(format!("held-out sample {:?} was used in training", leak.id)));
    }

    let tta_cfg = TtaConfig {
        seed: seed::mix(run_seed, 0x77a),
        ..cfg.tta.clone()
    };
    let split = tta::predict_split(&fitted.params, test.samples(), source, &tta_cfg);
    if let Some((id, e)) = split.errors.into_iter().next() {
        return Err(Error::Image(format!("held-out sample {id:?}: {e}")));
    }

    write_log(&fitted.epochs, &paths.log(&key))?;
    let mut set = PredictionSet::new();
    for (id, v) in &split.predictions {
        set.insert(id.clone(), key.clone(), *v);
    }
    write_atomic(&paths.predictions(&key), |p| ensemble::write_predictions(&set, p))?;
    let ckpt = paths.checkpoint(&key);
    checkpoint::save(&fitted.params, &ckpt)?;

    Ok(RunRecord {
        key,
        checkpoint: ckpt,
        epochs: fitted.epochs,
        oof: split.predictions,
        trained_ids: Some(fitted.trained_ids),
        resumed: false,
    })
}

fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_log(epochs: &[EpochLog], path: &Path) -> Result<()> {
    write_atomic(path, |p| {
        let mut w = csv::Writer::from_path(p).map_err(|e| csv_io(p, e))?;
        w.write_record(["epoch", "lr", "train_loss"]).map_err(|e| csv_io(p, e))?;
        for e in epochs {
            w.write_record([e.epoch.to_string(), format!("{:e}", e.lr), format!("{:.10}", e.train_loss)])
                .map_err(|e| csv_io(p, e))?;
        }
        w.flush().map_err(|e| Error::io(p, e))
    })
}

pub fn read_log(path: &Path) -> Result<Vec<EpochLog>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    reader
        .deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::MalformedRow {
                path: path.to_path_buf(),
                row: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

fn load_record(paths: &GridPaths, key: &LeafKey) -> Result<RunRecord> {
    let preds = ensemble::import_predictions(paths.predictions(key))?;
    let oof = preds
        .iter()
        .filter(|(_, k, _)| *k == key)
        .map(|(s, _, v)| (s.to_string(), *v))
        .collect();
    Ok(RunRecord {
        key: key.clone(),
        checkpoint: paths.checkpoint(key),
        epochs: read_log(&paths.log(key))?,
        oof,
        trained_ids: None,
        resumed: true,
    })
}

/// Every (architecture, size, fold) cell in config order.
pub fn grid_cells(cfg: &TrainConfig, k: usize) -> Vec<(String, usize, usize)> {
    let mut cells = Vec::new();
    for a in &cfg.architectures {
        for &s in &cfg.input_sizes {
            for f in 0..k {
                cells.push((a.clone(), s, f));
            }
        }
    }
    cells
}

/// Trains every grid cell, skipping cells whose files already exist.
/// `jobs > 1` trains that many cells concurrently; results do not depend on it.
pub fn run_grid<S: ImageSource + ?Sized>(
    cfg: &TrainConfig,
    manifest: &Manifest,
    folds: &FoldAssignment,
    source: &S,
    paths: &GridPaths,
    jobs: usize,
) -> Result<Vec<RunRecord>> {
    cfg.validate()?;
    let cells = grid_cells(cfg, folds.k());
    let run = |(arch, size, fold): &(String, usize, usize)| {
        let key = LeafKey::new(arch.clone(), *size as u32, *fold);
        if paths.is_complete(&key) {
            log::info!("skipping {arch}/{size} fold {fold}: already trained");
            load_record(paths, &key)
        } else {
            train_fold(cfg, manifest, folds, *fold, arch, *size, source, paths)
        }
    };
    if jobs <= 1 {
        cells.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| cells.par_iter().map(run).collect())
    }
}

/// All out-of-fold predictions as one set of leaves.
pub fn oof_predictions(records: &[RunRecord]) -> PredictionSet {
    let mut set = PredictionSet::new();
    for r in records {
        for (id, v) in &r.oof {
            set.insert(id.clone(), r.key.clone(), *v);
        }
    }
    set
}
