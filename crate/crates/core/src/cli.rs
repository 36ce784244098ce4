//! The `pollenfuse` command line.
//!
//! Every subcommand maps onto library calls; file formats are those of the
//! owning modules. Failures print a single `error: <message>` line on stderr
//! and exit with status 1 (2 for usage errors).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::dataset::{load_manifest, read_folds, stratified_kfold, write_folds, ClassLabel, Manifest};
use crate::ensemble::{self, FusionLevel, FusionTree, LeafKey, PredictionSet};
use crate::error::{Error, Result};
use crate::imageops::{AugmentationConfig, FileImageSource};
use crate::metrics::{MetricsReport, ResultsTable, Summary};
use crate::network::{checkpoint, ModelConfig};
use crate::optimize::LossConfig;
use crate::report::cross_validation_tables;
use crate::synthetic::{self, SyntheticSpec};
use crate::trainer::{oof_predictions, run_grid, GridPaths, TrainConfig};
use crate::tta::{predict_split, TtaConfig};

/// Environment variable overriding the checkpoint directory of `train`.
pub const CACHE_ENV: &str = "POLLENFUSE_CACHE";

#[derive(Debug, Parser)]
#[command(name = "pollenfuse", version, about = "Pollen grain classification with fused CNN ensembles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified K-fold assignment written as `id,fold`.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 5, value_parser = clap::value_parser!(u64).range(2..))]
        k: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every (architecture, size, fold) cell of a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        folds: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// TTA predictions from one checkpoint.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run configuration supplying the TTA settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Fold index recorded in the output leaf key.
        #[arg(long, default_value_t = 0)]
        fold: usize,
    },
    /// Hierarchical fusion of prediction files.
    Fuse {
        #[command(flatten)]
        inputs: PredictionInputs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Metrics of fused or raw predictions against the manifest labels.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        levels: Option<String>,
        #[arg(long)]
        allow_partial: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-size and fused cross-validation tables.
    Report {
        #[command(flatten)]
        inputs: PredictionInputs,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "fold-mean")]
        aggregation: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a separable synthetic dataset with a manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct PredictionInputs {
    /// Prediction files, or directories whose `*.csv` files are read.
    #[arg(long, required = true, num_args = 1..)]
    pub predictions: Vec<PathBuf>,
    /// Fusion order, e.g. `fold,size,arch`.
    #[arg(long)]
    pub levels: Option<String>,
    #[arg(long)]
    pub allow_partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    pub halving_period: usize,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub auto_class_weights: bool,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            halving_period: t.halving_period,
            model: t.model,
            loss: t.loss,
            auto_class_weights: t.auto_class_weights,
            augmentation: t.augmentation,
        }
    }
}

fn default_k() -> usize {
    5
}

/// TOML run description. Relative paths are resolved against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_k")]
    pub k: usize,
    /// Existing fold file; generated (and saved under the output dir) if absent.
    #[serde(default)]
    pub folds: Option<PathBuf>,
    pub architectures: Vec<String>,
    pub input_sizes: Vec<usize>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub tta: TtaConfig,
    #[serde(default)]
    pub fusion: FusionTree,
}

impl RunConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.manifest);
        resolve(&mut cfg.output_dir);
        if let Some(f) = cfg.folds.as_mut() {
            resolve(f);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            base_lr: t.base_lr,
            halving_period: t.halving_period,
            seed: self.seed,
            model: t.model.clone(),
            loss: t.loss.clone(),
            auto_class_weights: t.auto_class_weights,
            augmentation: t.augmentation.clone(),
            input_sizes: self.input_sizes.clone(),
            architectures: self.architectures.clone(),
            tta: self.tta.clone(),
        }
    }

    /// Checks values only; see [`RunConfigFile::check_paths`] for the filesystem.
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k must be at least 2, got {}", self.k)));
        }
        self.fusion.validate()?;
        self.train_config().validate()
    }

    pub fn check_paths(&self) -> Result<()> {
        for p in std::iter::once(&self.manifest).chain(&self.folds) {
            if !p.is_file() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

pub fn parse_levels(s: &str) -> Result<FusionTree> {
    let levels: Vec<FusionLevel> = s
        .split(',')
        .map(|l| match l.trim() {
            "fold" => Ok(FusionLevel::Fold),
            "size" => Ok(FusionLevel::Size),
            "arch" => Ok(FusionLevel::Arch),
            other => Err(Error::Config(format!("unknown fusion level {other:?}"))),
        })
        .collect::<Result<_>>()?;
    let levels: [FusionLevel; 3] = levels
        .try_into()
        .map_err(|_| Error::Config(format!("expected three fusion levels, got {s:?}")))?;
    let tree = FusionTree { levels };
    tree.validate()?;
    Ok(tree)
}

fn tree_of(levels: &Option<String>) -> Result<FusionTree> {
    levels.as_deref().map_or_else(|| Ok(FusionTree::default()), parse_levels)
}

/// Expands directories into their `*.csv` files, sorted.
fn expand_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no prediction files found".into()));
    }
    Ok(out)
}

pub fn load_prediction_files(paths: &[PathBuf]) -> Result<PredictionSet> {
    let mut set = PredictionSet::new();
    for file in expand_inputs(paths)? {
        let part = ensemble::import_predictions(&file)?;
        for (s, k, v) in part.iter() {
            if set.insert(s, k.clone(), *v).is_some() {
                return Err(Error::Config(format!(
                    "{}: duplicate leaf ({}, {}, {}) for sample {s:?}",
                    file.display(),
                    k.arch,
                    k.size,
                    k.fold
                )));
            }
        }
    }
    Ok(set)
}

fn is_raw_prediction_file(path: &Path) -> Result<bool> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.lines().next().unwrap_or("");
    let cols: Vec<&str> = first.split(',').map(str::trim).collect();
    Ok(cols.len() == 8 || cols.contains(&"arch"))
}

fn cmd_split(manifest: &Path, k: usize, seed: u64, out: &Path) -> Result<()> {
    let m = load_manifest(manifest)?;
    let folds = stratified_kfold(&m, k, seed)?;
    write_folds(&folds, &m, out)?;
    for (f, counts) in folds.fold_class_counts(&m).iter().enumerate() {
        log::info!("fold {f}: {:?}", counts.0);
    }
    Ok(())
}

fn cmd_train(config: &Path, manifest: Option<PathBuf>, folds: Option<PathBuf>, out: Option<PathBuf>, seed: Option<u64>, jobs: usize) -> Result<()> {
    let mut cfg = RunConfigFile::load(config)?;
    if let Some(m) = manifest {
        cfg.manifest = m;
    }
    if let Some(f) = folds {
        cfg.folds = Some(f);
    }
    if let Some(o) = out {
        cfg.output_dir = o;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    cfg.check_paths()?;

    let manifest = load_manifest(&cfg.manifest)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    let folds = match &cfg.folds {
        Some(path) => read_folds(path, cfg.seed)?,
        None => {
            let f = stratified_kfold(&manifest, cfg.k, cfg.seed)?;
            write_folds(&f, &manifest, cfg.output_dir.join("folds.csv"))?;
            f
        }
    };
    let mut paths = GridPaths::under(&cfg.output_dir);
    if let Some(dir) = std::env::var_os(CACHE_ENV).filter(|d| !d.is_empty()) {
        paths = paths.with_checkpoint_dir(PathBuf::from(dir));
    }
    let records = run_grid(&cfg.train_config(), &manifest, &folds, &FileImageSource::new(), &paths, jobs)?;
    let resumed = records.iter().filter(|r| r.resumed).count();
    log::info!("{} cells ({} trained, {} resumed)", records.len(), records.len() - resumed, resumed);
    ensemble::write_predictions(&oof_predictions(&records), cfg.output_dir.join("oof_predictions.csv"))
}

fn cmd_predict(ckpt: &Path, manifest: &Path, out: &Path, config: Option<PathBuf>, seed: Option<u64>, fold: usize) -> Result<()> {
    let params = checkpoint::load(ckpt)?;
    let mut tta = match config {
        Some(c) => RunConfigFile::load(c)?.tta,
        None => TtaConfig::default(),
    };
    if let Some(s) = seed {
        tta.seed = s;
    }
    tta.validate()?;
    let m = load_manifest(manifest)?;
    let split = predict_split(&params, m.samples(), &FileImageSource::new(), &tta);
    let cfg = params.config();
    let key = LeafKey::new(cfg.backbone_id.clone(), cfg.input_size as u32, fold);
    let mut set = PredictionSet::new();
    for (id, v) in split.predictions {
        set.insert(id, key.clone(), v);
    }
    ensemble::write_predictions(&set, out)?;
    if let Some((id, e)) = split.errors.iter().next() {
        return Err(Error::Image(format!(
            "{} of {} samples failed; first {id:?}: {e}",
            split.errors.len(),
            m.len()
        )));
    }
    Ok(())
}

fn cmd_fuse(inputs: &PredictionInputs, out: &Path) -> Result<()> {
    let set = load_prediction_files(&inputs.predictions)?;
    let fused = ensemble::fuse_all(&set, &tree_of(&inputs.levels)?, inputs.allow_partial)?;
    log::info!("fused {} leaves into {} samples", set.leaf_count(), fused.len());
    ensemble::write_fused(&fused, out)
}

fn predicted_labels(path: &Path, levels: &Option<String>, allow_partial: bool) -> Result<BTreeMap<String, ClassLabel>> {
    let fused = if is_raw_prediction_file(path)? {
        let set = ensemble::import_predictions(path)?;
        ensemble::fuse_all(&set, &tree_of(levels)?, allow_partial)?
    } else {
        ensemble::read_fused(path)?
    };
    Ok(fused.iter().map(|(s, v)| (s.clone(), ensemble::classify(v))).collect())
}

fn cmd_evaluate(predictions: &Path, manifest: &Path, levels: &Option<String>, allow_partial: bool, out: Option<PathBuf>) -> Result<()> {
    let preds = predicted_labels(predictions, levels, allow_partial)?;
    let report = MetricsReport::evaluate(&preds, &load_manifest(manifest)?.truth())?;
    let mut table = ResultsTable::new("");
    table.push(predictions.file_stem().map_or("predictions".into(), |s| s.to_string_lossy().into_owned()), "-", Summary::of(&report));
    let text = format!("{}\n{}", table.to_text(), report.detail_text());
    print!("{text}");
    if let Some(o) = out {
        std::fs::write(&o, &text).map_err(|e| Error::io(&o, e))?;
    }
    Ok(())
}

fn cmd_report(inputs: &PredictionInputs, manifest: &Path, aggregation: &str, out: Option<PathBuf>) -> Result<()> {
    let set = load_prediction_files(&inputs.predictions)?;
    let truth = load_manifest(manifest)?.truth();
    let tables = cross_validation_tables(&set, &truth, &tree_of(&inputs.levels)?, aggregation.parse()?, inputs.allow_partial)?;
    let text = tables.to_text();
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        tables.per_size.write_csv(dir.join("per_size.csv"))?;
        tables.fused.write_csv(dir.join("fused.csv"))?;
        let path = dir.join("report.txt");
        std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn cmd_synth(out: &Path, per_class: usize, seed: u64) -> Result<Manifest> {
    synthetic::write_dataset(out, &SyntheticSpec::balanced(per_class), seed)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split { manifest, k, seed, out } => cmd_split(&manifest, k as usize, seed, &out),
        Command::Train {
            config,
            manifest,
            folds,
            out,
            seed,
            jobs,
        } => cmd_train(&config, manifest, folds, out, seed, jobs),
        Command::Predict {
            checkpoint,
            manifest,
            out,
            config,
            seed,
            fold,
        } => cmd_predict(&checkpoint, &manifest, &out, config, seed, fold),
        Command::Fuse { inputs, out } => cmd_fuse(&inputs, &out),
        Command::Evaluate {
            predictions,
            manifest,
            levels,
            allow_partial,
            out,
        } => cmd_evaluate(&predictions, &manifest, &levels, allow_partial, out),
        Command::Report {
            inputs,
            manifest,
            aggregation,
            out,
        } => cmd_report(&inputs, &manifest, &aggregation, out),
        Command::Synth { out, per_class, seed } => cmd_synth(&out, per_class, seed).map(|_| ()),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn main_with_args(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const EXAMPLE: &str = r#"
manifest = "data/manifest.csv"
output_dir = "runs/demo"
seed = 7
architectures = ["compact-a", "compact-b"]
input_sizes = [224, 260]

[train]
epochs = 12
batch_size = 16

[train.loss]
class_weights = [1.0, 1.0, 1.0, 1.0]

[tta]
repeats = 10

[fusion]
levels = ["fold", "size", "arch"]
"#;

    #[test]
    fn example_config_parses() {
        let cfg = RunConfigFile::parse(EXAMPLE).unwrap();
        cfg.validate().unwrap();
        let t = cfg.train_config();
        assert_eq!(t.epochs, 12);
        assert_eq!(t.seed, 7);
        assert_eq!(t.tta.repeats, 10);
        assert_eq!(t.base_lr, 0.001);
        let again = RunConfigFile::parse(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn size_256_is_rejected() {
        let cfg = RunConfigFile::parse(&EXAMPLE.replace("[224, 260]", "[224, 256]")).unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfigFile::parse(&EXAMPLE.replace("epochs = 12", "epoch = 12")).is_err());
    }

    #[test]
    fn levels_parse() {
        assert_eq!(parse_levels("fold,size,arch").unwrap(), FusionTree::default());
        assert!(parse_levels("fold,fold,arch").is_err());
        assert!(parse_levels("fold,size").is_err());
        assert!(parse_levels("fold,size,net").is_err());
    }

    #[test]
    fn k_of_one_is_a_usage_error() {
        let args = ["pollenfuse", "split", "--manifest", "m.csv", "--k", "1", "--out", "f.csv"];
        assert_eq!(main_with_args(args.map(OsString::from)), 2);
    }
}
