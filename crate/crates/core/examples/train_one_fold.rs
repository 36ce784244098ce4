//! Trains a custom registered backbone on four folds of a synthetic set and
//! scores the held-out fold with TTA. Files go to a temporary directory.
//!
//! cargo run --release --example train_one_fold -- [epochs]

use std::collections::BTreeMap;

use pollenfuse::dataset::stratified_kfold;
use pollenfuse::ensemble::classify;
use pollenfuse::metrics::MetricsReport;
use pollenfuse::network::{checkpoint, register_backbone, BackboneSpec};
use pollenfuse::synthetic::{in_memory, SyntheticSpec};
use pollenfuse::trainer::{train_fold, GridPaths, TrainConfig};

fn main() -> pollenfuse::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).map_or(8, |e| e.parse().expect("epochs must be an integer"));

    register_backbone(BackboneSpec {
        id: "tiny".into(),
        stem_pool: 8,
        widths: vec![8, 16],
    })?;

    let (manifest, source) = in_memory(&SyntheticSpec::balanced(50), 11);
    let folds = stratified_kfold(&manifest, 5, 11)?;
    let cfg = TrainConfig {
        epochs,
        seed: 11,
        input_sizes: vec![224],
        architectures: vec!["tiny".into()],
        ..Default::default()
    };
    let out = tempfile::tempdir().expect("temp dir");
    let record = train_fold(&cfg, &manifest, &folds, 0, "tiny", 224, &source, &GridPaths::under(out.path()))?;

    for e in &record.epochs {
        println!("epoch {:>2}  lr {:.2e}  loss {:.4}", e.epoch, e.lr, e.train_loss);
    }
    let preds: BTreeMap<_, _> = record.oof.iter().map(|(id, v)| (id.clone(), classify(v))).collect();
    let truth: BTreeMap<_, _> = manifest.truth().into_iter().filter(|(id, _)| preds.contains_key(id)).collect();
    println!("\n{}", MetricsReport::evaluate(&preds, &truth)?.detail_text());

    let reloaded = checkpoint::load(&record.checkpoint)?;
    println!("checkpoint {} holds {} tensors", record.checkpoint.display(), reloaded.tensors().len());
    Ok(())
}
