//! Confidence-filtered TTA: the 25 per-view vectors, which ones survive the
//! 0.5 filter, and the averaged result.

use pollenfuse::imageops::ImageSource;
use pollenfuse::network::build_model;
use pollenfuse::synthetic::{in_memory, SyntheticSpec};
use pollenfuse::trainer::{fit, TrainConfig};
use pollenfuse::tta::{filter_and_average, survivors, tta_vectors, TtaConfig};

fn main() -> pollenfuse::Result<()> {
    let (manifest, source) = in_memory(&SyntheticSpec::balanced(12), 5);
    let cfg = TrainConfig {
        epochs: 3,
        seed: 5,
        ..Default::default()
    };
    let model = cfg.cell_model("compact-a", 224);
    let loss = pollenfuse::LossConfig::default();
    let trained = fit(&cfg, &model, &loss, manifest.samples(), &source, 5)?.params;
    let untrained = build_model(&model, 5)?;

    let sample = &manifest.samples()[0];
    let image = source.load(sample)?;
    let tta = TtaConfig { seed: 1, ..Default::default() };
    for (name, params) in [("untrained", &untrained), ("trained", &trained)] {
        let vectors = tta_vectors(params, &image, &tta)?;
        let kept = survivors(&vectors, tta.confidence_threshold);
        println!("{name}: {} of {} views have max >= {}", kept.len(), vectors.len(), tta.confidence_threshold);
        for v in vectors.iter().take(5) {
            println!("  {:.3?}", v.probs());
        }
        let out = filter_and_average(&vectors, tta.confidence_threshold)?;
        println!("  fused {:.3?} -> {} (truth {})\n", out.probs(), out.argmax().name(), sample.label.name());
    }
    Ok(())
}
