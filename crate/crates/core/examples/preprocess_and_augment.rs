//! Mean subtraction and resize to 260x260, then the seeded augmentation
//! pipeline with a 224 crop. Writes a few views as PNGs.
//!
//! cargo run --example preprocess_and_augment -- [out_dir]

use pollenfuse::dataset::ClassLabel;
use pollenfuse::imageops::{augment_traced, preprocess, AugmentationConfig, ImageTensor, CHANNEL_MEANS};
use pollenfuse::seed;
use pollenfuse::synthetic::render;

fn to_png(t: &ImageTensor) -> image::RgbImage {
    image::RgbImage::from_fn(t.width() as u32, t.height() as u32, |x, y| {
        image::Rgb([0, 1, 2].map(|c| (t.at(y as usize, x as usize, c) + CHANNEL_MEANS[c]).round().clamp(0.0, 255.0) as u8))
    })
}

fn main() -> pollenfuse::Result<()> {
    let out = std::env::args().nth(1).map_or_else(|| std::env::temp_dir().join("pollenfuse-augment"), Into::into);
    std::fs::create_dir_all(&out).expect("output directory");

    let raw = render(ClassLabel::Anomalous, 84, &mut seed::rng(1));
    let pre = preprocess(&raw)?;
    let mean: Vec<f64> = (0..3)
        .map(|c| pre.data().iter().skip(c).step_by(3).sum::<f64>() / (260.0 * 260.0))
        .collect();
    println!("preprocessed {}x{}, channel means after subtraction {mean:.2?}", pre.height(), pre.width());

    let cfg = AugmentationConfig::default().with_crop(Some(224));
    let mut rng = seed::rng(42);
    for i in 0..6 {
        let (view, trace) = augment_traced(&pre, &cfg, &mut rng)?;
        println!("view {i}: {trace:?}");
        let path = out.join(format!("view{i}.png"));
        to_png(&view).save(&path).expect("png written");
    }
    println!("views written to {}", out.display());
    Ok(())
}
