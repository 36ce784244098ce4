//! Separable synthetic pollen-like images for desk-scale runs.
//!
//! Each class has its own colour and shape on a noisy grey background:
//! normal grains are red disks, anomalous grains green rings, alnus blue
//! squares and debris clusters of small yellow blobs.

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;

use crate::dataset::{write_manifest, ClassLabel, ClassMap, Manifest, Sample};
use crate::error::{Error, Result};
use crate::imageops::MemoryImageSource;
use crate::seed;

/// Class counts of the challenge training corpus.
pub const CHALLENGE_COUNTS: [usize; 4] = [1566, 773, 8216, 724];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub counts: ClassMap<usize>,
    pub side: u32,
}

impl SyntheticSpec {
    pub fn balanced(per_class: usize) -> Self {
        SyntheticSpec {
            counts: ClassMap([per_class; 4]),
            side: 84,
        }
    }

    pub fn total(&self) -> usize {
        self.counts.0.iter().sum()
    }
}

/// Sample ids in generation order: `{class}-{index:04}`.
fn ids(spec: &SyntheticSpec) -> Vec<(String, ClassLabel)> {
    ClassLabel::ALL
        .iter()
        .flat_map(|&c| (0..spec.counts[c]).map(move |i| (format!("{}-{i:04}", c.name()), c)))
        .collect()
}

/// A manifest with the given class counts and placeholder image paths.
pub fn manifest_only(counts: ClassMap<usize>) -> Manifest {
    let spec = SyntheticSpec { counts, side: 84 };
    let samples = ids(&spec)
        .into_iter()
        .map(|(id, label)| Sample {
            image_path: format!("images/{id}.png").into(),
            id,
            label,
        })
        .collect();
    Manifest::new(samples).expect("generated ids are unique")
}

pub fn render(label: ClassLabel, side: u32, rng: &mut seed::Rng) -> RgbImage {
    let s = side as f64;
    let mut img = RgbImage::from_fn(side, side, |_, _| {
        let g = 110.0 + rng.gen_range(-12.0..12.0);
        Rgb([g as u8, g as u8, g as u8])
    });
    let jitter = |rng: &mut seed::Rng, base: [f64; 3]| base.map(|b| (b + rng.gen_range(-20.0..20.0)).clamp(0.0, 255.0));
    let cx = s / 2.0 + rng.gen_range(-0.12..0.12) * s;
    let cy = s / 2.0 + rng.gen_range(-0.12..0.12) * s;
    let paint = |img: &mut RgbImage, inside: &dyn Fn(f64, f64) -> bool, colour: [f64; 3]| {
        for y in 0..side {
            for x in 0..side {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    img.put_pixel(x, y, Rgb(colour.map(|c| c as u8)));
                }
            }
        }
    };
    match label {
        ClassLabel::Normal => {
            let r = rng.gen_range(0.20..0.30) * s;
            let colour = jitter(rng, [210.0, 50.0, 45.0]);
            paint(&mut img, &|x, y| (x - cx).hypot(y - cy) <= r, colour);
        }
        ClassLabel::Anomalous => {
            let r = rng.gen_range(0.22..0.32) * s;
            let t = rng.gen_range(0.06..0.09) * s;
            let colour = jitter(rng, [45.0, 190.0, 60.0]);
            paint(&mut img, &|x, y| ((x - cx).hypot(y - cy) - r).abs() <= t, colour);
        }
        ClassLabel::Alnus => {
            let h = rng.gen_range(0.18..0.26) * s;
            let colour = jitter(rng, [50.0, 70.0, 215.0]);
            paint(&mut img, &|x, y| (x - cx).abs() <= h && (y - cy).abs() <= h, colour);
        }
        ClassLabel::Debris => {
            let colour = jitter(rng, [225.0, 205.0, 40.0]);
            for _ in 0..rng.gen_range(4..8) {
                let bx = rng.gen_range(0.15..0.85) * s;
                let by = rng.gen_range(0.15..0.85) * s;
                let r = rng.gen_range(0.04..0.08) * s;
                paint(&mut img, &|x, y| (x - bx).hypot(y - by) <= r, colour);
            }
        }
    }
    img
}

/// Generates every image of the spec. Each image is seeded from `seed` and
/// its id, so adding classes or samples does not disturb existing images.
pub fn generate(spec: &SyntheticSpec, seed: u64) -> Vec<(String, ClassLabel, RgbImage)> {
    ids(spec)
        .into_iter()
        .map(|(id, label)| {
            let img = render(label, spec.side, &mut seed::rng(seed::mix_str(seed, &id)));
            (id, label, img)
        })
        .collect()
}

pub fn in_memory(spec: &SyntheticSpec, seed: u64) -> (Manifest, MemoryImageSource) {
    let mut source = MemoryImageSource::new();
    let mut samples = Vec::new();
    for (id, label, img) in generate(spec, seed) {
        samples.push(Sample {
            image_path: format!("images/{id}.png").into(),
            id: id.clone(),
            label,
        });
        source.insert(id, img);
    }
    (Manifest::new(samples).expect("generated ids are unique"), source)
}

/// Writes `images/*.png` and `manifest.csv` (with relative paths) under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, spec: &SyntheticSpec, seed: u64) -> Result<Manifest> {
    let dir = dir.as_ref();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    let mut samples = Vec::new();
    for (id, label, img) in generate(spec, seed) {
        let rel = format!("images/{id}.png");
        let path = dir.join(&rel);
        img.save(&path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
        samples.push(Sample {
            id,
            image_path: rel.into(),
            label,
        });
    }
    let manifest = Manifest::new(samples)?;
    write_manifest(&manifest, dir.join("manifest.csv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let spec = SyntheticSpec {
            counts: ClassMap([2, 1, 3, 1]),
            side: 84,
        };
        let a = generate(&spec, 5);
        assert_eq!(a.len(), 7);
        assert_eq!(a, generate(&spec, 5));
        assert_ne!(a[0].2, generate(&spec, 6)[0].2);
        assert!(a.iter().all(|(_, _, img)| img.dimensions() == (84, 84)));
    }

    #[test]
    fn classes_have_distinct_dominant_colours() {
        let spec = SyntheticSpec::balanced(3);
        for (_, label, img) in generate(&spec, 1) {
            let mut sum = [0.0f64; 3];
            for p in img.pixels() {
                for c in 0..3 {
                    sum[c] += (f64::from(p[c]) - 110.0).max(0.0);
                }
            }
            let strongest = (0..3).max_by(|&a, &b| sum[a].total_cmp(&sum[b])).unwrap();
            let expected = match label {
                ClassLabel::Normal | ClassLabel::Debris => 0,
                ClassLabel::Anomalous => 1,
                ClassLabel::Alnus => 2,
            };
            assert_eq!(strongest, expected, "{label:?}");
        }
    }

    #[test]
    fn written_dataset_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let m = write_dataset(dir.path(), &SyntheticSpec::balanced(2), 3).unwrap();
        let back = crate::dataset::load_manifest(dir.path().join("manifest.csv")).unwrap();
        assert_eq!(back.len(), m.len());
        let img = crate::imageops::decode_rgb(&back.samples()[0].image_path).unwrap();
        assert_eq!(img.dimensions(), (84, 84));
    }

    #[test]
    fn challenge_manifest_counts() {
        let m = manifest_only(ClassMap(CHALLENGE_COUNTS));
        assert_eq!(m.counts().0, CHALLENGE_COUNTS);
    }
}
