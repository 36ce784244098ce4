//! Image decoding, preprocessing and the seeded augmentation suite.
//!
//! Tensors are stored row-major in HWC order with RGB channels. After
//! [`preprocess`] the ImageNet channel means have been subtracted, so a value
//! of zero corresponds to the corpus mean colour.

mod clahe;
mod source;

use std::path::Path;

use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clahe::clahe_lightness;
pub use source::{FileImageSource, ImageSource, MemoryImageSource};

/// ImageNet per-channel means on the 0–255 scale (R, G, B).
pub const CHANNEL_MEANS: [f64; 3] = [123.68, 116.779, 103.939];

pub const PREPROCESSED_SIDE: usize = 260;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Image(format!("zero-sized tensor {height}x{width}")));
        }
        if data.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "tensor data length {} != {height}*{width}*3",
                data.len()
            )));
        }
        Ok(ImageTensor { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        ImageTensor { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn is_square(&self) -> bool {
        self.height == self.width
    }
}

/// Decodes a PNG or JPEG file. Only 8- and 16-bit RGB images are accepted.
pub fn decode_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    match img {
        image::DynamicImage::ImageRgb8(rgb) => Ok(rgb),
        image::DynamicImage::ImageRgb16(_) => Ok(img.to_rgb8()),
        other => Err(Error::Image(format!(
            "{}: expected an RGB image, got {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Subtracts the channel means, then resizes bilinearly to 260×260.
pub fn preprocess(raw: &RgbImage) -> Result<ImageTensor> {
    preprocess_to(raw, PREPROCESSED_SIDE)
}

pub fn preprocess_to(raw: &RgbImage, side: usize) -> Result<ImageTensor> {
    let (w, h) = raw.dimensions();
    let (w, h) = (w as usize, h as usize);
    if w == 0 || h == 0 {
        return Err(Error::Image("zero-sized input image".into()));
    }
    let data = raw
        .as_raw()
        .chunks_exact(3)
        .flat_map(|px| {
            [
                f64::from(px[0]) - CHANNEL_MEANS[0],
                f64::from(px[1]) - CHANNEL_MEANS[1],
                f64::from(px[2]) - CHANNEL_MEANS[2],
            ]
        })
        .collect();
    let centred = ImageTensor::new(h, w, data)?;
    Ok(resize_bilinear(&centred, side, side))
}

/// Half-pixel-centre bilinear resampling with edge clamping.
///
/// Same size is an exact copy, and constant images stay constant.
pub fn resize_bilinear(t: &ImageTensor, out_h: usize, out_w: usize) -> ImageTensor {
    if out_h == t.height && out_w == t.width {
        return t.clone();
    }
    let sy = t.height as f64 / out_h as f64;
    let sx = t.width as f64 / out_w as f64;
    let taps = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|x| taps(x, sx, t.width)).collect();
    let mut data = Vec::with_capacity(out_h * out_w * 3);
    for y in 0..out_h {
        let (y0, y1, fy) = taps(y, sy, t.height);
        for &(x0, x1, fx) in &xs {
            let (a, b, c, d) = (t.pixel(y0, x0), t.pixel(y0, x1), t.pixel(y1, x0), t.pixel(y1, x1));
            for ch in 0..3 {
                let top = a[ch] + (b[ch] - a[ch]) * fx;
                let bottom = c[ch] + (d[ch] - c[ch]) * fx;
                data.push(top + (bottom - top) * fy);
            }
        }
    }
    ImageTensor {
        height: out_h,
        width: out_w,
        data,
    }
}

pub fn crop_at(t: &ImageTensor, top: usize, left: usize, size: usize) -> Result<ImageTensor> {
    if top + size > t.height || left + size > t.width || size == 0 {
        return Err(Error::Shape(format!(
            "crop {size}x{size} at ({top},{left}) exceeds {}x{}",
            t.height, t.width
        )));
    }
    let mut data = Vec::with_capacity(size * size * 3);
    for y in top..top + size {
        let start = (y * t.width + left) * 3;
        data.extend_from_slice(&t.data[start..start + size * 3]);
    }
    Ok(ImageTensor {
        height: size,
        width: size,
        data,
    })
}

/// Square crop with offsets uniform in `[0, side - size]` on each axis.
pub fn random_crop<R: Rng + ?Sized>(t: &ImageTensor, size: usize, rng: &mut R) -> Result<ImageTensor> {
    random_crop_traced(t, size, rng).map(|(c, _)| c)
}

fn random_crop_traced<R: Rng + ?Sized>(
    t: &ImageTensor,
    size: usize,
    rng: &mut R,
) -> Result<(ImageTensor, (usize, usize))> {
    if size == 0 || size > t.height || size > t.width {
        return Err(Error::Shape(format!(
            "crop size {size} larger than source {}x{}",
            t.height, t.width
        )));
    }
    let top = rng.gen_range(0..=t.height - size);
    let left = rng.gen_range(0..=t.width - size);
    Ok((crop_at(t, top, left, size)?, (top, left)))
}

/// An element of the dihedral group: optional mirrors followed by clockwise
/// quarter turns. Applied as a single pixel remap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Dihedral {
    pub hflip: bool,
    pub vflip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub fn is_identity(&self) -> bool {
        !self.hflip && !self.vflip && self.quarter_turns.is_multiple_of(4)
    }

    pub fn apply(&self, t: &ImageTensor) -> ImageTensor {
        if self.is_identity() {
            return t.clone();
        }
        let turns = self.quarter_turns % 4;
        let (h, w) = (t.height, t.width);
        let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
        let mut data = vec![0.0; t.data.len()];
        for y in 0..oh {
            for x in 0..ow {
                // Undo the rotation, then the mirrors.
                let (mut sy, mut sx) = match turns {
                    0 => (y, x),
                    1 => (h - 1 - x, y),
                    2 => (h - 1 - y, w - 1 - x),
                    _ => (x, w - 1 - y),
                };
                if self.vflip {
                    sy = h - 1 - sy;
                }
                if self.hflip {
                    sx = w - 1 - sx;
                }
                let src = (sy * w + sx) * 3;
                let dst = (y * ow + x) * 3;
                data[dst..dst + 3].copy_from_slice(&t.data[src..src + 3]);
            }
        }
        ImageTensor {
            height: oh,
            width: ow,
            data,
        }
    }
}

pub fn hflip(t: &ImageTensor) -> ImageTensor {
    Dihedral {
        hflip: true,
        ..Default::default()
    }
    .apply(t)
}

pub fn vflip(t: &ImageTensor) -> ImageTensor {
    Dihedral {
        vflip: true,
        ..Default::default()
    }
    .apply(t)
}

/// Rotates clockwise by `quarter_turns` × 90°.
pub fn rotate(t: &ImageTensor, quarter_turns: u8) -> ImageTensor {
    Dihedral {
        quarter_turns,
        ..Default::default()
    }
    .apply(t)
}

/// Zeroes a `side`×`side` square with top-left corner at (top, left).
pub fn cutout_at(t: &mut ImageTensor, top: usize, left: usize, side: usize) {
    for y in top..(top + side).min(t.height) {
        let start = (y * t.width + left) * 3;
        let end = (y * t.width + (left + side).min(t.width)) * 3;
        t.data[start..end].fill(0.0);
    }
}

/// `raw' = clamp(alpha·raw + beta, 0, 255)` on the un-centred scale.
pub fn brightness_contrast(t: &mut ImageTensor, alpha: f64, beta: f64) {
    for px in t.data.chunks_exact_mut(3) {
        for (v, &mean) in px.iter_mut().zip(&CHANNEL_MEANS) {
            let raw = (*v + mean) * alpha + beta;
            *v = raw.clamp(0.0, 255.0) - mean;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub p_clahe: f64,
    pub p_cutout: f64,
    pub p_brightness_contrast: f64,
    pub p_hflip: f64,
    pub p_vflip: f64,
    pub p_rotate: f64,
    /// Random square crop applied before the other transforms.
    pub crop_size: Option<usize>,
    pub brightness_limit: f64,
    pub contrast_limit: f64,
    /// Upper bound on the cut-out side as a fraction of the shorter image side.
    pub cutout_max_fraction: f64,
    pub clahe_clip_limit: f64,
    pub clahe_tiles: usize,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            p_clahe: 0.1,
            p_cutout: 0.1,
            p_brightness_contrast: 0.4,
            p_hflip: 0.5,
            p_vflip: 0.5,
            p_rotate: 0.5,
            crop_size: None,
            brightness_limit: 0.2,
            contrast_limit: 0.2,
            cutout_max_fraction: 0.3,
            clahe_clip_limit: 2.0,
            clahe_tiles: 8,
        }
    }
}

impl AugmentationConfig {
    /// Every gate closed; `augment` becomes the identity (apart from cropping).
    pub fn identity() -> Self {
        AugmentationConfig {
            p_clahe: 0.0,
            p_cutout: 0.0,
            p_brightness_contrast: 0.0,
            p_hflip: 0.0,
            p_vflip: 0.0,
            p_rotate: 0.0,
            ..Default::default()
        }
    }

    pub fn with_crop(mut self, crop_size: Option<usize>) -> Self {
        self.crop_size = crop_size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_clahe", self.p_clahe),
            ("p_cutout", self.p_cutout),
            ("p_brightness_contrast", self.p_brightness_contrast),
            ("p_hflip", self.p_hflip),
            ("p_vflip", self.p_vflip),
            ("p_rotate", self.p_rotate),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if !(0.0..=1.0).contains(&self.brightness_limit) || !(0.0..=1.0).contains(&self.contrast_limit) {
            return Err(Error::Config("brightness/contrast limits must lie in [0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.cutout_max_fraction) {
            return Err(Error::Config("cutout_max_fraction must lie in [0, 1]".into()));
        }
        if self.clahe_tiles == 0 || self.clahe_clip_limit <= 0.0 {
            return Err(Error::Config("CLAHE needs at least one tile and a positive clip limit".into()));
        }
        if self.crop_size == Some(0) {
            return Err(Error::Config("crop_size must be positive".into()));
        }
        Ok(())
    }
}

/// What [`augment_traced`] actually did.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentTrace {
    pub crop: Option<(usize, usize)>,
    pub clahe: bool,
    /// (top, left, side)
    pub cutout: Option<(usize, usize, usize)>,
    /// (alpha, beta)
    pub brightness_contrast: Option<(f64, f64)>,
    pub geometry: Dihedral,
}

pub fn augment<R: Rng + ?Sized>(t: &ImageTensor, cfg: &AugmentationConfig, rng: &mut R) -> Result<ImageTensor> {
    augment_traced(t, cfg, rng).map(|(img, _)| img)
}

/// Optional random crop, then CLAHE, cut-out, brightness/contrast, horizontal
/// flip, vertical flip and rotation, each behind its own gate draw.
///
/// Rotation angles are drawn from {0°, 90°, 180°, 270°} for square tensors and
/// from {0°, 180°} otherwise, so the output shape always matches the input.
pub fn augment_traced<R: Rng + ?Sized>(
    t: &ImageTensor,
    cfg: &AugmentationConfig,
    rng: &mut R,
) -> Result<(ImageTensor, AugmentTrace)> {
    let mut trace = AugmentTrace::default();
    let mut img = match cfg.crop_size {
        Some(size) if size != t.height || size != t.width => {
            let (c, at) = random_crop_traced(t, size, rng)?;
            trace.crop = Some(at);
            c
        }
        _ => t.clone(),
    };

    if gate(rng, cfg.p_clahe) {
        clahe_lightness(&mut img, cfg.clahe_tiles, cfg.clahe_clip_limit);
        trace.clahe = true;
    }

    if gate(rng, cfg.p_cutout) {
        let short = img.height.min(img.width) as f64;
        let hi = cfg.cutout_max_fraction;
        let lo = hi.min(0.1);
        let frac = if hi > lo { rng.gen_range(lo..=hi) } else { hi };
        let side = ((frac * short).floor() as usize).clamp(0, (hi * short).floor() as usize);
        if side > 0 {
            let top = rng.gen_range(0..=img.height - side);
            let left = rng.gen_range(0..=img.width - side);
            cutout_at(&mut img, top, left, side);
            trace.cutout = Some((top, left, side));
        }
    }

    if gate(rng, cfg.p_brightness_contrast) {
        let alpha = 1.0 + symmetric(rng, cfg.contrast_limit);
        let beta = 255.0 * symmetric(rng, cfg.brightness_limit);
        brightness_contrast(&mut img, alpha, beta);
        trace.brightness_contrast = Some((alpha, beta));
    }

    let mut geometry = Dihedral {
        hflip: gate(rng, cfg.p_hflip),
        vflip: gate(rng, cfg.p_vflip),
        quarter_turns: 0,
    };
    if gate(rng, cfg.p_rotate) {
        geometry.quarter_turns = if img.is_square() {
            rng.gen_range(0..4u8)
        } else {
            2 * rng.gen_range(0..2u8)
        };
    }
    trace.geometry = geometry;
    Ok((geometry.apply(&img), trace))
}

fn gate<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    // Always consume one draw so later gates see the same stream position.
    let u: f64 = rng.gen();
    u < p
}

fn symmetric<R: Rng + ?Sized>(rng: &mut R, limit: f64) -> f64 {
    if limit > 0.0 {
        rng.gen_range(-limit..=limit)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        let data = (0..h * w * 3).map(|i| (i % 251) as f64 - 120.0).collect();
        ImageTensor::new(h, w, data).unwrap()
    }

    fn raw_image(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| image::Rgb([(x * 3) as u8, (y * 2) as u8, ((x + y) % 256) as u8]))
    }

    #[test]
    fn preprocess_resizes_84_to_260() {
        let t = preprocess(&raw_image(84, 84)).unwrap();
        assert_eq!((t.height(), t.width()), (260, 260));
        assert!(t.data().iter().all(|v| (-255.0..=255.0).contains(v)));
    }

    #[test]
    fn preprocess_cancels_means_on_constant_image() {
        // Channel means are not integers, so build the constant tensor directly
        // and check subtraction + resize on it.
        let raw = RgbImage::from_pixel(84, 84, image::Rgb([124, 117, 104]));
        let t = preprocess(&raw).unwrap();
        for px in t.data().chunks_exact(3) {
            for (v, (&m, r)) in px.iter().zip(CHANNEL_MEANS.iter().zip([124.0, 117.0, 104.0])) {
                assert!((v - (r - m)).abs() < 1e-9);
            }
        }
        let means = ImageTensor::filled(84, 84, [0.0; 3]);
        let resized = resize_bilinear(&means, 260, 260);
        assert!(resized.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preprocess_at_native_size_is_pure_subtraction() {
        let raw = raw_image(260, 260);
        let t = preprocess(&raw).unwrap();
        for (i, px) in raw.as_raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                assert_eq!(t.data()[i * 3 + c], f64::from(px[c]) - CHANNEL_MEANS[c]);
            }
        }
    }

    #[test]
    fn preprocess_round_trip_recovers_resized_original() {
        let raw = raw_image(84, 84);
        let t = preprocess(&raw).unwrap();
        let data = raw.as_raw().iter().map(|&v| f64::from(v)).collect();
        let original = resize_bilinear(&ImageTensor::new(84, 84, data).unwrap(), 260, 260);
        for (i, v) in t.data().iter().enumerate() {
            let back = v + CHANNEL_MEANS[i % 3];
            assert!((back - original.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_sized_input_is_rejected() {
        assert!(preprocess(&RgbImage::new(0, 5)).is_err());
    }

    #[test]
    fn random_crop_offsets_and_determinism() {
        let t = ramp(260, 260);
        for s in 0..50 {
            let (c, (top, left)) = random_crop_traced(&t, 224, &mut seed::rng(s)).unwrap();
            assert!(top <= 36 && left <= 36);
            assert_eq!((c.height(), c.width()), (224, 224));
            assert_eq!(c.at(0, 0, 0), t.at(top, left, 0));
        }
        let a = random_crop(&t, 240, &mut seed::rng(9)).unwrap();
        let b = random_crop(&t, 240, &mut seed::rng(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(random_crop(&t, 260, &mut seed::rng(1)).unwrap(), t);
        assert!(random_crop(&t, 261, &mut seed::rng(1)).is_err());
    }

    #[test]
    fn identity_config_is_identity() {
        let t = ramp(32, 32);
        let out = augment(&t, &AugmentationConfig::identity(), &mut seed::rng(3)).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn hflip_is_mirror_and_involution() {
        let t = ramp(8, 8);
        let cfg = AugmentationConfig {
            p_hflip: 1.0,
            ..AugmentationConfig::identity()
        };
        let once = augment(&t, &cfg, &mut seed::rng(0)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                for c in 0..3 {
                    assert_eq!(once.at(y, x, c), t.at(y, 7 - x, c));
                }
            }
        }
        let twice = augment(&once, &cfg, &mut seed::rng(1)).unwrap();
        assert_eq!(twice, t);
    }

    #[test]
    fn forced_half_turn_equals_double_flip() {
        let t = ramp(10, 10);
        let cfg = AugmentationConfig {
            p_rotate: 1.0,
            ..AugmentationConfig::identity()
        };
        let seed = (0..100)
            .find(|&s| augment_traced(&t, &cfg, &mut seed::rng(s)).unwrap().1.geometry.quarter_turns == 2)
            .expect("some seed draws 180 degrees");
        let rotated = augment(&t, &cfg, &mut seed::rng(seed)).unwrap();
        assert_eq!(rotated, vflip(&hflip(&t)));
    }

    #[test]
    fn dihedral_composition_matches_sequential_ops() {
        let t = ramp(6, 6);
        for bits in 0..16u8 {
            let d = Dihedral {
                hflip: bits & 1 != 0,
                vflip: bits & 2 != 0,
                quarter_turns: bits >> 2,
            };
            let mut seq = t.clone();
            if d.hflip {
                seq = hflip(&seq);
            }
            if d.vflip {
                seq = vflip(&seq);
            }
            let mut rot = seq;
            for _ in 0..d.quarter_turns {
                rot = rotate(&rot, 1);
            }
            assert_eq!(d.apply(&t), rot);
        }
        // Clockwise: the top-left pixel moves to the top-right corner.
        let r = rotate(&t, 1);
        assert_eq!(r.pixel(0, 5), t.pixel(0, 0));
    }

    #[test]
    fn non_square_rotation_preserves_shape() {
        let t = ramp(6, 9);
        let cfg = AugmentationConfig {
            p_rotate: 1.0,
            ..AugmentationConfig::identity()
        };
        for s in 0..20 {
            let out = augment(&t, &cfg, &mut seed::rng(s)).unwrap();
            assert_eq!((out.height(), out.width()), (6, 9));
        }
    }

    #[test]
    fn config_validation() {
        assert!(AugmentationConfig::default().validate().is_ok());
        let bad = AugmentationConfig {
            p_cutout: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn brightness_contrast_stays_in_range() {
        let mut t = ramp(16, 16);
        brightness_contrast(&mut t, 1.2, 51.0);
        assert!(t.data().iter().enumerate().all(|(i, v)| {
            let raw = v + CHANNEL_MEANS[i % 3];
            (-1e-9..=255.0 + 1e-9).contains(&raw)
        }));
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop, prop_assert, prop_assert_eq, proptest, ProptestConfig};

        fn sorted(v: &[f64]) -> Vec<f64> {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn geometric_ops_permute_pixels(side in 2usize..12, bits in 0u8..16, seed in any::<u64>()) {
                let mut rng = seed::rng(seed);
                let data = (0..side * side * 3).map(|_| rng.gen_range(-100.0..100.0)).collect();
                let t = ImageTensor::new(side, side, data).unwrap();
                let d = Dihedral { hflip: bits & 1 != 0, vflip: bits & 2 != 0, quarter_turns: bits >> 2 };
                let out = d.apply(&t);
                prop_assert_eq!(sorted(out.data()), sorted(t.data()));
            }

            #[test]
            fn augment_preserves_shape_and_determinism(seed in any::<u64>(), crop in prop::option::of(20usize..=32)) {
                let t = ramp(32, 32);
                let cfg = AugmentationConfig { p_clahe: 0.5, p_cutout: 0.8, ..Default::default() }.with_crop(crop);
                let a = augment(&t, &cfg, &mut seed::rng(seed)).unwrap();
                let b = augment(&t, &cfg, &mut seed::rng(seed)).unwrap();
                let side = crop.unwrap_or(32);
                prop_assert_eq!((a.height(), a.width()), (side, side));
                prop_assert_eq!(a, b);
            }

            #[test]
            fn cutout_area_bounded(seed in any::<u64>(), frac in 0.0f64..0.6) {
                // Start from a tensor with no zeros so every zero came from cut-out.
                let t = ImageTensor::filled(40, 40, [1.0, 2.0, 3.0]);
                let cfg = AugmentationConfig { p_cutout: 1.0, cutout_max_fraction: frac, ..AugmentationConfig::identity() };
                let out = augment(&t, &cfg, &mut seed::rng(seed)).unwrap();
                let zeroed = out.data().chunks_exact(3).filter(|px| px.iter().all(|&v| v == 0.0)).count();
                prop_assert!(zeroed as f64 <= frac * frac * 1600.0 + 1e-9);
            }
        }
    }
}
