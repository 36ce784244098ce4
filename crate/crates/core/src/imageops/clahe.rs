//! Contrast-limited adaptive histogram equalisation on CIE L*a*b* lightness.
//!
//! The tensor is moved back to the 0–255 scale, converted to L*a*b* (sRGB,
//! D65), L* is equalised over a grid of tiles with clipped histograms and
//! bilinearly interpolated lookup tables, and the result is converted back and
//! re-centred.

use super::{ImageTensor, CHANNEL_MEANS};

const BINS: usize = 256;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        c * 12.92
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

const WHITE: [f64; 3] = [0.950_47, 1.0, 1.088_83];
const DELTA: f64 = 6.0 / 29.0;

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(t: f64) -> f64 {
    if t > DELTA {
        t * t * t
    } else {
        3.0 * DELTA * DELTA * (t - 4.0 / 29.0)
    }
}

/// RGB in [0,255] → (L in [0,100], a, b).
pub(crate) fn rgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| srgb_to_linear(c / 255.0));
    let x = 0.412_456_4 * r + 0.357_576_1 * g + 0.180_437_5 * b;
    let y = 0.212_672_9 * r + 0.715_152_2 * g + 0.072_175_0 * b;
    let z = 0.019_333_9 * r + 0.119_192_0 * g + 0.950_304_1 * b;
    let (fx, fy, fz) = (lab_f(x / WHITE[0]), lab_f(y / WHITE[1]), lab_f(z / WHITE[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub(crate) fn lab_to_rgb(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let (x, y, z) = (
        WHITE[0] * lab_f_inv(fx),
        WHITE[1] * lab_f_inv(fy),
        WHITE[2] * lab_f_inv(fz),
    );
    let r = 3.240_454_2 * x - 1.537_138_5 * y - 0.498_531_4 * z;
    let g = -0.969_266_0 * x + 1.876_010_8 * y + 0.041_556_0 * z;
    let b = 0.055_643_4 * x - 0.204_025_9 * y + 1.057_225_2 * z;
    [r, g, b].map(|c| (linear_to_srgb(c.clamp(0.0, 1.0)) * 255.0).clamp(0.0, 255.0))
}

/// Per-tile equalisation tables for an 8-bit-quantised channel.
fn tile_luts(levels: &[u8], h: usize, w: usize, tiles: usize, clip_limit: f64) -> (Vec<[f64; BINS]>, Vec<usize>, Vec<usize>) {
    let ty = tiles.min(h);
    let tx = tiles.min(w);
    let ybounds: Vec<usize> = (0..=ty).map(|i| i * h / ty).collect();
    let xbounds: Vec<usize> = (0..=tx).map(|i| i * w / tx).collect();
    let mut luts = Vec::with_capacity(ty * tx);
    for ti in 0..ty {
        for tj in 0..tx {
            let mut hist = [0.0f64; BINS];
            for y in ybounds[ti]..ybounds[ti + 1] {
                for x in xbounds[tj]..xbounds[tj + 1] {
                    hist[levels[y * w + x] as usize] += 1.0;
                }
            }
            let area = ((ybounds[ti + 1] - ybounds[ti]) * (xbounds[tj + 1] - xbounds[tj])) as f64;
            let limit = (clip_limit * area / BINS as f64).max(1.0);
            let mut excess = 0.0;
            for v in hist.iter_mut() {
                if *v > limit {
                    excess += *v - limit;
                    *v = limit;
                }
            }
            let bonus = excess / BINS as f64;
            let mut lut = [0.0; BINS];
            let mut cdf = 0.0;
            for (l, v) in lut.iter_mut().zip(hist.iter()) {
                cdf += v + bonus;
                *l = (cdf * 255.0 / area).min(255.0);
            }
            luts.push(lut);
        }
    }
    (luts, ybounds, xbounds)
}

/// Interpolation coordinate between tile centres: (lower tile, upper tile, weight of upper).
fn tile_coord(p: usize, bounds: &[usize]) -> (usize, usize, f64) {
    let n = bounds.len() - 1;
    let centre = |i: usize| (bounds[i] + bounds[i + 1]) as f64 / 2.0 - 0.5;
    let pf = p as f64;
    if n == 1 || pf <= centre(0) {
        return (0, 0, 0.0);
    }
    if pf >= centre(n - 1) {
        return (n - 1, n - 1, 0.0);
    }
    let mut i = 0;
    while centre(i + 1) < pf {
        i += 1;
    }
    let (c0, c1) = (centre(i), centre(i + 1));
    (i, i + 1, (pf - c0) / (c1 - c0))
}

/// Equalises lightness in place; chroma is left unchanged.
pub fn clahe_lightness(t: &mut ImageTensor, tiles: usize, clip_limit: f64) {
    let (h, w) = (t.height(), t.width());
    let mut labs = Vec::with_capacity(h * w);
    let mut levels = Vec::with_capacity(h * w);
    for px in t.data().chunks_exact(3) {
        let rgb = [0, 1, 2].map(|c| (px[c] + CHANNEL_MEANS[c]).clamp(0.0, 255.0));
        let lab = rgb_to_lab(rgb);
        levels.push((lab[0] * 2.55).round().clamp(0.0, 255.0) as u8);
        labs.push(lab);
    }
    let (luts, yb, xb) = tile_luts(&levels, h, w, tiles, clip_limit);
    let tx = xb.len() - 1;
    let xcoords: Vec<_> = (0..w).map(|x| tile_coord(x, &xb)).collect();
    let data = t.data_mut();
    for y in 0..h {
        let (y0, y1, fy) = tile_coord(y, &yb);
        for (x, &(x0, x1, fx)) in xcoords.iter().enumerate() {
            let i = y * w + x;
            let l = levels[i] as usize;
            let top = luts[y0 * tx + x0][l] * (1.0 - fx) + luts[y0 * tx + x1][l] * fx;
            let bottom = luts[y1 * tx + x0][l] * (1.0 - fx) + luts[y1 * tx + x1][l] * fx;
            let equalised = top * (1.0 - fy) + bottom * fy;
            let mut lab = labs[i];
            lab[0] = equalised / 2.55;
            let rgb = lab_to_rgb(lab);
            for c in 0..3 {
                data[i * 3 + c] = rgb[c] - CHANNEL_MEANS[c];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lab_round_trip() {
        for rgb in [[0.0, 0.0, 0.0], [255.0, 255.0, 255.0], [12.0, 200.0, 77.0], [130.5, 4.0, 250.0]] {
            let back = lab_to_rgb(rgb_to_lab(rgb));
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-3, "{rgb:?} -> {back:?}");
            }
        }
        let white = rgb_to_lab([255.0; 3]);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
    }

    #[test]
    fn stretches_low_contrast_image() {
        let (h, w) = (64, 64);
        let data = (0..h * w)
            .flat_map(|i| {
                let v = 100.0 + ((i % w) as f64 / w as f64) * 20.0;
                [0, 1, 2].map(|c| v - CHANNEL_MEANS[c])
            })
            .collect();
        let mut t = ImageTensor::new(h, w, data).unwrap();
        let range = |t: &ImageTensor| {
            let g: Vec<f64> = t.data().chunks_exact(3).map(|p| p[1]).collect();
            g.iter().cloned().fold(f64::MIN, f64::max) - g.iter().cloned().fold(f64::MAX, f64::min)
        };
        let before = range(&t);
        clahe_lightness(&mut t, 8, 2.0);
        assert!(range(&t) > before);
        assert!(t.data().iter().enumerate().all(|(i, v)| {
            let raw = v + CHANNEL_MEANS[i % 3];
            (-1e-9..=255.0 + 1e-9).contains(&raw)
        }));
    }

    #[test]
    fn tiny_images_do_not_panic() {
        let mut t = ImageTensor::filled(3, 5, [10.0, -20.0, 5.0]);
        clahe_lightness(&mut t, 8, 2.0);
        assert_eq!((t.height(), t.width()), (3, 5));
    }
}
