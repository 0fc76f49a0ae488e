//! Everything around the math: preprocessing, augmentation, synthetic data,
//! dataset and report I/O, and the repeated-experiments harness.

pub mod io;
pub mod synthetic;
pub mod trials;

use crate::image::ImageTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-channel min-max normalization: X' = (X - min) / (max - min).
/// Constant channels map to zero.
pub fn minmax_normalize(img: &ImageTensor) -> ImageTensor {
    let channels = img.channels();
    let mut lo = vec![f64::INFINITY; channels];
    let mut hi = vec![f64::NEG_INFINITY; channels];
    for (i, &v) in img.data().iter().enumerate() {
        let c = i % channels;
        lo[c] = lo[c].min(v);
        hi[c] = hi[c].max(v);
    }
    let data: Vec<f64> = img
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i % channels;
            if hi[c] > lo[c] {
                (v - lo[c]) / (hi[c] - lo[c])
            } else {
                0.0
            }
        })
        .collect();
    ImageTensor::new(img.width(), img.height(), channels, data)
        .expect("normalized data stays in [0, 1]")
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    (h, s, v)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let sector = (h6.floor() as usize) % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match sector {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Deterministic augmentation with explicit knobs: hue offset (wrapping in
/// HSV), saturation factor (clamped to the valid range), and the two flips.
/// Color jitter applies to three-channel images only; flips apply always.
pub fn augment_with(
    img: &ImageTensor,
    hue_delta: f64,
    saturation_factor: f64,
    flip_up_down: bool,
    flip_left_right: bool,
) -> ImageTensor {
    let (w, h, channels) = (img.width(), img.height(), img.channels());
    let mut data = img.data().to_vec();
    if channels == 3 {
        for px in data.chunks_exact_mut(3) {
            let (hh, ss, vv) = rgb_to_hsv(px[0], px[1], px[2]);
            let hh = (hh + hue_delta).rem_euclid(1.0);
            let ss = (ss * saturation_factor).clamp(0.0, 1.0);
            let (r, g, b) = hsv_to_rgb(hh, ss, vv);
            px[0] = r.clamp(0.0, 1.0);
            px[1] = g.clamp(0.0, 1.0);
            px[2] = b.clamp(0.0, 1.0);
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            let sy = if flip_up_down { h - 1 - y } else { y };
            let sx = if flip_left_right { w - 1 - x } else { x };
            let src = (sy * w + sx) * channels;
            let dst = (y * w + x) * channels;
            out[dst..dst + channels].copy_from_slice(&data[src..src + channels]);
        }
    }
    ImageTensor::new(w, h, channels, out).expect("augmented data stays in [0, 1]")
}

/// Seeded augmentation: hue offset uniform in [-0.12, 0.12], saturation
/// factor uniform in [0.5, 1.5], each flip with probability one half.
pub fn augment(img: &ImageTensor, seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hue_delta = rng.gen_range(-0.12..=0.12);
    let saturation = rng.gen_range(0.5..=1.5);
    let flip_ud = rng.gen_bool(0.5);
    let flip_lr = rng.gen_bool(0.5);
    augment_with(img, hue_delta, saturation, flip_ud, flip_lr)
}
