//! Procedural desk-scale image data.
//!
//! Ten classes of soft-edged geometric patterns on a dark background, with
//! class-correlated foreground colors and per-sample jitter in position,
//! scale, phase, and hue. An auxiliary variant shifts the palette and widens
//! the jitter so it plays the role of a related but out-of-distribution
//! dataset for training the generative prior.

use ndarray::Array4;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{LabeledDataset, SplitTag};
use crate::error::Result;
use crate::seeds;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub height: usize,
    pub width: usize,
    /// Hue offset applied to every class palette (used by the aux variant).
    pub palette_shift: f64,
    /// Geometric jitter scale in `[0,1]`.
    pub jitter: f64,
    /// Additive Gaussian pixel noise.
    pub noise: f64,
    pub seed: u64,
    pub split_tag: SplitTag,
}

impl SynthConfig {
    pub fn desk_train(seed: u64) -> SynthConfig {
        SynthConfig {
            classes: 10,
            per_class: 150,
            height: 32,
            width: 32,
            palette_shift: 0.0,
            jitter: 1.0,
            noise: 0.02,
            seed,
            split_tag: SplitTag::Train,
        }
    }

    pub fn desk_test(seed: u64) -> SynthConfig {
        SynthConfig {
            per_class: 60,
            split_tag: SplitTag::Test,
            ..SynthConfig::desk_train(seed)
        }
    }

    /// Same pattern family, shifted palette and wider jitter.
    pub fn desk_aux(seed: u64) -> SynthConfig {
        SynthConfig {
            per_class: 150,
            palette_shift: 0.07,
            jitter: 1.4,
            split_tag: SplitTag::Aux,
            ..SynthConfig::desk_train(seed)
        }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor() as i32 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Soft membership of pixel (u, v) in the pattern of class `k`.
/// Coordinates are centered and scaled to [-1, 1].
#[allow(clippy::too_many_arguments)]
fn pattern_mask(k: usize, u: f64, v: f64, cx: f64, cy: f64, scale: f64, phase: f64) -> f64 {
    let x = (u - cx) / scale;
    let y = (v - cy) / scale;
    let r = (x * x + y * y).sqrt();
    let soft = 0.12;
    match k % 10 {
        // filled disk
        0 => smoothstep(0.62 + soft, 0.62 - soft, r),
        // ring
        1 => smoothstep(0.72 + soft, 0.72 - soft, r) * smoothstep(0.34 - soft, 0.34 + soft, r),
        // plus / cross
        2 => {
            let arm = 0.24;
            let inside = (x.abs() < arm && y.abs() < 0.8) || (y.abs() < arm && x.abs() < 0.8);
            let d = if inside { 1.0 } else { 0.0 };
            d * smoothstep(0.95, 0.75, r.max(x.abs().max(y.abs())))
        }
        // horizontal stripes
        3 => 0.5 + 0.5 * (std::f64::consts::PI * (3.0 * y + phase)).sin().tanh() * 2.0 / 2.0,
        // vertical stripes
        4 => 0.5 + 0.5 * (std::f64::consts::PI * (3.0 * x + phase)).sin().tanh() * 2.0 / 2.0,
        // diagonal stripes
        5 => 0.5 + 0.5 * (std::f64::consts::PI * (2.2 * (x + y) + phase)).sin().tanh(),
        // checkerboard
        6 => {
            let sx = (std::f64::consts::PI * (2.0 * x + phase)).sin();
            let sy = (std::f64::consts::PI * (2.0 * y + phase)).sin();
            0.5 + 0.5 * (4.0 * sx * sy).tanh()
        }
        // filled triangle
        7 => {
            let inside = y > -0.6 && y < 0.65 && x.abs() < 0.65 * (0.65 - y) / 1.25 * 2.0;
            if inside {
                1.0
            } else {
                0.0
            }
        }
        // square frame
        8 => {
            let m = x.abs().max(y.abs());
            smoothstep(0.78 + soft, 0.78 - soft, m) * smoothstep(0.42 - soft, 0.42 + soft, m)
        }
        // two blobs
        _ => {
            let d1 = ((x + 0.42) * (x + 0.42) + (y + 0.3) * (y + 0.3)).sqrt();
            let d2 = ((x - 0.42) * (x - 0.42) + (y - 0.3) * (y - 0.3)).sqrt();
            (smoothstep(0.42 + soft, 0.42 - soft, d1) + smoothstep(0.42 + soft, 0.42 - soft, d2))
                .min(1.0)
        }
    }
}

/// Generate a dataset of `classes * per_class` samples, deterministic in the
/// config seed.
pub fn generate(cfg: &SynthConfig) -> Result<LabeledDataset> {
    let n = cfg.classes * cfg.per_class;
    let mut images = Array4::<f32>::zeros((n, cfg.height, cfg.width, 3));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0usize;
    for k in 0..cfg.classes {
        let mut rng = seeds::rng(cfg.seed, "synthetic-class", k as u64);
        for _ in 0..cfg.per_class {
            let cx = cfg.jitter * rng.random_range(-0.16..0.16);
            let cy = cfg.jitter * rng.random_range(-0.16..0.16);
            let scale = 1.0 + cfg.jitter * rng.random_range(-0.22..0.18);
            let phase = cfg.jitter * rng.random_range(-0.5..0.5);
            let hue =
                k as f64 / cfg.classes as f64 + cfg.palette_shift + rng.random_range(-0.02..0.02);
            let sat = 0.75 + rng.random_range(-0.1..0.1);
            let val = 0.85 + rng.random_range(-0.1..0.1);
            let (fr, fg, fb) = hsv_to_rgb(hue, sat, val);
            let bg_v = 0.16 + rng.random_range(-0.04..0.04);
            let fgc = [fr, fg, fb];
            let bgc = [bg_v, bg_v, bg_v + 0.02];
            for py in 0..cfg.height {
                for px in 0..cfg.width {
                    let u = 2.0 * (px as f64 + 0.5) / cfg.width as f64 - 1.0;
                    let v = 2.0 * (py as f64 + 0.5) / cfg.height as f64 - 1.0;
                    let m = pattern_mask(k, u, v, cx, cy, scale, phase).clamp(0.0, 1.0);
                    for ch in 0..3 {
                        let noise: f64 = rng.random_range(-1.0..1.0) * cfg.noise;
                        let val = bgc[ch] * (1.0 - m) + fgc[ch] * m + noise;
                        images[[row, py, px, ch]] = val.clamp(0.0, 1.0) as f32;
                    }
                }
            }
            labels.push(k);
            row += 1;
        }
    }
    LabeledDataset::new(images, labels, cfg.classes, cfg.split_tag, cfg.seed)
}
