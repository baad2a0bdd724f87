//! Trigger transforms and dataset poisoning.
//!
//! A [`Trigger`] is a deterministic image-to-image patching transform with
//! mask/pattern/blend parameters and (for the invisible kinds) a norm budget.
//! Applying a trigger computes
//! `clip((1 - mask·α)⊙x + (mask·α)⊙pattern, 0, 1)` where `α` is the blend
//! coefficient for the blend kind and 1 otherwise; inputs are never mutated.

use ndarray::{Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::LabeledDataset;
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    PatchSquare,
    Watermark,
    Blend,
    L0Inv,
    L2Inv,
    SmoothFreq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

/// Kind-specific trigger parameters; the serialized form is the JSON block
/// embedded in experiment configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TriggerSpec {
    PatchSquare {
        side: usize,
        corner: Corner,
        value: f64,
    },
    Watermark {
        opacity: f64,
    },
    Blend {
        alpha: f64,
        pattern_seed: u64,
    },
    L0Inv {
        pixels: usize,
        max_pixels: usize,
        seed: u64,
    },
    L2Inv {
        budget: f64,
        seed: u64,
    },
    SmoothFreq {
        linf_budget: f64,
        bands: usize,
        seed: u64,
    },
}

impl TriggerSpec {
    pub fn kind(&self) -> TriggerKind {
        match self {
            TriggerSpec::PatchSquare { .. } => TriggerKind::PatchSquare,
            TriggerSpec::Watermark { .. } => TriggerKind::Watermark,
            TriggerSpec::Blend { .. } => TriggerKind::Blend,
            TriggerSpec::L0Inv { .. } => TriggerKind::L0Inv,
            TriggerSpec::L2Inv { .. } => TriggerKind::L2Inv,
            TriggerSpec::SmoothFreq { .. } => TriggerKind::SmoothFreq,
        }
    }

    /// Parse from JSON, turning an unrecognized `kind` tag into the typed
    /// error instead of a serde message.
    pub fn parse_json(value: &serde_json::Value) -> Result<TriggerSpec> {
        if let Some(kind) = value.get("kind").and_then(|k| k.as_str()) {
            const KNOWN: [&str; 6] = [
                "patch_square",
                "watermark",
                "blend",
                "l0_inv",
                "l2_inv",
                "smooth_freq",
            ];
            if !KNOWN.contains(&kind) {
                return Err(Error::UnknownTriggerKind(kind.to_string()));
            }
        }
        serde_json::from_value(value.clone()).map_err(|e| Error::Config(format!("trigger: {e}")))
    }
}

/// A concrete trigger over a fixed image shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub kind: TriggerKind,
    pattern: Array3<f32>,
    mask: Array3<f32>,
    pub blend_alpha: f32,
    pub norm_budget: f32,
}

impl Trigger {
    pub fn pattern(&self) -> &Array3<f32> {
        &self.pattern
    }

    pub fn mask(&self) -> &Array3<f32> {
        &self.mask
    }

    /// Effective blend coefficient: `blend_alpha` for the blend kind, 1
    /// otherwise.
    pub fn alpha_effective(&self) -> f32 {
        match self.kind {
            TriggerKind::Blend => self.blend_alpha,
            _ => 1.0,
        }
    }

    /// Number of pixel positions with a nonzero mask in any channel.
    pub fn nonzero_mask_pixels(&self) -> usize {
        let (h, w, _c) = dims(&self.mask);
        let mut count = 0usize;
        for y in 0..h {
            for x in 0..w {
                if self.mask.slice(ndarray::s![y, x, ..]).iter().any(|&m| m != 0.0) {
                    count += 1;
                }
            }
        }
        count
    }

    /// L2 norm of mask⊙pattern.
    pub fn masked_pattern_norm(&self) -> f64 {
        self.mask
            .iter()
            .zip(self.pattern.iter())
            .map(|(&m, &p)| {
                let v = f64::from(m) * f64::from(p);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Check kind invariants.
    pub fn validate(&self) -> Result<()> {
        if self
            .mask
            .iter()
            .any(|&m| !(0.0..=1.0).contains(&m) || !m.is_finite())
        {
            return Err(Error::BudgetViolated("mask entries must lie in [0,1]".into()));
        }
        match self.kind {
            TriggerKind::L0Inv => {
                let count = self.nonzero_mask_pixels();
                if count as f32 > self.norm_budget {
                    return Err(Error::BudgetViolated(format!(
                        "l0 mask pixels {count} > budget {}",
                        self.norm_budget
                    )));
                }
            }
            TriggerKind::L2Inv => {
                let norm = self.masked_pattern_norm();
                if norm > f64::from(self.norm_budget) + 1e-6 {
                    return Err(Error::BudgetViolated(format!(
                        "l2 masked pattern norm {norm} > budget {}",
                        self.norm_budget
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

fn dims(a: &Array3<f32>) -> (usize, usize, usize) {
    let s = a.shape();
    (s[0], s[1], s[2])
}

/// Low-band inverse-DCT field, normalized to unit max-abs, deterministic in
/// the seed.
fn low_band_field(h: usize, w: usize, bands: usize, seed: u64) -> Vec<f64> {
    let mut rng = seeds::rng(seed, "smooth-freq", 0);
    let mut coeffs = Vec::new();
    for i in 0..=bands {
        for j in 0..=bands {
            if i + j == 0 || i + j > bands {
                continue;
            }
            let c: f64 = rng.random_range(-1.0..1.0);
            coeffs.push((i, j, c));
        }
    }
    let mut field = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for &(i, j, c) in &coeffs {
                s += c
                    * (std::f64::consts::PI * (2.0 * y as f64 + 1.0) * i as f64
                        / (2.0 * h as f64))
                        .cos()
                    * (std::f64::consts::PI * (2.0 * x as f64 + 1.0) * j as f64
                        / (2.0 * w as f64))
                        .cos();
            }
            field[y * w + x] = s;
        }
    }
    let max = field.iter().fold(0.0f64, |m, &v| m.max(v.abs())).max(1e-12);
    for v in &mut field {
        *v /= max;
    }
    field
}

/// Smooth random field in [0,1] for the l2 pattern.
fn smooth_unit_field(h: usize, w: usize, c: usize, seed: u64) -> Array3<f32> {
    let field = low_band_field(h, w, 4, seed);
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
        let v = 0.5 + 0.5 * field[y * w + x];
        // small per-channel modulation keeps the pattern colored
        let m = 1.0 - 0.1 * ch as f64;
        (v * m).clamp(0.0, 1.0) as f32
    })
}

/// Construct a trigger for the given image shape; deterministic in params.
pub fn make_trigger(spec: &TriggerSpec, shape: (usize, usize, usize)) -> Result<Trigger> {
    let (h, w, c) = shape;
    let zero = || Array3::<f32>::zeros((h, w, c));
    let trigger = match *spec {
        TriggerSpec::PatchSquare { side, corner, value } => {
            if side > h || side > w {
                return Err(Error::BudgetViolated(format!(
                    "patch side {side} exceeds image {h}x{w}"
                )));
            }
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("patch value {value} outside [0,1]")));
            }
            let (y0, x0) = match corner {
                Corner::TopLeft => (0, 0),
                Corner::TopRight => (0, w - side),
                Corner::BottomLeft => (h - side, 0),
                Corner::BottomRight => (h - side, w - side),
            };
            let mut mask = zero();
            let mut pattern = zero();
            for y in y0..y0 + side {
                for x in x0..x0 + side {
                    for ch in 0..c {
                        mask[[y, x, ch]] = 1.0;
                        pattern[[y, x, ch]] = value as f32;
                    }
                }
            }
            Trigger {
                kind: TriggerKind::PatchSquare,
                pattern,
                mask,
                blend_alpha: 1.0,
                norm_budget: 0.0,
            }
        }
        TriggerSpec::Watermark { opacity } => {
            if !(0.0..=1.0).contains(&opacity) {
                return Err(Error::Config(format!("opacity {opacity} outside [0,1]")));
            }
            let mut mask = zero();
            let pattern = Array3::<f32>::ones((h, w, c));
            for y in 0..h {
                for x in 0..w {
                    // sparse diagonal lattice across the whole image
                    let on_lattice = (y + x) % 8 < 2 || (y + w - x) % 11 < 1;
                    if on_lattice {
                        for ch in 0..c {
                            mask[[y, x, ch]] = opacity as f32;
                        }
                    }
                }
            }
            Trigger {
                kind: TriggerKind::Watermark,
                pattern,
                mask,
                blend_alpha: 1.0,
                norm_budget: 0.0,
            }
        }
        TriggerSpec::Blend { alpha, pattern_seed } => {
            if !(0.0..=1.0).contains(&alpha) {
                return Err(Error::Config(format!("alpha {alpha} outside [0,1]")));
            }
            let pattern = smooth_unit_field(h, w, c, pattern_seed);
            Trigger {
                kind: TriggerKind::Blend,
                pattern,
                mask: Array3::<f32>::ones((h, w, c)),
                blend_alpha: alpha as f32,
                norm_budget: 0.0,
            }
        }
        TriggerSpec::L0Inv { pixels, max_pixels, seed } => {
            if pixels > max_pixels {
                return Err(Error::BudgetViolated(format!(
                    "requested {pixels} pixels > budget {max_pixels}"
                )));
            }
            if pixels > h * w {
                return Err(Error::BudgetViolated(format!(
                    "requested {pixels} pixels > image size {}",
                    h * w
                )));
            }
            let mut rng = seeds::rng(seed, "l0-inv", 0);
            let mut chosen = std::collections::BTreeSet::new();
            while chosen.len() < pixels {
                let y = rng.random_range(0..h);
                let x = rng.random_range(0..w);
                chosen.insert((y, x));
            }
            let mut mask = zero();
            let mut pattern = zero();
            for (i, &(y, x)) in chosen.iter().enumerate() {
                let v = if i % 2 == 0 { 1.0 } else { 0.0 };
                for ch in 0..c {
                    mask[[y, x, ch]] = 1.0;
                    pattern[[y, x, ch]] = v;
                }
            }
            Trigger {
                kind: TriggerKind::L0Inv,
                pattern,
                mask,
                blend_alpha: 1.0,
                norm_budget: max_pixels as f32,
            }
        }
        TriggerSpec::L2Inv { budget, seed } => {
            if budget <= 0.0 {
                return Err(Error::Config(format!("l2 budget must be positive, got {budget}")));
            }
            let mut pattern = smooth_unit_field(h, w, c, seed);
            let norm = pattern
                .iter()
                .map(|&v| f64::from(v) * f64::from(v))
                .sum::<f64>()
                .sqrt();
            if norm > budget {
                let scale = (budget / norm) as f32;
                pattern.mapv_inplace(|v| v * scale);
            }
            // self-masking keeps the per-image change within the budget for
            // every input in [0,1]
            let mask = pattern.clone();
            Trigger {
                kind: TriggerKind::L2Inv,
                pattern,
                mask,
                blend_alpha: 1.0,
                norm_budget: budget as f32,
            }
        }
        TriggerSpec::SmoothFreq { linf_budget, bands, seed } => {
            if !(0.0..=1.0).contains(&linf_budget) {
                return Err(Error::Config(format!(
                    "linf budget {linf_budget} outside [0,1]"
                )));
            }
            let field = low_band_field(h, w, bands.max(1), seed);
            let mut mask = zero();
            let mut pattern = zero();
            for y in 0..h {
                for x in 0..w {
                    let s = field[y * w + x] * linf_budget;
                    for ch in 0..c {
                        mask[[y, x, ch]] = s.abs() as f32;
                        pattern[[y, x, ch]] = if s > 0.0 { 1.0 } else { 0.0 };
                    }
                }
            }
            Trigger {
                kind: TriggerKind::SmoothFreq,
                pattern,
                mask,
                blend_alpha: 1.0,
                norm_budget: linf_budget as f32,
            }
        }
    };
    trigger.validate()?;
    Ok(trigger)
}

/// Apply a trigger to one image.
pub fn apply_trigger(x: &ArrayView3<f32>, t: &Trigger) -> Result<Array3<f32>> {
    if x.shape() != t.mask.shape() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", t.mask.shape()),
            got: format!("{:?}", x.shape()),
        });
    }
    let alpha = t.alpha_effective();
    let mut out = Array3::<f32>::zeros(t.mask.raw_dim());
    ndarray::Zip::from(&mut out)
        .and(x)
        .and(&t.mask)
        .and(&t.pattern)
        .for_each(|o, &xv, &m, &p| {
            let ma = m * alpha;
            *o = ((1.0 - ma) * xv + ma * p).clamp(0.0, 1.0);
        });
    Ok(out)
}

/// Poisoning parameters: target class and poison rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoisonSpec {
    pub target_class: usize,
    pub rate: f64,
    pub seed: u64,
}

/// Result of poisoning: the modified dataset, a flag per index marking which
/// samples were modified, and an optional warning.
#[derive(Debug, Clone)]
pub struct PoisonOutcome {
    pub dataset: LabeledDataset,
    pub flags: Vec<bool>,
    pub warning: Option<String>,
}

/// Inject `⌊rate·n⌋` triggered, target-labeled samples, chosen by seed among
/// samples not already labeled with the target class. Unflagged samples are
/// preserved bit-exactly.
pub fn poison_dataset(
    ds: &LabeledDataset,
    t: &Trigger,
    spec: &PoisonSpec,
) -> Result<PoisonOutcome> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if spec.target_class >= ds.class_count() {
        return Err(Error::LabelOutOfRange {
            label: spec.target_class as i64,
            class_count: ds.class_count(),
        });
    }
    if !(0.0..=1.0).contains(&spec.rate) {
        return Err(Error::Config(format!("rate {} outside [0,1]", spec.rate)));
    }
    let n = ds.len();
    let count = (spec.rate * n as f64).floor() as usize;
    let mut warning = None;
    if count == 0 && spec.rate > 0.0 {
        warning = Some(format!(
            "rate {} on {n} samples rounds to zero poisoned samples",
            spec.rate
        ));
    }
    let mut eligible: Vec<usize> = (0..n)
        .filter(|&i| ds.labels()[i] != spec.target_class)
        .collect();
    if count > eligible.len() {
        return Err(Error::Config(format!(
            "cannot poison {count} samples: only {} eligible (non-target)",
            eligible.len()
        )));
    }
    use rand::seq::SliceRandom;
    let mut rng = seeds::rng(spec.seed, "poison-choice", 0);
    eligible.shuffle(&mut rng);
    let chosen = &eligible[..count];

    let mut out = ds.clone();
    let mut flags = vec![false; n];
    for &i in chosen {
        let patched = apply_trigger(&ds.image(i), t)?;
        out.set_image(i, &patched);
        out.set_label(i, spec.target_class);
        flags[i] = true;
    }
    Ok(PoisonOutcome {
        dataset: out,
        flags,
        warning,
    })
}

#[cfg(test)]
mod tests;
