//! Stability analyses and trigger-recovery probes.
//!
//! Everything here reads frozen model snapshots: perturbation-scaling
//! curves, parameter-gradient-norm histograms, local loss landscapes, the
//! binary trigger detector with its accuracy gate, and the latent push that
//! tries (and, per the recovery experiments, fails) to steer decoded samples
//! onto poisoned targets.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Checkpoint, Container, LabeledDataset, SplitTag};
use crate::defense::{synthesize_trigger, DefenseConfig};
use crate::error::{Error, Result};
use crate::nn;
use crate::prior::GenerativePrior;
use crate::seeds;
use crate::victim::{
    evaluate_acc, param_grad_norm, train_classifier, ArchSpec, Classifier, ConvSpec, TrainConfig,
};

pub mod emit;

/// Misprediction rate as a function of perturbation scale.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub scales: Vec<f64>,
    pub misprediction_rate: Vec<f64>,
    pub base_set_tag: String,
    /// Set when the synthesized perturbation was exactly zero and the curve
    /// degenerates to the baseline error at every scale.
    pub zero_uap: bool,
}

impl StabilityCurve {
    /// Smallest scale whose misprediction rate reaches `level`, if any.
    pub fn crossing_scale(&self, level: f64) -> Option<f64> {
        self.scales
            .iter()
            .zip(&self.misprediction_rate)
            .find(|(_, &r)| r >= level)
            .map(|(&s, _)| s)
    }
}

/// Synthesize a perturbation on the base set, normalize it to unit L2, and
/// report the misprediction rate of `clip(x + s·δ̂)` for each scale
/// (ascending). Misprediction counts predictions differing from ground-truth
/// labels.
pub fn uap_scaling_curve(
    c: &Classifier,
    base: &LabeledDataset,
    scales: &[f64],
    cfg: &DefenseConfig,
    tag: &str,
) -> Result<StabilityCurve> {
    if base.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if scales.is_empty() {
        return Err(Error::Config("scales must be nonempty".into()));
    }
    let (mut delta, norm) = synthesize_trigger(c, base, cfg)?;
    let zero_uap = norm == 0.0;
    if !zero_uap {
        for v in &mut delta {
            *v /= norm;
        }
    }
    let mut sorted = scales.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let x = base.to_f64_matrix();
    let labels = base.labels();
    let mut rates = Vec::with_capacity(sorted.len());
    for &s in &sorted {
        let mut xp = x.clone();
        for mut row in xp.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v + s * delta[j]).clamp(0.0, 1.0);
            }
        }
        let preds = c.predict_batch(&xp);
        let miss = preds
            .iter()
            .zip(labels)
            .filter(|(p, y)| p != y)
            .count();
        rates.push(miss as f64 / labels.len() as f64);
    }
    Ok(StabilityCurve {
        scales: sorted,
        misprediction_rate: rates,
        base_set_tag: tag.to_string(),
        zero_uap,
    })
}

/// Histogram of per-sample parameter-gradient norms for one named set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradNormHistogram {
    pub name: String,
    /// Upper bin edges; the final count bucket collects overflow.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub median: f64,
    pub values: Vec<f64>,
}

/// Per-set histograms of `‖∇_θ L(f_θ(x), y)‖₁` with medians.
pub fn grad_norm_histogram(
    c: &Classifier,
    sets: &[(String, &LabeledDataset)],
    edges: &[f64],
) -> Result<Vec<GradNormHistogram>> {
    if edges.is_empty() {
        return Err(Error::Config("bin edge list must be nonempty".into()));
    }
    if sets.is_empty() {
        return Err(Error::Config("need at least one sample set".into()));
    }
    let mut out = Vec::with_capacity(sets.len());
    for (name, ds) in sets {
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut values = Vec::with_capacity(ds.len());
        for i in 0..ds.len() {
            values.push(param_grad_norm(c, &ds.image_f64(i), ds.labels()[i])?);
        }
        let mut counts = vec![0usize; edges.len() + 1];
        for &v in &values {
            let slot = edges
                .iter()
                .position(|&e| v < e)
                .unwrap_or(edges.len());
            counts[slot] += 1;
        }
        let mut sorted = values.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if sorted.len() % 2 == 1 {
            sorted[sorted.len() / 2]
        } else {
            0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
        };
        out.push(GradNormHistogram {
            name: name.clone(),
            edges: edges.to_vec(),
            counts,
            median,
            values,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LandscapeMode {
    Data,
    Param,
}

/// Loss surface on a (2m+1)² grid spanned by two seeded random unit
/// directions in data or parameter space. The center cell is the exact
/// unperturbed loss.
pub fn loss_landscape(
    c: &Classifier,
    x: &[f64],
    y: usize,
    mode: LandscapeMode,
    m: usize,
    step: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if m < 1 {
        return Err(Error::Config("grid half-width must be at least 1".into()));
    }
    let dim = match mode {
        LandscapeMode::Data => x.len(),
        LandscapeMode::Param => c.params().len(),
    };
    let u = random_unit(dim, seed, "landscape-u");
    let v = random_unit(dim, seed, "landscape-v");
    let side = 2 * m + 1;
    let mut grid = Array2::<f64>::zeros((side, side));
    for i in 0..side {
        for j in 0..side {
            let a = (i as f64 - m as f64) * step;
            let b = (j as f64 - m as f64) * step;
            let loss = match mode {
                LandscapeMode::Data => {
                    let xp: Vec<f64> = x
                        .iter()
                        .enumerate()
                        .map(|(k, &xv)| xv + a * u[k] + b * v[k])
                        .collect();
                    nn::softmax_ce_grad(&c.logits(&xp), y).0
                }
                LandscapeMode::Param => {
                    let mut shifted = c.clone();
                    for (k, p) in shifted.params_mut().iter_mut().enumerate() {
                        *p += a * u[k] + b * v[k];
                    }
                    nn::softmax_ce_grad(&shifted.logits(x), y).0
                }
            };
            grid[[i, j]] = loss;
        }
    }
    Ok(grid)
}

fn random_unit(dim: usize, seed: u64, tag: &str) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = seeds::rng(seed, tag, 0);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    for x in &mut v {
        *x /= norm;
    }
    v
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
    /// Held-out accuracy required before the detector may be used.
    pub accuracy_gate: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            epochs: 60,
            batch_size: 32,
            lr: 2e-3,
            seed: 0,
            holdout_fraction: 0.25,
            accuracy_gate: 0.99,
        }
    }
}

/// Binary trigger detector. Construction enforces the held-out accuracy
/// gate, so every detector that exists may be used downstream.
#[derive(Debug, Clone)]
pub struct Detector {
    classifier: Classifier,
    pub held_out_accuracy: f64,
}

impl Detector {
    /// Fraction of images flagged as triggered.
    pub fn detection_rate(&self, images: &Array2<f64>) -> f64 {
        if images.nrows() == 0 {
            return 0.0;
        }
        let preds = self.classifier.predict_batch(images);
        preds.iter().filter(|&&p| p == 1).count() as f64 / preds.len() as f64
    }
}

/// Train a clean-vs-triggered binary classifier and gate it on held-out
/// accuracy; below the gate is a typed error and no detector exists.
pub fn train_trigger_detector(
    clean_images: &Array2<f64>,
    triggered_images: &Array2<f64>,
    image_shape: (usize, usize, usize),
    cfg: &DetectorConfig,
) -> Result<Detector> {
    if clean_images.nrows() == 0 || triggered_images.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    let (h, w, c) = image_shape;
    let n = clean_images.nrows() + triggered_images.nrows();
    let mut arr = ndarray::Array4::<f32>::zeros((n, h, w, c));
    let mut labels = Vec::with_capacity(n);
    let mut row = 0usize;
    for (mat, label) in [(clean_images, 0usize), (triggered_images, 1usize)] {
        for r in mat.rows() {
            for (j, &v) in r.iter().enumerate() {
                let (yy, rest) = (j / (w * c), j % (w * c));
                arr[[row, yy, rest / c, rest % c]] = (v.clamp(0.0, 1.0)) as f32;
            }
            labels.push(label);
            row += 1;
        }
    }
    let ds = LabeledDataset::new(arr, labels, 2, SplitTag::Train, cfg.seed)?;
    let (holdout, train) = crate::datamodel::split(&ds, cfg.holdout_fraction, cfg.seed)?;
    // padded strides: a trigger in any image corner stays visible to the
    // deeper layers
    let arch = ArchSpec {
        input: image_shape,
        conv: vec![
            ConvSpec { out_ch: 8, k: 5, stride: 2, pad: 2 },
            ConvSpec { out_ch: 16, k: 3, stride: 2, pad: 1 },
        ],
        hidden: vec![32],
        classes: 2,
    };
    let classifier = train_classifier(
        &train,
        &arch,
        &TrainConfig {
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            lr: cfg.lr,
            seed: cfg.seed,
        },
    )?;
    let held_out_accuracy = evaluate_acc(&classifier, &holdout)?.acc;
    if held_out_accuracy < cfg.accuracy_gate {
        return Err(Error::DetectorGate {
            accuracy: held_out_accuracy,
            gate: cfg.accuracy_gate,
        });
    }
    Ok(Detector {
        classifier,
        held_out_accuracy,
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MsePushConfig {
    pub steps: usize,
    pub lr: f64,
}

impl Default for MsePushConfig {
    fn default() -> Self {
        MsePushConfig { steps: 150, lr: 0.05 }
    }
}

/// Descend `mean((G(z) - target)²)` per (latent, target) pair; returns the
/// optimized latents and the final per-pair mean squared errors.
pub fn mse_push(
    prior: &GenerativePrior,
    latents: &Array2<f64>,
    targets: &Array2<f64>,
    cfg: &MsePushConfig,
) -> Result<(Array2<f64>, Vec<f64>)> {
    if latents.nrows() != targets.nrows() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} targets", latents.nrows()),
            got: format!("{}", targets.nrows()),
        });
    }
    let d = prior.image_len();
    if targets.ncols() != d {
        return Err(Error::ShapeMismatch {
            expected: format!("target dim {d}"),
            got: format!("{}", targets.ncols()),
        });
    }
    let mut z = latents.clone();
    let scale = 1.0 / d as f64;
    for _ in 0..cfg.steps {
        let acts = prior.generator_net().forward(prior.generator_params(), &z);
        let imgs = acts.last().unwrap();
        let diff = imgs - targets;
        let d_img = diff.mapv(|v| 2.0 * v * scale);
        let (_, dz) = prior
            .generator_net()
            .backward(prior.generator_params(), &acts, &d_img, false, true);
        z -= &(dz.unwrap() * cfg.lr);
    }
    let final_imgs = prior.sample_batch(&z)?;
    let mses = (0..z.nrows())
        .map(|i| {
            final_imgs
                .row(i)
                .iter()
                .zip(targets.row(i))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                * scale
        })
        .collect();
    Ok((z, mses))
}

impl Checkpoint for Detector {
    const KIND: &'static str = "detector";

    fn to_container(&self) -> Container {
        let inner = self.classifier.to_container();
        let mut c = Container::new(
            Self::KIND,
            serde_json::json!({
                "arch": self.classifier.arch(),
                "train_log": self.classifier.train_log,
                "held_out_accuracy": self.held_out_accuracy,
            }),
        );
        c.push("params", inner.get("params").unwrap().clone());
        c
    }

    fn from_container(c: &Container) -> Result<Self> {
        let arch: ArchSpec = c.meta_field("arch")?;
        let train_log: crate::victim::TrainLog = c.meta_field("train_log")?;
        let held_out_accuracy: f64 = c.meta_field("held_out_accuracy")?;
        let params = c.get("params")?.as_f64()?.to_vec();
        let classifier = Classifier::from_params(arch, params, train_log)?;
        Ok(Detector {
            classifier,
            held_out_accuracy,
        })
    }
}
