//! Victim classifiers: training, evaluation, and the gradient and feature
//! views that the inversion losses build on.
//!
//! The loss is cross-entropy over softmax logits throughout. Per-sample
//! parameter gradients are computed exactly by the shared engine, spanning
//! every trainable parameter.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attacks::{apply_trigger, Trigger};
use crate::datamodel::{Buffer, Checkpoint, Container, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, Feat, LayerSpec, Network};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Architecture description: a stack of tanh convolution blocks, tanh hidden
/// dense layers, and a final affine map to class logits. The penultimate
/// feature `g(x)` is the input to that final map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input: (usize, usize, usize),
    pub conv: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub classes: usize,
}

impl ArchSpec {
    /// Desk-scale CNN for 32x32 inputs, ~100k parameters. Padded strides
    /// keep every pixel inside the receptive field of the deeper layers.
    pub fn desk(classes: usize) -> ArchSpec {
        ArchSpec {
            input: (32, 32, 3),
            conv: vec![
                ConvSpec { out_ch: 12, k: 5, stride: 2, pad: 2 },
                ConvSpec { out_ch: 24, k: 5, stride: 2, pad: 2 },
            ],
            hidden: vec![64],
            classes,
        }
    }

    /// Pure linear softmax model over flattened pixels.
    pub fn linear(input: (usize, usize, usize), classes: usize) -> ArchSpec {
        ArchSpec {
            input,
            conv: vec![],
            hidden: vec![],
            classes,
        }
    }

    /// Build the network; also returns the boundary index of the penultimate
    /// feature (the activation entering the final dense layer).
    pub fn build(&self) -> Result<(Network, usize)> {
        let (h, w, c) = self.input;
        let mut specs = Vec::new();
        for cv in &self.conv {
            specs.push(LayerSpec::Conv {
                out_ch: cv.out_ch,
                k: cv.k,
                stride: cv.stride,
                pad: cv.pad,
            });
            specs.push(LayerSpec::Tanh);
        }
        specs.push(LayerSpec::Flatten);
        for &n in &self.hidden {
            specs.push(LayerSpec::Dense { out: n });
            specs.push(LayerSpec::Tanh);
        }
        let penult = specs.len();
        specs.push(LayerSpec::Dense { out: self.classes });
        let net = Network::new(Feat::Image { h, w, c }, &specs)?;
        Ok((net, penult))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub seed: u64,
    /// Which parameters per-sample gradients span.
    pub grad_scope: String,
}

/// A trained (possibly poisoned) classifier.
#[derive(Debug, Clone)]
pub struct Classifier {
    arch: ArchSpec,
    net: Network,
    penult: usize,
    params: Vec<f64>,
    pub train_log: TrainLog,
}

impl Classifier {
    pub fn from_params(arch: ArchSpec, params: Vec<f64>, train_log: TrainLog) -> Result<Classifier> {
        let (net, penult) = arch.build()?;
        if params.len() != net.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} parameters", net.param_count()),
                got: format!("{}", params.len()),
            });
        }
        Ok(Classifier {
            arch,
            net,
            penult,
            params,
            train_log,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Vec<f64> {
        &mut self.params
    }

    pub fn class_count(&self) -> usize {
        self.arch.classes
    }

    /// Boundary index of the penultimate feature in the activation list.
    pub fn penultimate_boundary(&self) -> usize {
        self.penult
    }

    pub fn input_len(&self) -> usize {
        let (h, w, c) = self.arch.input;
        h * w * c
    }

    /// Logits for a batch of flat images.
    pub fn logits_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let acts = self.net.forward(&self.params, x);
        acts.into_iter().next_back().expect("output activation")
    }

    /// Logits for one flat image.
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let xa = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        self.logits_batch(&xa).row(0).to_vec()
    }

    /// Penultimate feature g(x).
    pub fn features(&self, x: &[f64]) -> Vec<f64> {
        let xa = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        let acts = self.net.forward(&self.params, &xa);
        acts[self.penult].row(0).to_vec()
    }

    pub fn predict_batch(&self, x: &Array2<f64>) -> Vec<usize> {
        let logits = self.logits_batch(x);
        logits
            .rows()
            .into_iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap()
            })
            .collect()
    }

    /// Exact per-sample gradient of the cross-entropy at (x, y) with respect
    /// to all parameters.
    pub fn param_grad(&self, x: &[f64], y: usize) -> Result<Vec<f64>> {
        let xa = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row");
        let acts = self.net.forward(&self.params, &xa);
        let logits = acts.last().unwrap().row(0);
        let (_, dlogits) = nn::softmax_ce_grad(logits.as_slice().unwrap(), y);
        let seed_grad = Array2::from_shape_vec((1, dlogits.len()), dlogits).unwrap();
        let (gp, _) = self.net.backward(&self.params, &acts, &seed_grad, true, false);
        let g = gp.unwrap();
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "per-sample parameter gradient".into(),
            });
        }
        Ok(g)
    }
}

/// L1 norm of the per-sample parameter gradient of the loss at (x, y).
pub fn param_grad_norm(c: &Classifier, x: &[f64], y: usize) -> Result<f64> {
    Ok(nn::l1_norm(&c.param_grad(x, y)?))
}

/// Train a classifier; deterministic given the seed.
pub fn train_classifier(
    ds: &LabeledDataset,
    arch: &ArchSpec,
    cfg: &TrainConfig,
) -> Result<Classifier> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if ds.class_count() > arch.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, architecture {}",
            ds.class_count(),
            arch.classes
        )));
    }
    let (net, penult) = arch.build()?;
    let mut rng = seeds::rng(cfg.seed, "victim-init", 0);
    let mut params = net.init_params(&mut rng);
    let mut opt = Adam::new(cfg.lr, 0.9, 0.999, params.len());
    let all = ds.to_f64_matrix();
    let labels = ds.labels();
    let n = ds.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog {
        seed: cfg.seed,
        grad_scope: "all trainable parameters".into(),
        ..TrainLog::default()
    };
    let mut iteration = 0usize;
    for epoch in 0..cfg.epochs {
        use rand::seq::SliceRandom;
        let mut erng = seeds::rng(cfg.seed, "victim-epoch", epoch as u64);
        order.shuffle(&mut erng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = gather_rows(&all, chunk);
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let acts = net.forward(&params, &xb);
            let (loss, dlogits) = nn::batch_cross_entropy(acts.last().unwrap(), &yb);
            if !loss.is_finite() {
                return Err(Error::Divergence { iteration });
            }
            let (gp, _) = net.backward(&params, &acts, &dlogits, true, false);
            opt.step(&mut params, &gp.unwrap());
            epoch_loss += loss;
            batches += 1;
            iteration += 1;
        }
        log.epoch_losses.push(epoch_loss / batches.max(1) as f64);
    }
    log.final_loss = log.epoch_losses.last().copied().unwrap_or(0.0);
    Ok(Classifier {
        arch: arch.clone(),
        net,
        penult,
        params,
        train_log: log,
    })
}

pub(crate) fn gather_rows(all: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let d = all.ncols();
    let mut out = Array2::<f64>::zeros((idx.len(), d));
    for (row, &i) in idx.iter().enumerate() {
        out.row_mut(row).assign(&all.row(i));
    }
    out
}

/// Accuracy / attack-success metrics over a dataset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub acc: f64,
    pub asr: f64,
    pub per_class_acc: Vec<f64>,
    pub n_eval: usize,
}

/// Clean accuracy: fraction of samples predicted as their own label.
pub fn evaluate_acc(c: &Classifier, ds: &LabeledDataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let preds = c.predict_batch(&ds.to_f64_matrix());
    let mut per_class_hit = vec![0usize; ds.class_count()];
    let mut per_class_n = vec![0usize; ds.class_count()];
    let mut hits = 0usize;
    for (i, &p) in preds.iter().enumerate() {
        let y = ds.labels()[i];
        per_class_n[y] += 1;
        if p == y {
            hits += 1;
            per_class_hit[y] += 1;
        }
    }
    Ok(EvalReport {
        acc: hits as f64 / ds.len() as f64,
        asr: 0.0,
        per_class_acc: per_class_hit
            .iter()
            .zip(&per_class_n)
            .map(|(&h, &n)| if n == 0 { 0.0 } else { h as f64 / n as f64 })
            .collect(),
        n_eval: ds.len(),
    })
}

/// Attack success rate: over non-target-class samples only, each patched by
/// the trigger, the fraction predicted as the target class.
pub fn evaluate_asr(
    c: &Classifier,
    ds: &LabeledDataset,
    t: &Trigger,
    target_class: usize,
) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let idx: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.labels()[i] != target_class)
        .collect();
    if idx.is_empty() {
        return Err(Error::OnlyTargetClass);
    }
    let d = c.input_len();
    let mut xb = Array2::<f64>::zeros((idx.len(), d));
    for (row, &i) in idx.iter().enumerate() {
        let patched = apply_trigger(&ds.image(i), t)?;
        for (col, &v) in patched.iter().enumerate() {
            xb[[row, col]] = f64::from(v);
        }
    }
    let preds = c.predict_batch(&xb);
    let hits = preds.iter().filter(|&&p| p == target_class).count();
    Ok(EvalReport {
        acc: 0.0,
        asr: hits as f64 / idx.len() as f64,
        per_class_acc: vec![],
        n_eval: idx.len(),
    })
}

impl Checkpoint for Classifier {
    const KIND: &'static str = "classifier";

    fn to_container(&self) -> Container {
        let mut c = Container::new(
            Self::KIND,
            serde_json::json!({
                "arch": self.arch,
                "train_log": self.train_log,
                "input_range": "[0,1]",
            }),
        );
        c.push(
            "params",
            Buffer::F64(self.params.clone(), vec![self.params.len()]),
        );
        c
    }

    fn from_container(c: &Container) -> Result<Self> {
        let arch: ArchSpec = c.meta_field("arch")?;
        let train_log: TrainLog = c.meta_field("train_log")?;
        let params = c.get("params")?.as_f64()?.to_vec();
        Classifier::from_params(arch, params, train_log)
    }
}
