//! Inversion losses and data synthesis.
//!
//! Three synthesis routes share this module: plain pixel-space inversion,
//! latent-space inversion under a generative prior, and the stabilized
//! variant that additionally penalizes parameter-gradient magnitude
//! (model-perturbation loss), output sensitivity to a co-optimized universal
//! perturbation (data-perturbation loss), and, optionally, feature distance
//! to a handful of clean references (consistency loss).
//!
//! The stabilized loop alternates, per class and iteration: a temporary
//! latent step on the data-perturbation loss alone, an ascent step on the
//! shared perturbation at the temporary latents, and a descent step on the
//! full weighted objective at the updated perturbation.

use ndarray::{Array2, Array3};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{
    Buffer, Checkpoint, Container, ExperimentConfig, LabeledDataset, SplitTag,
};
use crate::error::{Error, Result};
use crate::nn;
use crate::prior::GenerativePrior;
use crate::seeds;
use crate::victim::Classifier;

/// Weights of the synthesis objective: classification, model-perturbation,
/// feature-consistency, data-perturbation. The prior term always has unit
/// weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64, lambda4: f64) -> Result<LossWeights> {
        let w = LossWeights {
            lambda1,
            lambda2,
            lambda3,
            lambda4,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be nonnegative and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Result<LossWeights> {
        LossWeights::new(cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.lambda4)
    }
}

/// Values of the individual objective terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub prior: f64,
    pub cl: f64,
    pub mp: f64,
    pub con: f64,
    pub dp: f64,
}

/// Weighted sum `prior + λ1·cl + λ2·mp + λ3·con + λ4·dp`; a non-finite
/// component is a typed error naming the term.
pub fn total_loss(w: &LossWeights, comp: &LossComponents) -> Result<f64> {
    for (name, v) in [
        ("prior", comp.prior),
        ("cl", comp.cl),
        ("mp", comp.mp),
        ("con", comp.con),
        ("dp", comp.dp),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                context: format!("loss term {name}"),
            });
        }
    }
    Ok(comp.prior + w.lambda1 * comp.cl + w.lambda2 * comp.mp + w.lambda3 * comp.con
        + w.lambda4 * comp.dp)
}

// ---------------------------------------------------------------------------
// individual losses (values and gradients)
// ---------------------------------------------------------------------------

fn single_row(x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row")
}

/// Classification loss: cross-entropy of the classifier at (x, y).
pub fn loss_cl(c: &Classifier, x: &[f64], y: usize) -> f64 {
    nn::softmax_ce_grad(&c.logits(x), y).0
}

/// Classification loss with its pixel gradient.
pub fn loss_cl_grad_x(c: &Classifier, x: &[f64], y: usize) -> (f64, Vec<f64>) {
    let xa = single_row(x);
    let acts = c.network().forward(c.params(), &xa);
    let (loss, dlogits) = nn::softmax_ce_grad(acts.last().unwrap().row(0).as_slice().unwrap(), y);
    let seed = single_row(&dlogits);
    let (_, dx) = c.network().backward(c.params(), &acts, &seed, false, true);
    (loss, dx.unwrap().row(0).to_vec())
}

/// Prior loss: negated raw discriminator score of the decoded latent.
pub fn loss_prior(prior: &GenerativePrior, z: &[f64]) -> Result<f64> {
    Ok(-prior.disc_score(&prior.sample(z)?))
}

/// Prior loss with its latent gradient.
pub fn loss_prior_grad_z(prior: &GenerativePrior, z: &[f64]) -> Result<(f64, Vec<f64>)> {
    let za = single_row(z);
    let gen_acts = prior.generator_net().forward(prior.generator_params(), &za);
    let img = gen_acts.last().unwrap();
    let d_acts = prior.discriminator_net().forward(prior.discriminator_params(), img);
    let score = d_acts.last().unwrap()[[0, 0]];
    let seed = Array2::from_shape_vec((1, 1), vec![-1.0]).unwrap();
    let (_, dximg) = prior
        .discriminator_net()
        .backward(prior.discriminator_params(), &d_acts, &seed, false, true);
    let (_, dz) = prior
        .generator_net()
        .backward(prior.generator_params(), &gen_acts, &dximg.unwrap(), false, true);
    Ok((-score, dz.unwrap().row(0).to_vec()))
}

/// Model-perturbation loss at a pixel input: L1 norm of the per-sample
/// parameter gradient of the classification loss.
pub fn loss_mp_at_x(c: &Classifier, x: &[f64], y: usize) -> Result<f64> {
    crate::victim::param_grad_norm(c, x, y)
}

/// Model-perturbation loss at a latent: evaluated at the decoded image.
pub fn loss_mp(c: &Classifier, prior: &GenerativePrior, z: &[f64], y: usize) -> Result<f64> {
    loss_mp_at_x(c, &prior.sample(z)?, y)
}

/// Model-perturbation loss and its exact pixel gradient.
///
/// With `g = ∇_θ L(f_θ(x), y)` and `s = sign(g)` held fixed, the gradient of
/// `‖g‖₁ = sᵀg` w.r.t. `x` equals the input gradient of the θ-directional
/// derivative of the loss along `s`, which the dual pass computes exactly.
pub fn loss_mp_grad_x(c: &Classifier, x: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
    let g = c.param_grad(x, y)?;
    let value = nn::l1_norm(&g);
    let s = nn::sign_vec(&g);
    let xa = single_row(x);
    let (acts, tacts) = c.network().forward_dual(c.params(), &s, &xa);
    let logits = acts.last().unwrap().row(0);
    let tlogits = tacts.last().unwrap().row(0);
    let p = nn::softmax(logits.as_slice().unwrap());
    let dot: f64 = p.iter().zip(&tlogits).map(|(a, b)| a * b).sum();
    // ∂φ/∂logits_j = p_j (ż_j - pᵀż), ∂φ/∂ż = p - e_y
    let d_out: Vec<f64> = p
        .iter()
        .zip(&tlogits)
        .map(|(&pj, &tj)| pj * (tj - dot))
        .collect();
    let mut d_tout = p;
    d_tout[y] -= 1.0;
    let dx = c.network().backward_dual_input(
        c.params(),
        &s,
        &acts,
        &tacts,
        &single_row(&d_out),
        &single_row(&d_tout),
    );
    Ok((value, dx.row(0).to_vec()))
}

/// Model-perturbation loss with its latent gradient.
pub fn loss_mp_grad_z(
    c: &Classifier,
    prior: &GenerativePrior,
    z: &[f64],
    y: usize,
) -> Result<(f64, Vec<f64>)> {
    let za = single_row(z);
    let gen_acts = prior.generator_net().forward(prior.generator_params(), &za);
    let img = gen_acts.last().unwrap().row(0).to_vec();
    let (value, dx) = loss_mp_grad_x(c, &img, y)?;
    let (_, dz) = prior.generator_net().backward(
        prior.generator_params(),
        &gen_acts,
        &single_row(&dx),
        false,
        true,
    );
    Ok((value, dz.unwrap().row(0).to_vec()))
}

/// Data-perturbation loss: negated cosine similarity between the logits of
/// the decoded latent and of its perturbed-then-clipped version.
pub fn loss_dp(
    c: &Classifier,
    prior: &GenerativePrior,
    z: &[f64],
    delta: &[f64],
) -> Result<f64> {
    let x = prior.sample(z)?;
    Ok(loss_dp_at_x(c, &x, delta))
}

/// Data-perturbation loss at a pixel input.
pub fn loss_dp_at_x(c: &Classifier, x: &[f64], delta: &[f64]) -> f64 {
    let xt: Vec<f64> = x
        .iter()
        .zip(delta)
        .map(|(a, d)| (a + d).clamp(0.0, 1.0))
        .collect();
    -nn::cosine_similarity(&c.logits(x), &c.logits(&xt))
}

/// Feature-consistency loss: sum of Euclidean feature distances to the
/// same-class references (zero when no reference matches).
pub fn loss_con(
    c: &Classifier,
    prior: &GenerativePrior,
    z: &[f64],
    refs: &[(Vec<f64>, usize)],
    y: usize,
) -> Result<f64> {
    let x = prior.sample(z)?;
    let feat = c.features(&x);
    let mut total = 0.0;
    for (rx, ry) in refs {
        if *ry != y {
            continue;
        }
        let rf = c.features(rx);
        total += feat
            .iter()
            .zip(&rf)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// batched gradient engine used by the synthesis loops
// ---------------------------------------------------------------------------

/// Batched data-perturbation loss: per-row values, per-row latent gradients,
/// and the batch-mean perturbation gradient.
pub struct DpGrad {
    pub values: Vec<f64>,
    pub dz: Array2<f64>,
    pub ddelta_mean: Vec<f64>,
}

/// Compute the data-perturbation loss and gradients for a batch of latent
/// rows under a shared perturbation.
pub fn loss_dp_batch_grads(
    c: &Classifier,
    prior: &GenerativePrior,
    zs: &Array2<f64>,
    delta: &[f64],
) -> Result<DpGrad> {
    let b = zs.nrows();
    let gen_acts = prior.generator_net().forward(prior.generator_params(), zs);
    let imgs = gen_acts.last().unwrap();
    let d = imgs.ncols();
    assert_eq!(d, delta.len());

    // perturbed branch with clip mask
    let mut imgs_t = imgs.clone();
    let mut clip_open = Array2::<f64>::zeros((b, d));
    for i in 0..b {
        for j in 0..d {
            let v = imgs[[i, j]] + delta[j];
            imgs_t[[i, j]] = v.clamp(0.0, 1.0);
            clip_open[[i, j]] = if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 };
        }
    }

    let acts_u = c.network().forward(c.params(), imgs);
    let acts_v = c.network().forward(c.params(), &imgs_t);
    let logits_u = acts_u.last().unwrap();
    let logits_v = acts_v.last().unwrap();

    let k = logits_u.ncols();
    let mut du = Array2::<f64>::zeros((b, k));
    let mut dv = Array2::<f64>::zeros((b, k));
    let mut values = Vec::with_capacity(b);
    for i in 0..b {
        let u = logits_u.row(i).to_vec();
        let v = logits_v.row(i).to_vec();
        let (cos, gu, gv) = nn::cosine_similarity_grads(&u, &v);
        values.push(-cos);
        for j in 0..k {
            du[[i, j]] = -gu[j];
            dv[[i, j]] = -gv[j];
        }
    }

    let (_, dx_u) = c.network().backward(c.params(), &acts_u, &du, false, true);
    let (_, dx_v) = c.network().backward(c.params(), &acts_v, &dv, false, true);
    let dx_u = dx_u.unwrap();
    let mut dx_v = dx_v.unwrap();
    dx_v.zip_mut_with(&clip_open, |g, &m| *g *= m);

    // δ gradient: mean over rows of the clipped perturbed-branch gradient
    let mut ddelta_mean = vec![0.0; d];
    for i in 0..b {
        for j in 0..d {
            ddelta_mean[j] += dx_v[[i, j]];
        }
    }
    for v in &mut ddelta_mean {
        *v /= b as f64;
    }

    let dx_total = &dx_u + &dx_v;
    let (_, dz) = prior.generator_net().backward(
        prior.generator_params(),
        &gen_acts,
        &dx_total,
        false,
        true,
    );
    Ok(DpGrad {
        values,
        dz: dz.unwrap(),
        ddelta_mean,
    })
}

/// Batched full-objective gradients at a shared perturbation.
pub struct TotalGrad {
    /// Batch means of each term.
    pub components_mean: LossComponents,
    /// Per-row total losses.
    pub totals: Vec<f64>,
    pub dz: Array2<f64>,
}

/// Compute the weighted objective and per-row latent gradients for a batch
/// of latent rows.
pub fn total_loss_batch_grads(
    c: &Classifier,
    prior: &GenerativePrior,
    zs: &Array2<f64>,
    delta: &[f64],
    y: usize,
    w: &LossWeights,
    refs: &[(Vec<f64>, usize)],
) -> Result<TotalGrad> {
    let b = zs.nrows();
    let gen_acts = prior.generator_net().forward(prior.generator_params(), zs);
    let imgs = gen_acts.last().unwrap();
    let d = imgs.ncols();

    // --- classification branch (shared forward with con and dp-u) ---
    let acts_u = c.network().forward(c.params(), imgs);
    let logits_u = acts_u.last().unwrap();
    let k = logits_u.ncols();

    let mut d_logits = Array2::<f64>::zeros((b, k));
    let mut cl_vals = Vec::with_capacity(b);
    for i in 0..b {
        let (loss, g) = nn::softmax_ce_grad(logits_u.row(i).as_slice().unwrap(), y);
        cl_vals.push(loss);
        for j in 0..k {
            d_logits[[i, j]] = w.lambda1 * g[j];
        }
    }

    // --- data-perturbation branch ---
    let mut imgs_t = imgs.clone();
    let mut clip_open = Array2::<f64>::zeros((b, d));
    for i in 0..b {
        for j in 0..d {
            let v = imgs[[i, j]] + delta[j];
            imgs_t[[i, j]] = v.clamp(0.0, 1.0);
            clip_open[[i, j]] = if v > 0.0 && v < 1.0 { 1.0 } else { 0.0 };
        }
    }
    let acts_v = c.network().forward(c.params(), &imgs_t);
    let logits_v = acts_v.last().unwrap();
    let mut dv = Array2::<f64>::zeros((b, k));
    let mut dp_vals = Vec::with_capacity(b);
    for i in 0..b {
        let u = logits_u.row(i).to_vec();
        let v = logits_v.row(i).to_vec();
        let (cos, gu, gv) = nn::cosine_similarity_grads(&u, &v);
        dp_vals.push(-cos);
        for j in 0..k {
            d_logits[[i, j]] += w.lambda4 * -gu[j];
            dv[[i, j]] = w.lambda4 * -gv[j];
        }
    }

    // --- consistency branch (seeded at the penultimate boundary) ---
    let penult = c.penultimate_boundary();
    let feats = &acts_u[penult];
    let nf = feats.ncols();
    let ref_feats: Vec<Vec<f64>> = refs
        .iter()
        .filter(|(_, ry)| *ry == y)
        .map(|(rx, _)| c.features(rx))
        .collect();
    let mut d_feat = Array2::<f64>::zeros((b, nf));
    let mut con_vals = vec![0.0; b];
    if w.lambda3 > 0.0 && !ref_feats.is_empty() {
        for i in 0..b {
            for rf in &ref_feats {
                let diff: Vec<f64> = feats.row(i).iter().zip(rf).map(|(a, b)| a - b).collect();
                let dist = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
                con_vals[i] += dist;
                if dist > 1e-12 {
                    for j in 0..nf {
                        d_feat[[i, j]] += w.lambda3 * diff[j] / dist;
                    }
                }
            }
        }
    }

    // --- prior branch ---
    let d_acts = prior.discriminator_net().forward(prior.discriminator_params(), imgs);
    let scores = d_acts.last().unwrap().column(0).to_vec();
    let prior_vals: Vec<f64> = scores.iter().map(|&s| -s).collect();
    let d_score = Array2::from_shape_vec((b, 1), vec![-1.0; b]).unwrap();
    let (_, dx_prior) = prior.discriminator_net().backward(
        prior.discriminator_params(),
        &d_acts,
        &d_score,
        false,
        true,
    );

    // --- model-perturbation branch (per-row dual pass) ---
    let mut mp_vals = vec![0.0; b];
    let mut dx_mp = Array2::<f64>::zeros((b, d));
    if w.lambda2 > 0.0 {
        for i in 0..b {
            let x = imgs.row(i).to_vec();
            let (v, gx) = loss_mp_grad_x(c, &x, y)?;
            mp_vals[i] = v;
            for j in 0..d {
                dx_mp[[i, j]] = w.lambda2 * gx[j];
            }
        }
    }

    // --- assemble pixel gradient and pull back through the generator ---
    let (_, dx_u) = c.network().backward_from(
        c.params(),
        &acts_u,
        c.network().layer_count(),
        &d_logits,
        false,
        true,
    );
    let mut dx = dx_u.unwrap();
    if w.lambda3 > 0.0 && !ref_feats.is_empty() {
        let (_, dx_con) = c
            .network()
            .backward_from(c.params(), &acts_u, penult, &d_feat, false, true);
        dx += &dx_con.unwrap();
    }
    let (_, dx_v) = c.network().backward(c.params(), &acts_v, &dv, false, true);
    let mut dx_v = dx_v.unwrap();
    dx_v.zip_mut_with(&clip_open, |g, &m| *g *= m);
    dx += &dx_v;
    dx += &dx_prior.unwrap();
    dx += &dx_mp;

    let (_, dz) = prior
        .generator_net()
        .backward(prior.generator_params(), &gen_acts, &dx, false, true);

    let mean = |v: &[f64]| v.iter().sum::<f64>() / b as f64;
    let components_mean = LossComponents {
        prior: mean(&prior_vals),
        cl: mean(&cl_vals),
        mp: mean(&mp_vals),
        con: mean(&con_vals),
        dp: mean(&dp_vals),
    };
    let mut totals = Vec::with_capacity(b);
    for i in 0..b {
        let comp = LossComponents {
            prior: prior_vals[i],
            cl: cl_vals[i],
            mp: mp_vals[i],
            con: con_vals[i],
            dp: dp_vals[i],
        };
        totals.push(total_loss(w, &comp)?);
    }
    Ok(TotalGrad {
        components_mean,
        totals,
        dz: dz.unwrap(),
    })
}

// ---------------------------------------------------------------------------
// baseline inversions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MiConfig {
    pub restarts: usize,
    pub steps: usize,
    pub lr: f64,
    pub seed: u64,
    /// Weight on the classification term (latent-space route only).
    pub lambda1: f64,
}

impl Default for MiConfig {
    fn default() -> Self {
        MiConfig {
            restarts: 20,
            steps: 150,
            lr: 0.05,
            seed: 0,
            lambda1: 1000.0,
        }
    }
}

/// Output of a baseline inversion: one image per restart plus the
/// classification-loss trajectory endpoints.
#[derive(Debug, Clone)]
pub struct MiOutput {
    pub images: Array2<f64>,
    pub initial_cl: Vec<f64>,
    pub final_cl: Vec<f64>,
}

/// Pixel-space inversion: gradient descent on the classification loss from
/// random starts, clipped to the unit cube each step.
pub fn naive_mi(c: &Classifier, y: usize, cfg: &MiConfig) -> Result<MiOutput> {
    use rand::Rng;
    let d = c.input_len();
    let mut rng = seeds::rng(cfg.seed, "naive-mi-init", y as u64);
    let mut x = Array2::from_shape_fn((cfg.restarts, d), |_| rng.random_range(0.0..1.0));
    let mut initial_cl = Vec::new();
    let mut final_cl = Vec::new();
    for step in 0..=cfg.steps {
        let acts = c.network().forward(c.params(), &x);
        let logits = acts.last().unwrap();
        let k = logits.ncols();
        let mut d_logits = Array2::<f64>::zeros((cfg.restarts, k));
        let mut losses = Vec::with_capacity(cfg.restarts);
        for i in 0..cfg.restarts {
            let (loss, g) = nn::softmax_ce_grad(logits.row(i).as_slice().unwrap(), y);
            losses.push(loss);
            for j in 0..k {
                d_logits[[i, j]] = g[j];
            }
        }
        if step == 0 {
            initial_cl = losses.clone();
        }
        if step == cfg.steps {
            final_cl = losses;
            break;
        }
        let (_, dx) = c.network().backward(c.params(), &acts, &d_logits, false, true);
        x -= &(dx.unwrap() * cfg.lr);
        x.mapv_inplace(|v| v.clamp(0.0, 1.0));
    }
    Ok(MiOutput {
        images: x,
        initial_cl,
        final_cl,
    })
}

/// Latent-space inversion: descend `λ1·L_cl + L_prior` over the latent
/// batch; returns the decoded images.
pub fn gmi(
    c: &Classifier,
    prior: &GenerativePrior,
    y: usize,
    cfg: &MiConfig,
) -> Result<MiOutput> {
    let mut rng = seeds::rng(cfg.seed, "gmi-init", y as u64);
    let mut z = Array2::from_shape_fn((cfg.restarts, prior.latent_dim), |_| {
        StandardNormal.sample(&mut rng)
    });
    let w = LossWeights::new(cfg.lambda1, 0.0, 0.0, 0.0)?;
    let delta = vec![0.0; prior.image_len()];
    let mut initial_cl = Vec::new();
    let mut final_cl = Vec::new();
    for step in 0..=cfg.steps {
        let gen_acts = prior.generator_net().forward(prior.generator_params(), &z);
        let imgs = gen_acts.last().unwrap();
        let acts = c.network().forward(c.params(), imgs);
        let logits = acts.last().unwrap();
        let losses: Vec<f64> = (0..cfg.restarts)
            .map(|i| nn::softmax_ce_grad(logits.row(i).as_slice().unwrap(), y).0)
            .collect();
        if step == 0 {
            initial_cl = losses.clone();
        }
        if step == cfg.steps {
            final_cl = losses;
            break;
        }
        let tg = total_loss_batch_grads(c, prior, &z, &delta, y, &w, &[])?;
        z -= &(tg.dz * cfg.lr);
    }
    let images = prior.sample_batch(&z)?;
    Ok(MiOutput {
        images,
        initial_cl,
        final_cl,
    })
}

// ---------------------------------------------------------------------------
// stabilized synthesis
// ---------------------------------------------------------------------------

/// Per-iteration batch means of each term plus the total.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LossTraces {
    pub prior: Vec<f64>,
    pub cl: Vec<f64>,
    pub mp: Vec<f64>,
    pub con: Vec<f64>,
    pub dp: Vec<f64>,
    pub total: Vec<f64>,
}

/// Output of the stabilized synthesis: per-class latent batches, per-class
/// final perturbations, loss traces, and the decoded, labeled base set.
#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub classes: Vec<usize>,
    /// (class, batch, latent) latent stack.
    pub latents: Array3<f64>,
    /// One final perturbation per class (the loop reinitializes it per
    /// class), flattened channels-last.
    pub deltas: Array2<f64>,
    pub traces: Vec<LossTraces>,
    /// Selected decoded samples, labeled with the class they were
    /// synthesized for.
    pub base_set: LabeledDataset,
    /// Per class: indices into the latent batch of the selected samples.
    pub selected: Vec<Vec<usize>>,
    /// Per class: final per-sample total losses.
    pub final_losses: Vec<Vec<f64>>,
    pub weights: LossWeights,
    pub seed: u64,
}

impl SynthesisResult {
    /// The co-optimized perturbations, one row per synthesized class.
    pub fn delta_star(&self) -> &Array2<f64> {
        &self.deltas
    }

    pub fn delta_norm(&self, class_idx: usize) -> f64 {
        self.deltas
            .row(class_idx)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Stabilized synthesis for the given classes.
///
/// Per class: initialize a latent batch from the standard normal and the
/// perturbation at zero, then per iteration take (a) a temporary latent step
/// on the data-perturbation loss alone, (b) an ascent step of the shared
/// perturbation evaluated at the temporary latents, and (c) a descent step of
/// the full objective at the updated perturbation. `refs` supplies clean
/// (image, label) pairs for the consistency term; required when `λ3 > 0`.
pub fn fred_synthesize(
    c: &Classifier,
    prior: &GenerativePrior,
    classes: &[usize],
    w: &LossWeights,
    cfg: &ExperimentConfig,
    refs: &[(Vec<f64>, usize)],
) -> Result<SynthesisResult> {
    cfg.validate()?;
    w.validate()?;
    if w.lambda3 > 0.0 && refs.is_empty() {
        return Err(Error::Config(
            "lambda3 > 0 requires clean reference samples".into(),
        ));
    }
    let b = cfg.batch_syn;
    let p = prior.latent_dim;
    let d = prior.image_len();
    let seed = cfg.seeds.first().copied().unwrap_or(0);

    let mut latents = Array3::<f64>::zeros((classes.len(), b, p));
    let mut deltas = Array2::<f64>::zeros((classes.len(), d));
    let mut traces = Vec::with_capacity(classes.len());
    let mut selected = Vec::with_capacity(classes.len());
    let mut final_losses = Vec::with_capacity(classes.len());
    let mut images = Vec::with_capacity(classes.len());

    for (ci, &y) in classes.iter().enumerate() {
        let mut rng = seeds::rng(seed, "fred-z-init", y as u64);
        let mut z = Array2::from_shape_fn((b, p), |_| StandardNormal.sample(&mut rng));
        let mut delta = vec![0.0f64; d];
        let mut trace = LossTraces::default();
        let mut last_totals = vec![0.0; b];

        for iter in 0..cfg.max_iterations {
            // (a) temporary latent step on the data-perturbation loss
            let dp = loss_dp_batch_grads(c, prior, &z, &delta)?;
            let z_hat = &z - &(&dp.dz * cfg.alpha1);

            // (b) perturbation ascent at the temporary latents
            let dp_hat = loss_dp_batch_grads(c, prior, &z_hat, &delta)?;
            for (dj, gj) in delta.iter_mut().zip(&dp_hat.ddelta_mean) {
                *dj += cfg.alpha2 * gj;
            }

            // (c) full-objective descent at the updated perturbation
            let tg = total_loss_batch_grads(c, prior, &z, &delta, y, w, refs)?;
            if tg.totals.iter().any(|v| !v.is_finite())
                || tg.dz.iter().any(|v| !v.is_finite())
            {
                return Err(Error::SynthesisNan {
                    class: y,
                    iteration: iter,
                });
            }
            z -= &(&tg.dz * cfg.alpha1);

            trace.prior.push(tg.components_mean.prior);
            trace.cl.push(tg.components_mean.cl);
            trace.mp.push(tg.components_mean.mp);
            trace.con.push(tg.components_mean.con);
            trace.dp.push(tg.components_mean.dp);
            trace
                .total
                .push(total_loss(w, &tg.components_mean)?);
            last_totals = tg.totals;
        }

        // subsample the batch down to samples_per_class by lowest final loss
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&a, &bb| last_totals[a].partial_cmp(&last_totals[bb]).unwrap());
        let keep: Vec<usize> = order[..cfg.samples_per_class].to_vec();

        let decoded = prior.sample_batch(&z)?;
        for &i in &keep {
            images.push((decoded.row(i).to_vec(), y));
        }
        latents
            .index_axis_mut(ndarray::Axis(0), ci)
            .assign(&z);
        for (j, v) in delta.iter().enumerate() {
            deltas[[ci, j]] = *v;
        }
        traces.push(trace);
        selected.push(keep);
        final_losses.push(last_totals);
    }

    let base_set = images_to_dataset(&images, prior.image_shape(), c.class_count(), seed)?;
    Ok(SynthesisResult {
        classes: classes.to_vec(),
        latents,
        deltas,
        traces,
        base_set,
        selected,
        final_losses,
        weights: *w,
        seed,
    })
}

/// Pack flat f64 images into a dataset (quantizing to the storage dtype).
pub fn images_to_dataset(
    images: &[(Vec<f64>, usize)],
    shape: (usize, usize, usize),
    class_count: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let (h, w, c) = shape;
    let n = images.len();
    let mut arr = ndarray::Array4::<f32>::zeros((n, h, w, c));
    let mut labels = Vec::with_capacity(n);
    for (i, (img, y)) in images.iter().enumerate() {
        for (j, &v) in img.iter().enumerate() {
            let (yy, rest) = (j / (w * c), j % (w * c));
            arr[[i, yy, rest / c, rest % c]] = v.clamp(0.0, 1.0) as f32;
        }
        labels.push(*y);
    }
    LabeledDataset::new(arr, labels, class_count, SplitTag::Train, seed)
}

impl Checkpoint for SynthesisResult {
    const KIND: &'static str = "synthesis";

    fn to_container(&self) -> Container {
        let (k, b, p) = self.latents.dim();
        let d = self.deltas.ncols();
        let mut cont = Container::new(
            Self::KIND,
            serde_json::json!({
                "classes": self.classes,
                "weights": self.weights,
                "seed": self.seed,
                "traces": self.traces,
                "selected": self.selected,
            }),
        );
        cont.push(
            "latents",
            Buffer::F64(self.latents.iter().copied().collect(), vec![k, b, p]),
        );
        cont.push(
            "deltas",
            Buffer::F64(self.deltas.iter().copied().collect(), vec![k, d]),
        );
        let fl: Vec<f64> = self.final_losses.iter().flatten().copied().collect();
        cont.push("final_losses", Buffer::F64(fl, vec![k, b]));
        let bs = self.base_set.to_container();
        cont.push("base_images", bs.get("images").unwrap().clone());
        cont.push("base_labels", bs.get("labels").unwrap().clone());
        let (h, ww, c) = self.base_set.image_shape();
        cont.meta["base_shape"] = serde_json::json!([h, ww, c]);
        cont.meta["class_count"] = serde_json::json!(self.base_set.class_count());
        cont
    }

    fn from_container(c: &Container) -> Result<Self> {
        let classes: Vec<usize> = c.meta_field("classes")?;
        let weights: LossWeights = c.meta_field("weights")?;
        let seed: u64 = c.meta_field("seed")?;
        let traces: Vec<LossTraces> = c.meta_field("traces")?;
        let selected: Vec<Vec<usize>> = c.meta_field("selected")?;
        let class_count: usize = c.meta_field("class_count")?;

        let lshape = c.get("latents")?.shape_vec();
        let latents = Array3::from_shape_vec(
            (lshape[0], lshape[1], lshape[2]),
            c.get("latents")?.as_f64()?.to_vec(),
        )
        .map_err(|e| Error::Format(format!("latents: {e}")))?;
        let dshape = c.get("deltas")?.shape_vec();
        let deltas =
            Array2::from_shape_vec((dshape[0], dshape[1]), c.get("deltas")?.as_f64()?.to_vec())
                .map_err(|e| Error::Format(format!("deltas: {e}")))?;
        let flshape = c.get("final_losses")?.shape_vec();
        let flv = c.get("final_losses")?.as_f64()?;
        let final_losses: Vec<Vec<f64>> = flv.chunks(flshape[1]).map(<[f64]>::to_vec).collect();

        let bshape = c.get("base_images")?.shape_vec();
        let images = ndarray::Array4::from_shape_vec(
            (bshape[0], bshape[1], bshape[2], bshape[3]),
            c.get("base_images")?.as_f32()?.to_vec(),
        )
        .map_err(|e| Error::Format(format!("base images: {e}")))?;
        let labels: Vec<usize> = c
            .get("base_labels")?
            .as_i64()?
            .iter()
            .map(|&l| l as usize)
            .collect();
        let base_set = LabeledDataset::new(images, labels, class_count, SplitTag::Train, seed)?;
        Ok(SynthesisResult {
            classes,
            latents,
            deltas,
            traces,
            base_set,
            selected,
            final_losses,
            weights,
            seed,
        })
    }
}

#[cfg(test)]
mod tests;
