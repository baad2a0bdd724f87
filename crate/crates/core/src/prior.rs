//! The generative prior: a small generator/discriminator pair trained on
//! auxiliary data.
//!
//! The discriminator returns a raw pre-sigmoid score; the prior loss in the
//! inversion module consumes that score directly. The generator squashes its
//! output through a sigmoid, so samples always live in `[0,1]`.

use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datamodel::{Buffer, Checkpoint, Container, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::{Adam, Feat, LayerSpec, Network};
use crate::seeds;
use crate::victim::gather_rows;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GanConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    pub seed: u64,
    /// Maximum allowed |mean D(real) - mean D(fake)| for the fidelity gate.
    pub fidelity_band: f64,
    /// Mean pairwise sample distance below this floor logs a mode-collapse
    /// warning.
    pub collapse_floor: f64,
}

impl Default for GanConfig {
    fn default() -> Self {
        GanConfig {
            steps: 1200,
            batch_size: 16,
            lr_g: 2e-3,
            lr_d: 1e-3,
            seed: 0,
            fidelity_band: 3.0,
            collapse_floor: 0.5,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GanLog {
    pub d_losses: Vec<f64>,
    pub g_losses: Vec<f64>,
    pub real_score_mean: f64,
    pub real_score_std: f64,
    pub fake_score_mean: f64,
    pub fidelity_gap: f64,
    pub fidelity_pass: bool,
    /// Empirical Lipschitz estimate of the generator over random latent
    /// pairs; stands in for the unknowable true constant in theory probes.
    pub lipschitz_estimate: f64,
    pub warnings: Vec<String>,
    pub seed: u64,
}

impl GanLog {
    /// Scores below this are outside the band of real data.
    pub fn real_band_low(&self) -> f64 {
        self.real_score_mean - 3.0 * self.real_score_std
    }
}

/// Generator + discriminator over a fixed image shape.
#[derive(Debug, Clone)]
pub struct GenerativePrior {
    pub latent_dim: usize,
    image: (usize, usize, usize),
    gen: Network,
    gen_params: Vec<f64>,
    disc: Network,
    disc_params: Vec<f64>,
    pub train_log: GanLog,
}

fn build_generator(latent_dim: usize, image: (usize, usize, usize)) -> Result<Network> {
    let (h, w, c) = image;
    if h % 8 != 0 || w % 8 != 0 {
        return Err(Error::Config(format!(
            "generator needs spatial sides divisible by 8, got {h}x{w}"
        )));
    }
    let (h0, w0) = (h / 8, w / 8);
    Network::new(
        Feat::Vec(latent_dim),
        &[
            LayerSpec::Dense { out: h0 * w0 * 40 },
            LayerSpec::Tanh,
            LayerSpec::Unflatten { h: h0, w: w0, c: 40 },
            LayerSpec::Upsample2x,
            LayerSpec::Conv { out_ch: 24, k: 3, stride: 1, pad: 1 },
            LayerSpec::Tanh,
            LayerSpec::Upsample2x,
            LayerSpec::Conv { out_ch: 12, k: 3, stride: 1, pad: 1 },
            LayerSpec::Tanh,
            LayerSpec::Upsample2x,
            LayerSpec::Conv { out_ch: c, k: 3, stride: 1, pad: 1 },
            LayerSpec::Sigmoid,
        ],
    )
}

fn build_discriminator(image: (usize, usize, usize)) -> Result<Network> {
    let (h, w, c) = image;
    Network::new(
        Feat::Image { h, w, c },
        &[
            LayerSpec::Conv { out_ch: 12, k: 3, stride: 2, pad: 1 },
            LayerSpec::Tanh,
            LayerSpec::Conv { out_ch: 24, k: 3, stride: 2, pad: 1 },
            LayerSpec::Tanh,
            LayerSpec::Conv { out_ch: 32, k: 3, stride: 2, pad: 1 },
            LayerSpec::Tanh,
            LayerSpec::Flatten,
            LayerSpec::Dense { out: 1 },
        ],
    )
}

impl GenerativePrior {
    pub fn image_shape(&self) -> (usize, usize, usize) {
        self.image
    }

    pub fn image_len(&self) -> usize {
        let (h, w, c) = self.image;
        h * w * c
    }

    pub fn generator_net(&self) -> &Network {
        &self.gen
    }

    pub fn generator_params(&self) -> &[f64] {
        &self.gen_params
    }

    pub fn discriminator_net(&self) -> &Network {
        &self.disc
    }

    pub fn discriminator_params(&self) -> &[f64] {
        &self.disc_params
    }

    /// Decode a batch of latent rows into images in `[0,1]`.
    pub fn sample_batch(&self, zs: &Array2<f64>) -> Result<Array2<f64>> {
        if zs.ncols() != self.latent_dim {
            return Err(Error::LatentDim {
                expected: self.latent_dim,
                got: zs.ncols(),
            });
        }
        let acts = self.gen.forward(&self.gen_params, zs);
        Ok(acts.into_iter().next_back().expect("output"))
    }

    /// Decode one latent vector.
    pub fn sample(&self, z: &[f64]) -> Result<Vec<f64>> {
        let za = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row");
        Ok(self.sample_batch(&za)?.row(0).to_vec())
    }

    /// Raw discriminator scores for a batch of flat images.
    pub fn disc_scores(&self, images: &Array2<f64>) -> Vec<f64> {
        let acts = self.disc.forward(&self.disc_params, images);
        acts.last().unwrap().column(0).to_vec()
    }

    pub fn disc_score(&self, image: &[f64]) -> f64 {
        let xa = Array2::from_shape_vec((1, image.len()), image.to_vec()).expect("row");
        self.disc_scores(&xa)[0]
    }

    /// Standard-normal latent batch on a derived stream.
    pub fn draw_latents(&self, n: usize, seed: u64, tag: &str, counter: u64) -> Array2<f64> {
        let mut rng = seeds::rng(seed, tag, counter);
        Array2::from_shape_fn((n, self.latent_dim), |_| StandardNormal.sample(&mut rng))
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn std_dev(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        (1.0 + x.exp()).ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Train the prior on auxiliary data. Deterministic given the seed; losses
/// are logged per step.
pub fn train_gan(aux: &LabeledDataset, cfg: &GanConfig) -> Result<GenerativePrior> {
    if aux.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let image = aux.image_shape();
    let latent_dim = 64usize;
    let gen = build_generator(latent_dim, image)?;
    let disc = build_discriminator(image)?;
    let mut grng = seeds::rng(cfg.seed, "gan-gen-init", 0);
    let mut drng = seeds::rng(cfg.seed, "gan-disc-init", 0);
    let mut gen_params = gen.init_params(&mut grng);
    let mut disc_params = disc.init_params(&mut drng);
    let mut opt_g = Adam::new(cfg.lr_g, 0.5, 0.999, gen_params.len());
    let mut opt_d = Adam::new(cfg.lr_d, 0.5, 0.999, disc_params.len());

    let all = aux.to_f64_matrix();
    let n = aux.len();
    let batch = cfg.batch_size.min(n);
    let mut log = GanLog {
        seed: cfg.seed,
        ..GanLog::default()
    };

    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n; // force reshuffle on first use
    let mut epoch = 0u64;
    for step in 0..cfg.steps {
        // ---- discriminator step ----
        if cursor + batch > n {
            use rand::seq::SliceRandom;
            let mut erng = seeds::rng(cfg.seed, "gan-epoch", epoch);
            order.shuffle(&mut erng);
            cursor = 0;
            epoch += 1;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let real = gather_rows(&all, idx);

        let mut zrng = seeds::rng(cfg.seed, "gan-z-d", step as u64);
        let z = Array2::from_shape_fn((batch, latent_dim), |_| StandardNormal.sample(&mut zrng));
        let fake_acts = gen.forward(&gen_params, &z);
        let fake = fake_acts.last().unwrap().clone();

        // D maximizes log σ(D(real)) + log(1 - σ(D(fake)))
        let real_acts = disc.forward(&disc_params, &real);
        let fake_d_acts = disc.forward(&disc_params, &fake);
        let sr: Vec<f64> = real_acts.last().unwrap().column(0).to_vec();
        let sf: Vec<f64> = fake_d_acts.last().unwrap().column(0).to_vec();
        let d_loss = mean(&sr.iter().map(|&s| softplus(-s)).collect::<Vec<_>>())
            + mean(&sf.iter().map(|&s| softplus(s)).collect::<Vec<_>>());
        if !d_loss.is_finite() {
            return Err(Error::Divergence { iteration: step });
        }
        let bs = batch as f64;
        let d_real_seed = Array2::from_shape_vec(
            (sr.len(), 1),
            sr.iter().map(|&s| -sigmoid(-s) / bs).collect(),
        )
        .unwrap();
        let d_fake_seed = Array2::from_shape_vec(
            (sf.len(), 1),
            sf.iter().map(|&s| sigmoid(s) / bs).collect(),
        )
        .unwrap();
        let (gd_real, _) = disc.backward(&disc_params, &real_acts, &d_real_seed, true, false);
        let (gd_fake, _) = disc.backward(&disc_params, &fake_d_acts, &d_fake_seed, true, false);
        let mut gd = gd_real.unwrap();
        for (a, b) in gd.iter_mut().zip(gd_fake.unwrap()) {
            *a += b;
        }
        opt_d.step(&mut disc_params, &gd);

        // ---- generator step (non-saturating) ----
        let mut zrng = seeds::rng(cfg.seed, "gan-z-g", step as u64);
        let z = Array2::from_shape_fn((batch, latent_dim), |_| StandardNormal.sample(&mut zrng));
        let gen_acts = gen.forward(&gen_params, &z);
        let imgs = gen_acts.last().unwrap();
        let d_acts = disc.forward(&disc_params, imgs);
        let s: Vec<f64> = d_acts.last().unwrap().column(0).to_vec();
        let g_loss = mean(&s.iter().map(|&v| softplus(-v)).collect::<Vec<_>>());
        if !g_loss.is_finite() {
            return Err(Error::Divergence { iteration: step });
        }
        let g_seed = Array2::from_shape_vec(
            (s.len(), 1),
            s.iter().map(|&v| -sigmoid(-v) / bs).collect(),
        )
        .unwrap();
        let (_, d_img) = disc.backward(&disc_params, &d_acts, &g_seed, false, true);
        let (gg, _) = gen.backward(&gen_params, &gen_acts, &d_img.unwrap(), true, false);
        opt_g.step(&mut gen_params, &gg.unwrap());

        log.d_losses.push(d_loss);
        log.g_losses.push(g_loss);
    }

    let mut prior = GenerativePrior {
        latent_dim,
        image,
        gen,
        gen_params,
        disc,
        disc_params,
        train_log: log,
    };
    finalize_log(&mut prior, &all, cfg)?;
    Ok(prior)
}

/// Post-training probes recorded in the log: score bands, the weak fidelity
/// gate, mode-collapse distance, and the Lipschitz estimate.
fn finalize_log(prior: &mut GenerativePrior, all: &Array2<f64>, cfg: &GanConfig) -> Result<()> {
    let n_eval = 64.min(all.nrows());
    let idx: Vec<usize> = (0..n_eval).collect();
    let real = gather_rows(all, &idx);
    let sr = prior.disc_scores(&real);

    let z = prior.draw_latents(64, cfg.seed, "gan-eval-z", 0);
    let fakes = prior.sample_batch(&z)?;
    let sf = prior.disc_scores(&fakes);

    let mut log = std::mem::take(&mut prior.train_log);
    log.real_score_mean = mean(&sr);
    log.real_score_std = std_dev(&sr);
    log.fake_score_mean = mean(&sf);
    log.fidelity_gap = (log.real_score_mean - log.fake_score_mean).abs();
    log.fidelity_pass = log.fidelity_gap <= cfg.fidelity_band;
    if !log.fidelity_pass {
        log.warnings.push(format!(
            "fidelity gate: |real - fake| score gap {:.3} exceeds band {:.3}",
            log.fidelity_gap, cfg.fidelity_band
        ));
    }

    // mode-collapse detector: mean pairwise distance of a sample batch
    let mut dist_sum = 0.0;
    let mut pairs = 0usize;
    for i in 0..fakes.nrows() {
        for j in (i + 1)..fakes.nrows() {
            let d: f64 = fakes
                .row(i)
                .iter()
                .zip(fakes.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            dist_sum += d;
            pairs += 1;
        }
    }
    let mean_dist = dist_sum / pairs.max(1) as f64;
    if mean_dist < cfg.collapse_floor {
        log.warnings.push(format!(
            "possible mode collapse: mean pairwise sample distance {mean_dist:.4} below floor {:.4}",
            cfg.collapse_floor
        ));
    }

    // empirical Lipschitz probe over 1000 random latent pairs
    let z1 = prior.draw_latents(1000, cfg.seed, "gan-lip-a", 0);
    let z2 = prior.draw_latents(1000, cfg.seed, "gan-lip-b", 0);
    let x1 = prior.sample_batch(&z1)?;
    let x2 = prior.sample_batch(&z2)?;
    let mut lmax = 0.0f64;
    for i in 0..1000 {
        let dz: f64 = z1
            .row(i)
            .iter()
            .zip(z2.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let dx: f64 = x1
            .row(i)
            .iter()
            .zip(x2.row(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if dz > 1e-9 {
            lmax = lmax.max(dx / dz);
        }
    }
    if !lmax.is_finite() {
        return Err(Error::NonFinite {
            context: "lipschitz probe".into(),
        });
    }
    log.lipschitz_estimate = lmax;
    prior.train_log = log;
    Ok(())
}

/// Decode `scale·√p·ẑ` for each scale (ẑ the normalized base latent) and
/// score each image with the discriminator; output ordered ascending by
/// scale regardless of input order.
pub fn latent_norm_probe(
    prior: &GenerativePrior,
    base_z: &[f64],
    scales: &[f64],
) -> Result<Vec<(f64, Vec<f64>, f64)>> {
    if scales.is_empty() {
        return Err(Error::Config("scales must be nonempty".into()));
    }
    if base_z.len() != prior.latent_dim {
        return Err(Error::LatentDim {
            expected: prior.latent_dim,
            got: base_z.len(),
        });
    }
    let norm: f64 = base_z.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::ZeroLatent);
    }
    let sqrt_p = (prior.latent_dim as f64).sqrt();
    let mut sorted: Vec<f64> = scales.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut out = Vec::with_capacity(sorted.len());
    for s in sorted {
        let z: Vec<f64> = base_z.iter().map(|v| v / norm * s * sqrt_p).collect();
        let img = prior.sample(&z)?;
        let score = prior.disc_score(&img);
        out.push((s, img, score));
    }
    Ok(out)
}

impl Checkpoint for GenerativePrior {
    const KIND: &'static str = "gan";

    fn to_container(&self) -> Container {
        let mut c = Container::new(
            Self::KIND,
            serde_json::json!({
                "latent_dim": self.latent_dim,
                "image": self.image,
                "train_log": self.train_log,
            }),
        );
        c.push(
            "gen_params",
            Buffer::F64(self.gen_params.clone(), vec![self.gen_params.len()]),
        );
        c.push(
            "disc_params",
            Buffer::F64(self.disc_params.clone(), vec![self.disc_params.len()]),
        );
        c
    }

    fn from_container(c: &Container) -> Result<Self> {
        let latent_dim: usize = c.meta_field("latent_dim")?;
        let image: (usize, usize, usize) = c.meta_field("image")?;
        let train_log: GanLog = c.meta_field("train_log")?;
        let gen = build_generator(latent_dim, image)?;
        let disc = build_discriminator(image)?;
        let gen_params = c.get("gen_params")?.as_f64()?.to_vec();
        let disc_params = c.get("disc_params")?.as_f64()?.to_vec();
        if gen_params.len() != gen.param_count() || disc_params.len() != disc.param_count() {
            return Err(Error::ShapeMismatch {
                expected: format!("{}/{} params", gen.param_count(), disc.param_count()),
                got: format!("{}/{}", gen_params.len(), disc_params.len()),
            });
        }
        Ok(GenerativePrior {
            latent_dim,
            image,
            gen,
            gen_params,
            disc,
            disc_params,
            train_log,
        })
    }
}
