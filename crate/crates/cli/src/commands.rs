//! Subcommand implementations. Each command reads its config section,
//! validates inputs, writes its artifacts plus a JSON report, and finishes
//! with the run manifest.

use ndarray::Array2;
use std::path::{Path, PathBuf};

use fredlab::attacks::{apply_trigger, make_trigger, poison_dataset, PoisonSpec, Trigger};
use fredlab::datamodel::{
    load_checkpoint, save_checkpoint, synthetic, Buffer, Container, ExperimentConfig,
    LabeledDataset, SplitTag,
};
use fredlab::defense::{unlearn, DefenseConfig, EvalContext};
use fredlab::diagnostics::{self, emit, DetectorConfig, LandscapeMode, MsePushConfig};
use fredlab::equilibrium::AuditInstance;
use fredlab::error::{Error, Result};
use fredlab::inversion::{
    fred_synthesize, gmi, images_to_dataset, naive_mi, LossWeights, MiConfig, SynthesisResult,
};
use fredlab::prior::{latent_norm_probe, train_gan, GanConfig, GenerativePrior};
use fredlab::seeds;
use fredlab::victim::{
    evaluate_acc, evaluate_asr, train_classifier, ArchSpec, Classifier, TrainConfig,
};

use crate::config::{BaseKind, Config, InvertMethod};
use crate::manifest::ManifestBuilder;

pub struct Ctx {
    pub config: Config,
    pub config_bytes: Vec<u8>,
    pub out_dir: PathBuf,
    pub seed_override: Option<u64>,
}

impl Ctx {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    fn load_dataset(&self, p: &Path) -> Result<LabeledDataset> {
        let path = self.resolve(p);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        load_checkpoint::<LabeledDataset>(&path)
    }

    fn load_classifier(&self, p: &Path) -> Result<Classifier> {
        let path = self.resolve(p);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        load_checkpoint::<Classifier>(&path)
    }

    fn load_prior(&self, p: &Path) -> Result<GenerativePrior> {
        let path = self.resolve(p);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        load_checkpoint::<GenerativePrior>(&path)
    }

    fn seed_or(&self, s: u64) -> u64 {
        self.seed_override.unwrap_or(s)
    }

    fn write_report(&self, name: &str, report: &serde_json::Value) -> Result<PathBuf> {
        let path = self.out_dir.join(name);
        let text = serde_json::to_string_pretty(report)
            .map_err(|e| Error::Format(format!("report: {e}")))?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}

fn trigger_for(ctx: &Ctx, shape: (usize, usize, usize)) -> Result<Trigger> {
    make_trigger(&ctx.config.trigger_spec()?, shape)
}

/// Generate the synthetic desk datasets (train/test/aux).
pub fn cmd_make_data(ctx: &Ctx) -> Result<()> {
    let mut m = ManifestBuilder::new("make-data", &ctx.config_bytes);
    let d = Config::require(&ctx.config.data, "data")?;
    let seed = ctx.seed_or(d.seed);
    m.seed(seed);
    let mk = |per_class: usize, shift: f64, jitter: f64, tag: SplitTag, seed: u64| {
        synthetic::generate(&synthetic::SynthConfig {
            classes: d.classes,
            per_class,
            height: d.height,
            width: d.width,
            palette_shift: shift,
            jitter,
            noise: d.noise,
            seed,
            split_tag: tag,
        })
    };
    let train = mk(d.per_class_train, 0.0, d.jitter, SplitTag::Train, seed)?;
    let test = mk(
        d.per_class_test,
        0.0,
        d.jitter,
        SplitTag::Test,
        seeds::derive(seed, "desk-test", 0),
    )?;
    let aux = mk(
        d.per_class_aux,
        d.aux_palette_shift,
        d.jitter * 1.4,
        SplitTag::Aux,
        seeds::derive(seed, "desk-aux", 0),
    )?;
    for (name, ds) in [("train.flab", &train), ("test.flab", &test), ("aux.flab", &aux)] {
        let path = ctx.out_dir.join(name);
        save_checkpoint(ds, &path)?;
        m.output(&path);
    }
    let report = ctx.write_report(
        "report-make-data.json",
        &serde_json::json!({
            "classes": d.classes,
            "sizes": {"train": train.len(), "test": test.len(), "aux": aux.len()},
            "input_range": "[0,1]",
        }),
    )?;
    m.output(&report);
    m.finish(&ctx.out_dir)?;
    Ok(())
}

/// Poison a dataset with the configured trigger.
pub fn cmd_poison(ctx: &Ctx) -> Result<()> {
    let mut m = ManifestBuilder::new("poison", &ctx.config_bytes);
    let p = Config::require(&ctx.config.poison, "poison")?;
    if !(0.0..=1.0).contains(&p.rate) {
        return Err(Error::Config(format!(
            "poison.rate must be in [0,1], got {}",
            p.rate
        )));
    }
    let ds = ctx.load_dataset(&p.dataset)?;
    m.input(&ctx.resolve(&p.dataset));
    let trigger = trigger_for(ctx, ds.image_shape())?;
    let seed = ctx.seed_or(p.seed);
    m.seed(seed);
    let out = poison_dataset(
        &ds,
        &trigger,
        &PoisonSpec {
            target_class: p.target_class,
            rate: p.rate,
            seed,
        },
    )?;
    if let Some(w) = &out.warning {
        eprintln!("warning: {w}");
    }
    let ds_path = ctx.out_dir.join("poisoned.flab");
    save_checkpoint(&out.dataset, &ds_path)?;
    m.output(&ds_path);
    // poison-flag sidecar next to the dataset container
    let flags_path = ctx.out_dir.join("poison_flags.flab");
    let mut cont = Container::new(
        "poison-flags",
        serde_json::json!({"target_class": p.target_class, "rate": p.rate, "seed": seed}),
    );
    cont.push(
        "flags",
        Buffer::U8(
            out.flags.iter().map(|&f| u8::from(f)).collect(),
            vec![out.flags.len()],
        ),
    );
    cont.write(&flags_path)?;
    m.output(&flags_path);
    let report = ctx.write_report(
        "report-poison.json",
        &serde_json::json!({
            "poisoned": out.flags.iter().filter(|&&f| f).count(),
            "total": out.dataset.len(),
            "target_class": p.target_class,
            "rate": p.rate,
            "trigger": ctx.config.trigger_spec()?,
            "warning": out.warning,
            "input_range": "[0,1]",
        }),
    )?;
    m.output(&report);
    m.finish(&ctx.out_dir)?;
    Ok(())
}

/// Train the victim classifier.
pub fn cmd_train(ctx: &Ctx) -> Result<()> {
    let mut m = ManifestBuilder::new("train", &ctx.config_bytes);
    let t = Config::require(&ctx.config.train, "train")?;
    let ds = ctx.load_dataset(&t.dataset)?;
    m.input(&ctx.resolve(&t.dataset));
    let seed = ctx.seed_or(t.seed);
    m.seed(seed);
    let arch = ArchSpec::desk(t.classes);
    let clf = train_classifier(
        &ds,
        &arch,
        &TrainConfig {
            epochs: t.epochs,
            batch_size: t.batch_size,
            lr: t.lr,
            seed,
        },
    )?;
    let path = ctx.out_dir.join("classifier.flab");
    save_checkpoint(&clf, &path)?;
    m.output(&path);
    let train_acc = evaluate_acc(&clf, &ds)?;
    let report = ctx.write_report(
        "report-train.json",
        &serde_json::json!({
            "final_loss": clf.train_log.final_loss,
            "train_acc": train_acc.acc,
            "params": clf.params().len(),
            "grad_scope": clf.train_log.grad_scope,
            "input_range": "[0,1]",
        }),
    )?;
    m.output(&report);
    m.finish(&ctx.out_dir)?;
    Ok(())
}

/// Train the generative prior on auxiliary data.
pub fn cmd_train_gan(ctx: &Ctx) -> Result<()> {
    let mut m = ManifestBuilder::new("train-gan", &ctx.config_bytes);
    let g = Config::require(&ctx.config.gan, "gan")?;
    let aux = ctx.load_dataset(&g.dataset)?;
    m.input(&ctx.resolve(&g.dataset));
    let seed = ctx.seed_or(g.seed);
    m.seed(seed);
    let prior = train_gan(
        &aux,
        &GanConfig {
            steps: g.steps,
            batch_size: g.batch_size,
            lr_g: g.lr_g,
            lr_d: g.lr_d,
            seed,
            fidelity_band: g.fidelity_band,
            collapse_floor: g.collapse_floor,
        },
    )?;
    let path = ctx.out_dir.join("gan.flab");
    save_checkpoint(&prior, &path)?;
    m.output(&path);
    // sample grid for visual inspection
    let z = prior.draw_latents(24, seed, "cli-gan-grid", 0);
    let samples = prior.sample_batch(&z)?;
    let grid = ctx.out_dir.join("gan_samples.png");
    emit::write_image_grid_png(&samples, prior.image_shape(), 6, &grid)?;
    m.output(&grid);
    let report = ctx.write_report(
        "report-train-gan.json",
        &serde_json::json!({
            "fidelity_gap": prior.train_log.fidelity_gap,
            "fidelity_pass": prior.train_log.fidelity_pass,
            "lipschitz_estimate": prior.train_log.lipschitz_estimate,
            "warnings": prior.train_log.warnings,
            "input_range": "[0,1]",
        }),
    )?;
    m.output(&report);
    m.finish(&ctx.out_dir)?;
    Ok(())
}

/// Synthesize a base set by the configured inversion method.
pub fn cmd_invert(ctx: &Ctx) -> Result<()> {
    let mut m = ManifestBuilder::new("invert", &ctx.config_bytes);
    let inv = Config::require(&ctx.config.invert, "invert")?;
    let clf = ctx.load_classifier(&inv.classifier)?;
    m.input(&ctx.resolve(&inv.classifier));
    let seed = ctx.seed_or(inv.seed);
    m.seed(seed);
    let classes: Vec<usize> = if inv.classes.is_empty() {
        (0..clf.class_count()).collect()
    } else {
        inv.classes.clone()
    };

    let base_path = ctx.out_dir.join(format!("base_{:?}.flab", inv.method).to_lowercase());
    let mut report = serde_json::json!({
        "method": inv.method,
        "classes": classes,
        "input_range": "[0,1]",
    });

    match inv.method {
        InvertMethod::Naive => {
            let mut images = Vec::new();
            let mut initial = Vec::new();
            let mut fin = Vec::new();
            for &y in &classes {
                let out = naive_mi(
                    &clf,
                    y,
                    &MiConfig {
                        restarts: inv.samples_per_class,
                        steps: inv.max_iterations,
                        lr: inv.alpha1,
                        seed,
                        lambda1: inv.lambda1,
                    },
                )?;
                for row in out.images.rows() {
                    images.push((row.to_vec(), y));
                }
                initial.push(mean(&out.initial_cl));
                fin.push(mean(&out.final_cl));
            }
            let (h, w, c) = clf.arch().input;
            let ds = images_to_dataset(&images, (h, w, c), clf.class_count(), seed)?;
            save_checkpoint(&ds, &base_path)?;
            report["initial_cl"] = serde_json::json!(initial);
            report["final_cl"] = serde_json::json!(fin);
        }
        InvertMethod::Gmi => {
            let gan_path = inv
                .gan
                .as_ref()
                .ok_or_else(|| Error::Config("invert.gan required for gmi".into()))?;
            let prior = ctx.load_prior(gan_path)?;
            m.input(&ctx.resolve(gan_path));
            let mut images = Vec::new();
            let mut initial = Vec::new();
            let mut fin = Vec::new();
            for &y in &classes {
                let out = gmi(
                    &clf,
                    &prior,
                    y,
                    &MiConfig {
                        restarts: inv.samples_per_class,
                        steps: inv.max_iterations,
                        lr: inv.alpha1,
                        seed,
                        lambda1: inv.lambda1,
                    },
                )?;
                for row in out.images.rows() {
                    images.push((row.to_vec(), y));
                }
                initial.push(mean(&out.initial_cl));
                fin.push(mean(&out.final_cl));
            }
            let ds = images_to_dataset(&images, prior.image_shape(), clf.class_count(), seed)?;
            save_checkpoint(&ds, &base_path)?;
            report["initial_cl"] = serde_json::json!(initial);
            report["final_cl"] = serde_json::json!(fin);
        }
        InvertMethod::Fred => {
            let gan_path = inv
                .gan
                .as_ref()
                .ok_or_else(|| Error::Config("invert.gan required for fred".into()))?;
            let prior = ctx.load_prior(gan_path)?;
            m.input(&ctx.resolve(gan_path));
            let weights = LossWeights::new(inv.lambda1, inv.lambda2, inv.lambda3, inv.lambda4)?;
            let refs = if weights.lambda3 > 0.0 {
                let refs_path = inv.refs_dataset.as_ref().ok_or_else(|| {
                    Error::Config("invert.refs_dataset required when lambda3 > 0".into())
                })?;
                let refs_ds = ctx.load_dataset(refs_path)?;
                m.input(&ctx.resolve(refs_path));
                draw_per_class(&refs_ds, inv.refs_per_class, seed)
                    .iter()
                    .map(|&i| (refs_ds.image_f64(i), refs_ds.labels()[i]))
                    .collect()
            } else {
                Vec::new()
            };
            let cfg = ExperimentConfig {
                lambda1: inv.lambda1,
                lambda2: inv.lambda2,
                lambda3: inv.lambda3,
                lambda4: inv.lambda4,
                batch_syn: inv.batch_syn,
                max_iterations: inv.max_iterations,
                alpha1: inv.alpha1,
                alpha2: inv.alpha2,
                samples_per_class: inv.samples_per_class,
                seeds: vec![seed],
            };
            let result = fred_synthesize(&clf, &prior, &classes, &weights, &cfg, &refs)?;
            let syn_path = ctx.out_dir.join("synthesis.flab");
            save_checkpoint(&result, &syn_path)?;
            m.output(&syn_path);
            save_checkpoint(&result.base_set, &base_path)?;
            // loss traces as CSV
            let traces_path = ctx.out_dir.join("traces.csv");
            write_traces_csv(&result, &traces_path)?;
            m.output(&traces_path);
            let grid = ctx.out_dir.join("base_fred.png");
            emit::write_image_grid_png(
                &result.base_set.to_f64_matrix(),
                prior.image_shape(),
                inv.samples_per_class,
                &grid,
            )?;
            m.output(&grid);
            let delta_norms: Vec<f64> = (0..classes.len()).map(|i| result.delta_norm(i)).collect();
            report["delta_norms"] = serde_json::json!(delta_norms);
            report["final_total_mean"] = serde_json::json!(
                result
                    .traces
                    .iter()
                    .map(|t| t.total.last().copied().unwrap_or(0.0))
                    .collect::<Vec<_>>()
            );
        }
    }
    m.output(&base_path);
    let report_path = ctx.write_report("report-invert.json", &report)?;
    m.output(&report_path);
    m.finish(&ctx.out_dir)?;
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn write_traces_csv(result: &SynthesisResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("csv: {e}")))?;
    w.write_record(["class", "iteration", "prior", "cl", "mp", "con", "dp", "total"])
        .map_err(|e| Error::Format(format!("csv: {e}")))?;
    for (ci, trace) in result.traces.iter().enumerate() {
        for i in 0..trace.total.len() {
            w.write_record([
                format!("{}", result.classes[ci]),
                format!("{i}"),
                format!("{}", trace.prior[i]),
                format!("{}", trace.cl[i]),
                format!("{}", trace.mp[i]),
                format!("{}", trace.con[i]),
                format!("{}", trace.dp[i]),
                format!("{}", trace.total[i]),
            ])
            .map_err(|e| Error::Format(format!("csv: {e}")))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn draw_per_class(ds: &LabeledDataset, per_class: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut out = Vec::new();
    for k in 0..ds.class_count() {
        let mut idx = ds.indices_of_class(k);
        let mut rng = seeds::rng(seed, "draw-per-class", k as u64);
        idx.shuffle(&mut rng);
        out.extend(idx.into_iter().take(per_class));
    }
    out
}

/// Run the unlearning defense with the configured base set.
pub fn cmd_defend(ctx: &Ctx) -> Result<()> {
    let mut m = ManifestBuilder::new("defend", &ctx.config_bytes);
    let d = Config::require(&ctx.config.defend, "defend")?;
    let clf = ctx.load_classifier(&d.classifier)?;
    m.input(&ctx.resolve(&d.classifier));
    let eval_set = ctx.load_dataset(&d.eval_dataset)?;
    m.input(&ctx.resolve(&d.eval_dataset));
    let trigger = trigger_for(ctx, eval_set.image_shape())?;
    let seed = ctx.seed_or(d.seed);
    m.seed(seed);

    let base = match d.base {
        BaseKind::Clean => {
            let pool_path = d
                .clean_dataset
                .as_ref()
                .ok_or_else(|| Error::Config("defend.clean_dataset required".into()))?;
            let pool = ctx.load_dataset(pool_path)?;
            m.input(&ctx.resolve(pool_path));
            let idx = draw_per_class(&pool, d.clean_per_class, seed);
            pool.subset(&idx, SplitTag::Train)
        }
        BaseKind::Ood => {
            // pseudo-label every auxiliary sample with the poisoned model
            let aux_path = d
                .aux_dataset
                .as_ref()
                .ok_or_else(|| Error::Config("defend.aux_dataset required".into()))?;
            let aux = ctx.load_dataset(aux_path)?;
            m.input(&ctx.resolve(aux_path));
            let preds = clf.predict_batch(&aux.to_f64_matrix());
            let images: Vec<(Vec<f64>, usize)> = (0..aux.len())
                .map(|i| (aux.image_f64(i), preds[i]))
                .collect();
            images_to_dataset(&images, aux.image_shape(), clf.class_count(), seed)?
        }
        BaseKind::Naive | BaseKind::Gmi | BaseKind::Fred => {
            let base_path = d
                .base_dataset
                .as_ref()
                .ok_or_else(|| Error::Config("defend.base_dataset required".into()))?;
            m.input(&ctx.resolve(base_path));
            ctx.load_dataset(base_path)?
        }
        BaseKind::Booster => {
            let base_path = d
                .base_dataset
                .as_ref()
                .ok_or_else(|| Error::Config("defend.base_dataset required".into()))?;
            let synth_base = ctx.load_dataset(base_path)?;
            m.input(&ctx.resolve(base_path));
            let pool_path = d
                .clean_dataset
                .as_ref()
                .ok_or_else(|| Error::Config("defend.clean_dataset required".into()))?;
            let pool = ctx.load_dataset(pool_path)?;
            m.input(&ctx.resolve(pool_path));
            let idx = draw_per_class(&pool, d.clean_per_class, seed);
            let clean = pool.subset(&idx, SplitTag::Train);
            clean.concat(&synth_base)?
        }
    };

    let cfg = DefenseConfig {
        inner_steps: d.inner_steps,
        inner_step_size: d.inner_step_size,
        inner_budget: d.inner_budget,
        outer_rounds: d.outer_rounds,
        outer_lr: d.outer_lr,
        outer_epochs: d.outer_epochs,
        batch_size: d.batch_size,
        seed,
    };
    let ectx = EvalContext {
        eval_set: &eval_set,
        trigger: &trigger,
        target_class: d.target_class,
    };
    let (repaired, report) = unlearn(&clf, &base, &cfg, &ectx)?;
    let path = ctx.out_dir.join("repaired.flab");
    save_checkpoint(&repaired, &path)?;
    m.output(&path);
    let report_path = ctx.write_report(
        "report-defend.json",
        &serde_json::json!({
            "base": d.base,
            "base_size": base.len(),
            "acc_before": report.acc_before,
            "asr_before": report.asr_before,
            "acc_after": report.acc_after,
            "asr_after": report.asr_after,
            "trigger_norm": report.synthesized_trigger_norm,
            "rounds": report.rounds,
            "input_range": "[0,1]",
        }),
    )?;
    m.output(&report_path);
    m.finish(&ctx.out_dir)?;
    Ok(())
}

/// Stability analyses, detector probes, and latent probes.
pub fn cmd_diagnose(ctx: &Ctx) -> Result<()> {
    let mut m = ManifestBuilder::new("diagnose", &ctx.config_bytes);
    let d = Config::require(&ctx.config.diagnose, "diagnose")?;
    let clf = ctx.load_classifier(&d.classifier)?;
    m.input(&ctx.resolve(&d.classifier));
    let mut report = serde_json::json!({"input_range": "[0,1]"});

    if let Some(uap) = &d.uap {
        let cfg = DefenseConfig {
            inner_steps: uap.inner_steps,
            inner_step_size: uap.inner_step_size,
            inner_budget: uap.inner_budget,
            seed: ctx.seed_or(uap.seed),
            ..DefenseConfig::default()
        };
        let mut series = Vec::new();
        let mut crossings = serde_json::Map::new();
        for (name, path) in &uap.bases {
            let ds = ctx.load_dataset(path)?;
            m.input(&ctx.resolve(path));
            let curve = diagnostics::uap_scaling_curve(&clf, &ds, &uap.scales, &cfg, name)?;
            let csv_path = ctx.out_dir.join(format!("uap_{name}.csv"));
            emit::write_curve_csv(&curve, &csv_path)?;
            m.output(&csv_path);
            crossings.insert(
                name.clone(),
                serde_json::json!(curve.crossing_scale(0.5)),
            );
            series.push((
                name.clone(),
                curve
                    .scales
                    .iter()
                    .zip(&curve.misprediction_rate)
                    .map(|(&s, &r)| (s, r))
                    .collect(),
            ));
        }
        let svg = ctx.out_dir.join("uap_curves.svg");
        emit::write_svg_curves(&series, "perturbation scaling", &svg)?;
        m.output(&svg);
        report["uap_half_crossings"] = serde_json::Value::Object(crossings);
    }

    if let Some(gn) = &d.gradnorm {
        let mut owned = Vec::new();
        for (name, path) in &gn.sets {
            let ds = ctx.load_dataset(path)?;
            m.input(&ctx.resolve(path));
            let ds = if gn.max_per_set > 0 && ds.len() > gn.max_per_set {
                let idx: Vec<usize> = (0..gn.max_per_set).collect();
                ds.subset(&idx, ds.split_tag)
            } else {
                ds
            };
            owned.push((name.clone(), ds));
        }
        let sets: Vec<(String, &LabeledDataset)> =
            owned.iter().map(|(n, d)| (n.clone(), d)).collect();
        let hists = diagnostics::grad_norm_histogram(&clf, &sets, &gn.bins)?;
        let csv_path = ctx.out_dir.join("grad_norms.csv");
        emit::write_histogram_csv(&hists, &csv_path)?;
        m.output(&csv_path);
        let medians: serde_json::Map<String, serde_json::Value> = hists
            .iter()
            .map(|h| (h.name.clone(), serde_json::json!(h.median)))
            .collect();
        report["grad_norm_medians"] = serde_json::Value::Object(medians);
    }

    if let Some(ls) = &d.landscape {
        let ds = ctx.load_dataset(&ls.dataset)?;
        m.input(&ctx.resolve(&ls.dataset));
        for i in 0..ls.samples.min(ds.len()) {
            let x = ds.image_f64(i);
            let y = ds.labels()[i];
            for (mode, tag) in [(LandscapeMode::Data, "data"), (LandscapeMode::Param, "param")] {
                let grid = diagnostics::loss_landscape(
                    &clf,
                    &x,
                    y,
                    mode,
                    ls.half_width,
                    ls.step,
                    ctx.seed_or(ls.seed),
                )?;
                let path = ctx.out_dir.join(format!("landscape_{tag}_{i}.csv"));
                emit::write_matrix_csv(&grid, &path)?;
                m.output(&path);
            }
        }
    }

    if let Some(det) = &d.detector {
        let clean = ctx.load_dataset(&det.clean_dataset)?;
        m.input(&ctx.resolve(&det.clean_dataset));
        let mut clean_mat = clean.to_f64_matrix();
        if let Some(extra) = &det.extra_clean {
            let extra_ds = ctx.load_dataset(extra)?;
            m.input(&ctx.resolve(extra));
            clean_mat = ndarray::concatenate(
                ndarray::Axis(0),
                &[clean_mat.view(), extra_ds.to_f64_matrix().view()],
            )
            .expect("same width");
        }
        let trigger = trigger_for(ctx, clean.image_shape())?;
        let mut triggered = Array2::<f64>::zeros(clean_mat.raw_dim());
        for (i, mut row) in triggered.rows_mut().into_iter().enumerate() {
            let img = row_to_image(&clean_mat, i, clean.image_shape());
            let patched = apply_trigger(&img.view(), &trigger)?;
            for (j, v) in row.iter_mut().enumerate() {
                *v = f64::from(patched.as_slice().unwrap()[j]);
            }
        }
        let detector = diagnostics::train_trigger_detector(
            &clean_mat,
            &triggered,
            clean.image_shape(),
            &DetectorConfig {
                epochs: det.epochs,
                accuracy_gate: det.accuracy_gate,
                seed: ctx.seed_or(det.seed),
                ..DetectorConfig::default()
            },
        )?;
        let det_path = ctx.out_dir.join("detector.flab");
        save_checkpoint(&detector, &det_path)?;
        m.output(&det_path);
        let mut rates = serde_json::Map::new();
        rates.insert(
            "held_out_accuracy".into(),
            serde_json::json!(detector.held_out_accuracy),
        );
        for (name, path) in &det.score {
            let ds = ctx.load_dataset(path)?;
            m.input(&ctx.resolve(path));
            rates.insert(
                name.clone(),
                serde_json::json!(detector.detection_rate(&ds.to_f64_matrix())),
            );
        }
        report["detector"] = serde_json::Value::Object(rates);
    }

    if let Some(probe) = &d.latent_probe {
        let gan_path = d
            .gan
            .as_ref()
            .ok_or_else(|| Error::Config("diagnose.gan required for latent_probe".into()))?;
        let prior = ctx.load_prior(gan_path)?;
        m.input(&ctx.resolve(gan_path));
        let z = prior.draw_latents(1, ctx.seed_or(probe.seed), "cli-probe", 0);
        let out = latent_norm_probe(&prior, &z.row(0).to_vec(), &probe.scales)?;
        let rows: Vec<(f64, f64)> = out.iter().map(|(s, _, score)| (*s, *score)).collect();
        let csv_path = ctx.out_dir.join("latent_probe.csv");
        emit::write_probe_csv(&rows, ("scale", "disc_score"), &csv_path)?;
        m.output(&csv_path);
        let imgs = Array2::from_shape_vec(
            (out.len(), prior.image_len()),
            out.iter().flat_map(|(_, img, _)| img.clone()).collect(),
        )
        .expect("probe images");
        let grid_path = ctx.out_dir.join("latent_probe.png");
        emit::write_image_grid_png(&imgs, prior.image_shape(), out.len(), &grid_path)?;
        m.output(&grid_path);
        report["latent_probe"] = serde_json::json!(rows);
    }

    if let Some(push) = &d.mse_push {
        let gan_path = d
            .gan
            .as_ref()
            .ok_or_else(|| Error::Config("diagnose.gan required for mse_push".into()))?;
        let prior = ctx.load_prior(gan_path)?;
        let syn: SynthesisResult = load_checkpoint(&ctx.resolve(&push.synthesis))?;
        m.input(&ctx.resolve(&push.synthesis));
        let trigger = trigger_for(ctx, prior.image_shape())?;
        // push each selected latent toward the poisoned version of its image
        let (_k, b, p) = syn.latents.dim();
        let per_class = if push.max_per_class == 0 {
            b
        } else {
            push.max_per_class.min(b)
        };
        let mut z_rows = Vec::new();
        for (ci, _) in syn.classes.iter().enumerate() {
            for bi in 0..per_class {
                z_rows.push(syn.latents.index_axis(ndarray::Axis(0), ci).row(bi).to_vec());
            }
        }
        let z0 = Array2::from_shape_vec((z_rows.len(), p), z_rows.concat()).expect("latents");
        let imgs = prior.sample_batch(&z0)?;
        let mut targets = Array2::<f64>::zeros(imgs.raw_dim());
        for (i, mut row) in targets.rows_mut().into_iter().enumerate() {
            let img = row_to_image(&imgs, i, prior.image_shape());
            let patched = apply_trigger(&img.view(), &trigger)?;
            for (j, v) in row.iter_mut().enumerate() {
                *v = f64::from(patched.as_slice().unwrap()[j]);
            }
        }
        let (z_pushed, mses) = diagnostics::mse_push(
            &prior,
            &z0,
            &targets,
            &MsePushConfig {
                steps: push.steps,
                lr: push.lr,
            },
        )?;
        let pushed_imgs = prior.sample_batch(&z_pushed)?;
        let grid_path = ctx.out_dir.join("mse_push.png");
        emit::write_image_grid_png(&pushed_imgs, prior.image_shape(), per_class, &grid_path)?;
        m.output(&grid_path);
        report["mse_push_mean_mse"] = serde_json::json!(mean(&mses));
    }

    let report_path = ctx.write_report("report-diagnose.json", &report)?;
    m.output(&report_path);
    m.finish(&ctx.out_dir)?;
    Ok(())
}

fn row_to_image(
    mat: &Array2<f64>,
    i: usize,
    shape: (usize, usize, usize),
) -> ndarray::Array3<f32> {
    let (h, w, c) = shape;
    ndarray::Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
        mat[[i, (y * w + x) * c + ch]].clamp(0.0, 1.0) as f32
    })
}

/// Run the discrete equilibrium audit on a file-defined instance.
pub fn cmd_audit_eq(ctx: &Ctx) -> Result<()> {
    let mut m = ManifestBuilder::new("audit-eq", &ctx.config_bytes);
    let a = Config::require(&ctx.config.audit_eq, "audit_eq")?;
    let path = ctx.resolve(&a.instance);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    m.input(&path);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let instance: AuditInstance =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("instance: {e}")))?;
    let verdict = instance.run()?;
    let report_path = ctx.write_report(
        "report-audit-eq.json",
        &serde_json::to_value(&verdict).map_err(|e| Error::Format(format!("verdict: {e}")))?,
    )?;
    m.output(&report_path);
    m.finish(&ctx.out_dir)?;
    Ok(())
}

/// Evaluate a classifier checkpoint (ACC and, with a trigger, ASR).
pub fn cmd_evaluate(ctx: &Ctx, classifier: &Path, dataset: &Path, target: Option<usize>) -> Result<()> {
    let mut m = ManifestBuilder::new("evaluate", &ctx.config_bytes);
    let clf = ctx.load_classifier(classifier)?;
    m.input(&ctx.resolve(classifier));
    let ds = ctx.load_dataset(dataset)?;
    m.input(&ctx.resolve(dataset));
    let acc = evaluate_acc(&clf, &ds)?;
    let mut report = serde_json::json!({
        "acc": acc.acc,
        "per_class_acc": acc.per_class_acc,
        "n_eval": acc.n_eval,
    });
    if let Some(y) = target {
        let trigger = trigger_for(ctx, ds.image_shape())?;
        let asr = evaluate_asr(&clf, &ds, &trigger, y)?;
        report["asr"] = serde_json::json!(asr.asr);
        report["target_class"] = serde_json::json!(y);
    }
    let report_path = ctx.write_report("report-evaluate.json", &report)?;
    m.output(&report_path);
    m.finish(&ctx.out_dir)?;
    Ok(())
}
