use super::*;
use crate::attacks::{make_trigger, poison_dataset, Corner, PoisonSpec, TriggerSpec};
use crate::datamodel::{synthetic, split, SplitTag};
use crate::victim::{train_classifier, ArchSpec, Classifier, ConvSpec, TrainConfig, TrainLog};

fn small_world() -> (Classifier, crate::datamodel::LabeledDataset, Trigger) {
    let cfg = synthetic::SynthConfig {
        classes: 3,
        per_class: 40,
        height: 16,
        width: 16,
        palette_shift: 0.0,
        jitter: 1.0,
        noise: 0.02,
        seed: 50,
        split_tag: SplitTag::Train,
    };
    let ds = synthetic::generate(&cfg).unwrap();
    let t = make_trigger(
        &TriggerSpec::PatchSquare { side: 3, corner: Corner::BottomRight, value: 1.0 },
        (16, 16, 3),
    )
    .unwrap();
    let poisoned = poison_dataset(&ds, &t, &PoisonSpec { target_class: 0, rate: 0.05, seed: 1 })
        .unwrap()
        .dataset;
    let arch = ArchSpec {
        input: (16, 16, 3),
        conv: vec![ConvSpec { out_ch: 8, k: 3, stride: 2, pad: 0 }],
        hidden: vec![24],
        classes: 3,
    };
    let c = train_classifier(
        &poisoned,
        &arch,
        &TrainConfig {
            epochs: 25,
            batch_size: 32,
            lr: 2e-3,
            seed: 3,
        },
    )
    .unwrap();
    (c, ds, t)
}

fn tiny_defense_cfg() -> DefenseConfig {
    DefenseConfig {
        inner_steps: 5,
        inner_step_size: 12.0,
        inner_budget: 16.0 / 255.0,
        outer_rounds: 2,
        outer_lr: 5e-4,
        outer_epochs: 1,
        batch_size: 32,
        seed: 0,
    }
}

#[test]
fn constant_classifier_keeps_zero_trigger() {
    let (_, ds, _) = small_world();
    let arch = ArchSpec {
        input: (16, 16, 3),
        conv: vec![],
        hidden: vec![],
        classes: 3,
    };
    let (net, _) = arch.build().unwrap();
    // zero weights, fixed bias: output constant, loss independent of delta
    let mut params = vec![0.0; net.param_count()];
    let nb = params.len();
    params[nb - 3] = 2.0;
    let c = Classifier::from_params(arch, params, TrainLog::default()).unwrap();
    let (delta, norm) = synthesize_trigger(&c, &ds, &tiny_defense_cfg()).unwrap();
    assert!(delta.iter().all(|&v| v == 0.0), "smallest-norm tie-break");
    assert_eq!(norm, 0.0);
}

#[test]
fn zero_inner_steps_returns_zeros() {
    let (c, ds, _) = small_world();
    let mut cfg = tiny_defense_cfg();
    cfg.inner_steps = 0;
    let (delta, norm) = synthesize_trigger(&c, &ds, &cfg).unwrap();
    assert!(delta.iter().all(|&v| v == 0.0));
    assert_eq!(norm, 0.0);
}

#[test]
fn synthesized_trigger_respects_linf_budget_exactly() {
    let (c, ds, _) = small_world();
    let cfg = tiny_defense_cfg();
    let (delta, norm) = synthesize_trigger(&c, &ds, &cfg).unwrap();
    let linf = delta.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    assert!(linf <= cfg.inner_budget + 1e-15, "projection invariant");
    assert!(norm > 0.0, "a trained model yields a nonzero perturbation");
}

#[test]
fn unlearn_does_not_mutate_input_and_reports_are_recomputable() {
    let (c, ds, t) = small_world();
    let (eval_set, base_pool) = split(&ds, 0.5, 7).unwrap();
    let base = {
        let mut idx = Vec::new();
        for k in 0..3 {
            idx.extend(base_pool.indices_of_class(k).into_iter().take(10));
        }
        base_pool.subset(&idx, SplitTag::Train)
    };
    let params_before = c.params().to_vec();
    let ctx = EvalContext {
        eval_set: &eval_set,
        trigger: &t,
        target_class: 0,
    };
    let (repaired, report) = unlearn(&c, &base, &tiny_defense_cfg(), &ctx).unwrap();
    assert_eq!(c.params(), &params_before[..], "input classifier untouched");
    assert_ne!(repaired.params(), c.params(), "repaired model is distinct");
    // metrics recomputable bit-exactly from the returned classifier
    let acc = evaluate_acc(&repaired, &eval_set).unwrap().acc;
    let asr = evaluate_asr(&repaired, &eval_set, &t, 0).unwrap().asr;
    assert_eq!(acc, report.acc_after);
    assert_eq!(asr, report.asr_after);
    report.validate().unwrap();
    assert_eq!(report.rounds.len(), 2);
}

#[test]
fn unlearn_is_deterministic() {
    let (c, ds, t) = small_world();
    let (eval_set, base) = split(&ds, 0.5, 9).unwrap();
    let ctx = EvalContext {
        eval_set: &eval_set,
        trigger: &t,
        target_class: 0,
    };
    let (r1, rep1) = unlearn(&c, &base, &tiny_defense_cfg(), &ctx).unwrap();
    let (r2, rep2) = unlearn(&c, &base, &tiny_defense_cfg(), &ctx).unwrap();
    assert_eq!(r1.params(), r2.params());
    assert_eq!(rep1.asr_after, rep2.asr_after);
    assert_eq!(rep1.acc_after, rep2.acc_after);
}

fn synth_base(n_per_class: usize, classes: usize) -> SynthesisResult {
    // hand-assembled synthesis result carrying a constant base set
    let images: Vec<(Vec<f64>, usize)> = (0..classes)
        .flat_map(|k| {
            (0..n_per_class).map(move |i| {
                (vec![0.1 + 0.01 * i as f64; 16 * 16 * 3], k)
            })
        })
        .collect();
    let base_set =
        crate::inversion::images_to_dataset(&images, (16, 16, 3), classes, 0).unwrap();
    SynthesisResult {
        classes: (0..classes).collect(),
        latents: ndarray::Array3::zeros((classes, n_per_class, 4)),
        deltas: ndarray::Array2::zeros((classes, 16 * 16 * 3)),
        traces: vec![],
        base_set,
        selected: vec![],
        final_losses: vec![],
        weights: crate::inversion::LossWeights::new(1.0, 0.0, 0.0, 0.0).unwrap(),
        seed: 0,
    }
}

#[test]
fn boost_counts_add_up() {
    // 1 clean per class + 20 synthesized per class over 10 classes -> 210
    let cfg = synthetic::SynthConfig {
        classes: 10,
        per_class: 1,
        height: 16,
        width: 16,
        palette_shift: 0.0,
        jitter: 1.0,
        noise: 0.0,
        seed: 3,
        split_tag: SplitTag::Train,
    };
    let clean = synthetic::generate(&cfg).unwrap();
    let synth = synth_base(20, 10);
    let boosted = boost_base_set(&clean, &synth).unwrap();
    assert_eq!(boosted.dataset.len(), 210);
    assert_eq!(boosted.provenance_clean.iter().filter(|&&p| p).count(), 10);
}

#[test]
fn boost_with_empty_synth_returns_clean() {
    let cfg = synthetic::SynthConfig {
        classes: 3,
        per_class: 2,
        height: 16,
        width: 16,
        palette_shift: 0.0,
        jitter: 1.0,
        noise: 0.0,
        seed: 4,
        split_tag: SplitTag::Train,
    };
    let clean = synthetic::generate(&cfg).unwrap();
    let synth = synth_base(0, 3);
    let boosted = boost_base_set(&clean, &synth).unwrap();
    assert_eq!(boosted.dataset, clean);
}

#[test]
fn boost_rejects_class_mismatch() {
    let cfg = synthetic::SynthConfig {
        classes: 3,
        per_class: 2,
        height: 16,
        width: 16,
        palette_shift: 0.0,
        jitter: 1.0,
        noise: 0.0,
        seed: 5,
        split_tag: SplitTag::Train,
    };
    let clean = synthetic::generate(&cfg).unwrap();
    let synth = synth_base(2, 5);
    assert!(matches!(
        boost_base_set(&clean, &synth),
        Err(Error::Config(_))
    ));
}

#[test]
fn pgd_zero_steps_is_identity_attack() {
    let (c, ds, _) = small_world();
    let pgd = PgdConfig {
        epsilon: 8.0 / 255.0,
        steps: 0,
        step_size: 0.01,
        seed: 0,
    };
    let robust = pgd_robust_accuracy(&c, &ds, &pgd).unwrap();
    let clean = evaluate_acc(&c, &ds).unwrap().acc;
    assert_eq!(robust, clean);
}

#[test]
fn pgd_attack_lowers_accuracy() {
    let (c, ds, _) = small_world();
    let pgd = PgdConfig {
        epsilon: 16.0 / 255.0,
        steps: 10,
        step_size: 4.0 / 255.0,
        seed: 0,
    };
    let robust = pgd_robust_accuracy(&c, &ds, &pgd).unwrap();
    let clean = evaluate_acc(&c, &ds).unwrap().acc;
    assert!(robust < clean, "robust {robust} vs clean {clean}");
}

#[test]
fn adversarial_finetune_returns_report_with_three_budgets() {
    let (c, ds, _) = small_world();
    let (eval_set, base) = split(&ds, 0.7, 11).unwrap();
    let pgd = PgdConfig {
        epsilon: 8.0 / 255.0,
        steps: 3,
        step_size: 2.0 / 255.0,
        seed: 2,
    };
    let mut cfg = tiny_defense_cfg();
    cfg.outer_rounds = 1;
    let (_, report) = adversarial_finetune(&c, &base, &pgd, &cfg, &eval_set).unwrap();
    assert_eq!(report.robustness.len(), 3);
    assert!((report.robustness[0].0 - 8.0 / 255.0).abs() < 1e-12);
    assert!((0.0..=1.0).contains(&report.clean_acc));
}
