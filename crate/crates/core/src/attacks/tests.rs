use super::*;
use crate::datamodel::{synthetic, SplitTag};
use ndarray::Array3;

const SHAPE: (usize, usize, usize) = (32, 32, 3);

fn const_image(v: f32) -> Array3<f32> {
    Array3::from_elem((SHAPE.0, SHAPE.1, SHAPE.2), v)
}

#[test]
fn patch_square_has_exact_support() {
    let t = make_trigger(
        &TriggerSpec::PatchSquare {
            side: 4,
            corner: Corner::BottomRight,
            value: 1.0,
        },
        SHAPE,
    )
    .unwrap();
    assert_eq!(t.nonzero_mask_pixels(), 16);
    // mask is binary with contiguous square support
    for y in 28..32 {
        for x in 28..32 {
            assert_eq!(t.mask()[[y, x, 0]], 1.0);
        }
    }
    assert_eq!(t.mask()[[0, 0, 0]], 0.0);
}

#[test]
fn blend_alpha_zero_is_identity() {
    let t = make_trigger(&TriggerSpec::Blend { alpha: 0.0, pattern_seed: 1 }, SHAPE).unwrap();
    let x = const_image(0.37);
    let y = apply_trigger(&x.view(), &t).unwrap();
    assert_eq!(x, y);
}

#[test]
fn l2_projection_hits_budget_exactly() {
    // the requested smooth pattern on 32x32x3 has norm well above 2
    let t = make_trigger(&TriggerSpec::L2Inv { budget: 2.0, seed: 3 }, SHAPE).unwrap();
    let norm = t
        .pattern()
        .iter()
        .map(|&v| f64::from(v) * f64::from(v))
        .sum::<f64>()
        .sqrt();
    // recompute the norm after projection
    assert!((norm - 2.0).abs() < 1e-4, "pattern norm {norm}");
}

#[test]
fn l2_change_is_within_budget_for_any_input() {
    let t = make_trigger(&TriggerSpec::L2Inv { budget: 2.0, seed: 3 }, SHAPE).unwrap();
    for (i, x) in [const_image(0.0), const_image(1.0), const_image(0.5)]
        .iter()
        .enumerate()
    {
        let y = apply_trigger(&x.view(), &t).unwrap();
        let diff = (&y - x).iter().map(|&d| f64::from(d) * f64::from(d)).sum::<f64>().sqrt();
        assert!(diff <= 2.0 + 1e-5, "case {i}: diff {diff}");
    }
}

#[test]
fn l0_budget_violation_is_rejected() {
    let err = make_trigger(
        &TriggerSpec::L0Inv { pixels: 30, max_pixels: 20, seed: 1 },
        SHAPE,
    );
    assert!(matches!(err, Err(Error::BudgetViolated(_))));
}

#[test]
fn l0_support_respects_budget() {
    let t = make_trigger(
        &TriggerSpec::L0Inv { pixels: 12, max_pixels: 20, seed: 1 },
        SHAPE,
    )
    .unwrap();
    assert_eq!(t.nonzero_mask_pixels(), 12);
    t.validate().unwrap();
}

#[test]
fn smooth_freq_respects_linf_budget() {
    let t = make_trigger(
        &TriggerSpec::SmoothFreq { linf_budget: 0.1, bands: 3, seed: 4 },
        SHAPE,
    )
    .unwrap();
    let x = const_image(0.5);
    let y = apply_trigger(&x.view(), &t).unwrap();
    let max_diff = (&y - &x).iter().fold(0.0f32, |m, &d| m.max(d.abs()));
    assert!(max_diff <= 0.1 + 1e-6, "max diff {max_diff}");
    // it is a genuine perturbation
    assert!(max_diff > 0.05);
}

#[test]
fn zero_mask_is_identity() {
    let mut t = make_trigger(
        &TriggerSpec::PatchSquare { side: 4, corner: Corner::TopLeft, value: 1.0 },
        SHAPE,
    )
    .unwrap();
    t.mask.fill(0.0);
    let x = const_image(0.21);
    let y = apply_trigger(&x.view(), &t).unwrap();
    assert_eq!(x, y);
}

#[test]
fn full_mask_alpha_one_replaces_with_pattern() {
    let mut t = make_trigger(&TriggerSpec::Blend { alpha: 1.0, pattern_seed: 7 }, SHAPE).unwrap();
    t.mask.fill(1.0);
    let x = const_image(0.9);
    let y = apply_trigger(&x.view(), &t).unwrap();
    assert_eq!(y, t.pattern().clone());
}

#[test]
fn half_blend_of_extremes_is_half() {
    let mut t = make_trigger(&TriggerSpec::Blend { alpha: 0.5, pattern_seed: 7 }, SHAPE).unwrap();
    t.pattern.fill(1.0);
    t.mask.fill(1.0);
    let x = const_image(0.0);
    let y = apply_trigger(&x.view(), &t).unwrap();
    assert!(y.iter().all(|&v| (v - 0.5).abs() < 1e-7));
}

#[test]
fn full_mask_apply_is_idempotent() {
    let mut t = make_trigger(&TriggerSpec::Blend { alpha: 1.0, pattern_seed: 9 }, SHAPE).unwrap();
    t.mask.fill(1.0);
    let x = const_image(0.3);
    let once = apply_trigger(&x.view(), &t).unwrap();
    let twice = apply_trigger(&once.view(), &t).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn output_stays_in_unit_range() {
    for spec in [
        TriggerSpec::PatchSquare { side: 6, corner: Corner::TopRight, value: 1.0 },
        TriggerSpec::Watermark { opacity: 0.5 },
        TriggerSpec::Blend { alpha: 0.3, pattern_seed: 2 },
        TriggerSpec::L0Inv { pixels: 9, max_pixels: 16, seed: 2 },
        TriggerSpec::L2Inv { budget: 2.0, seed: 2 },
        TriggerSpec::SmoothFreq { linf_budget: 0.15, bands: 3, seed: 2 },
    ] {
        let t = make_trigger(&spec, SHAPE).unwrap();
        for x in [const_image(0.0), const_image(1.0), const_image(0.4)] {
            let y = apply_trigger(&x.view(), &t).unwrap();
            assert!(y.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }
}

#[test]
fn shape_mismatch_is_rejected() {
    let t = make_trigger(
        &TriggerSpec::PatchSquare { side: 2, corner: Corner::TopLeft, value: 1.0 },
        (8, 8, 3),
    )
    .unwrap();
    let x = Array3::<f32>::zeros((4, 4, 3));
    assert!(matches!(
        apply_trigger(&x.view(), &t),
        Err(Error::ShapeMismatch { .. })
    ));
}

#[test]
fn unknown_kind_is_a_typed_error() {
    let v = serde_json::json!({"kind": "warp", "strength": 1.0});
    assert!(matches!(
        TriggerSpec::parse_json(&v),
        Err(Error::UnknownTriggerKind(k)) if k == "warp"
    ));
}

fn small_dataset(per_class: usize) -> LabeledDataset {
    let cfg = synthetic::SynthConfig {
        classes: 10,
        per_class,
        height: 32,
        width: 32,
        palette_shift: 0.0,
        jitter: 1.0,
        noise: 0.02,
        seed: 77,
        split_tag: SplitTag::Train,
    };
    synthetic::generate(&cfg).unwrap()
}

#[test]
fn poison_count_is_exact_floor() {
    let ds = small_dataset(100); // n = 1000
    let t = make_trigger(
        &TriggerSpec::PatchSquare { side: 4, corner: Corner::BottomRight, value: 1.0 },
        SHAPE,
    )
    .unwrap();
    let out = poison_dataset(&ds, &t, &PoisonSpec { target_class: 0, rate: 0.01, seed: 5 }).unwrap();
    assert_eq!(out.dataset.len(), 1000);
    let flagged = out.flags.iter().filter(|&&f| f).count();
    assert_eq!(flagged, 10);
    for (i, &f) in out.flags.iter().enumerate() {
        if f {
            assert_eq!(out.dataset.labels()[i], 0);
            assert_ne!(ds.labels()[i], 0, "poisoned samples exclude the target class");
        } else {
            assert_eq!(out.dataset.image(i), ds.image(i), "unflagged samples bit-exact");
            assert_eq!(out.dataset.labels()[i], ds.labels()[i]);
        }
    }
}

#[test]
fn poison_rate_zero_is_a_noop() {
    let ds = small_dataset(5);
    let t = make_trigger(
        &TriggerSpec::PatchSquare { side: 4, corner: Corner::BottomRight, value: 1.0 },
        SHAPE,
    )
    .unwrap();
    let out = poison_dataset(&ds, &t, &PoisonSpec { target_class: 0, rate: 0.0, seed: 5 }).unwrap();
    assert_eq!(out.dataset, ds);
    assert!(out.flags.iter().all(|&f| !f));
    assert!(out.warning.is_none());
}

#[test]
fn tiny_rate_warns_instead_of_failing() {
    let ds = small_dataset(3); // n = 30, rate 0.01 -> 0 samples
    let t = make_trigger(
        &TriggerSpec::PatchSquare { side: 4, corner: Corner::BottomRight, value: 1.0 },
        SHAPE,
    )
    .unwrap();
    let out = poison_dataset(&ds, &t, &PoisonSpec { target_class: 0, rate: 0.01, seed: 5 }).unwrap();
    assert!(out.warning.is_some());
    assert!(out.flags.iter().all(|&f| !f));
}

#[test]
fn bad_target_class_is_rejected() {
    let ds = small_dataset(2);
    let t = make_trigger(
        &TriggerSpec::PatchSquare { side: 4, corner: Corner::BottomRight, value: 1.0 },
        SHAPE,
    )
    .unwrap();
    assert!(matches!(
        poison_dataset(&ds, &t, &PoisonSpec { target_class: 10, rate: 0.1, seed: 5 }),
        Err(Error::LabelOutOfRange { .. })
    ));
}

#[test]
fn half_rate_poisons_half() {
    let ds = small_dataset(10); // n = 100
    let t = make_trigger(&TriggerSpec::Blend { alpha: 0.2, pattern_seed: 3 }, SHAPE).unwrap();
    let out = poison_dataset(&ds, &t, &PoisonSpec { target_class: 1, rate: 0.5, seed: 5 }).unwrap();
    assert_eq!(out.flags.iter().filter(|&&f| f).count(), 50);
}

#[test]
fn poisoning_is_deterministic_in_seed() {
    let ds = small_dataset(5);
    let t = make_trigger(&TriggerSpec::Blend { alpha: 0.2, pattern_seed: 3 }, SHAPE).unwrap();
    let spec = PoisonSpec { target_class: 2, rate: 0.2, seed: 9 };
    let a = poison_dataset(&ds, &t, &spec).unwrap();
    let b = poison_dataset(&ds, &t, &spec).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.flags, b.flags);
}
