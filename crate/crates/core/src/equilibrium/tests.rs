use super::*;
use crate::seeds;
use rand::Rng;

fn dd(points: Vec<Vec<f64>>, weights: Vec<f64>) -> DiscreteDistribution {
    DiscreteDistribution::new(points, weights).unwrap()
}

#[test]
fn weight_sum_is_enforced() {
    assert!(matches!(
        DiscreteDistribution::new(vec![vec![0.0]], vec![0.9]),
        Err(Error::WeightSum(_))
    ));
}

#[test]
fn wasserstein_identity_of_indiscernibles() {
    let p = dd(vec![vec![0.0, 1.0], vec![2.0, 0.0]], vec![0.3, 0.7]);
    assert!(wasserstein(&p, &p).unwrap().abs() < 1e-12);
}

#[test]
fn wasserstein_point_masses_cost_their_distance() {
    let p = DiscreteDistribution::dirac(vec![0.0, 0.0]);
    let q = DiscreteDistribution::dirac(vec![3.0, 4.0]);
    assert!((wasserstein(&p, &q).unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn wasserstein_two_point_instance_by_enumeration() {
    // P = ½δ_0 + ½δ_2, Q = δ_1 in R: only coupling moves each half by 1
    let p = dd(vec![vec![0.0], vec![2.0]], vec![0.5, 0.5]);
    let q = DiscreteDistribution::dirac(vec![1.0]);
    let w = wasserstein(&p, &q).unwrap();
    // exhaustive check over the one feasible coupling: cost = 0.5·1 + 0.5·1
    assert!((w - 1.0).abs() < 1e-12);
}

#[test]
fn wasserstein_metric_axioms_on_random_probes() {
    let mut rng = seeds::rng(90, "w-axioms", 0);
    for _ in 0..8 {
        let rand_dist = |rng: &mut rand_chacha::ChaCha8Rng| {
            let n = rng.random_range(2..4usize);
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
                .collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            dd(points, raw.into_iter().map(|w| w / s).collect())
        };
        let a = rand_dist(&mut rng);
        let b = rand_dist(&mut rng);
        let c = rand_dist(&mut rng);
        let dab = wasserstein(&a, &b).unwrap();
        let dba = wasserstein(&b, &a).unwrap();
        let dac = wasserstein(&a, &c).unwrap();
        let dcb = wasserstein(&c, &b).unwrap();
        assert!((dab - dba).abs() < 1e-9, "symmetry");
        assert!(dab <= dac + dcb + 1e-9, "triangle inequality");
        assert!(dab >= 0.0);
    }
}

#[test]
fn payoff_of_identical_distributions_is_zero_for_every_d() {
    let p = dd(vec![vec![0.0], vec![1.0]], vec![0.4, 0.6]);
    for vals in [[0.0, 0.0], [1.0, 0.5], [0.3, 0.9]] {
        let d = LipschitzDiscriminator {
            points: p.points().to_vec(),
            values: vals.to_vec(),
        };
        assert_eq!(payoff(&d, &p, &p).unwrap(), 0.0);
    }
}

#[test]
fn payoff_is_antisymmetric_under_swap() {
    let p = dd(vec![vec![0.0], vec![1.0]], vec![0.4, 0.6]);
    let q = dd(vec![vec![0.0], vec![1.0]], vec![0.8, 0.2]);
    let d = LipschitzDiscriminator {
        points: p.points().to_vec(),
        values: vec![0.9, 0.1],
    };
    let f1 = payoff(&d, &q, &p).unwrap();
    let f2 = payoff(&d, &p, &q).unwrap();
    assert!((f1 + f2).abs() < 1e-12);
}

#[test]
fn payoff_hand_instance() {
    // real = δ_0, gen = δ_1, D(x) = clip(1 - ‖x‖): D(0) - D(1) = 1
    let real = DiscreteDistribution::dirac(vec![0.0]);
    let gen = DiscreteDistribution::dirac(vec![1.0]);
    let d = LipschitzDiscriminator {
        points: vec![vec![0.0], vec![1.0]],
        values: vec![1.0, 0.0],
    };
    d.validate().unwrap();
    assert!((payoff(&d, &gen, &real).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn payoff_missing_support_value_is_typed() {
    let real = DiscreteDistribution::dirac(vec![0.0]);
    let gen = DiscreteDistribution::dirac(vec![5.0]);
    let d = LipschitzDiscriminator {
        points: vec![vec![0.0]],
        values: vec![1.0],
    };
    assert!(matches!(
        payoff(&d, &gen, &real),
        Err(Error::MissingSupportValue(_))
    ));
}

#[test]
fn best_discriminator_identical_distributions() {
    let p = dd(vec![vec![0.0], vec![1.5]], vec![0.5, 0.5]);
    let (d, value) = best_discriminator(&p, &p).unwrap();
    assert!(value.abs() < 1e-9, "optimal value 0");
    // the secondary objective drives values to 1 on the support
    assert!(d.values.iter().all(|&v| (v - 1.0).abs() < 1e-9));
}

#[test]
fn best_discriminator_two_diracs_at_unit_distance() {
    let real = DiscreteDistribution::dirac(vec![0.0]);
    let p1 = DiscreteDistribution::dirac(vec![1.0]);
    let (d, value) = best_discriminator(&real, &p1).unwrap();
    assert!((value - 1.0).abs() < 1e-9, "optimal value 1");
    assert!((d.value_at(&[0.0]).unwrap() - 1.0).abs() < 1e-9);
    assert!(d.value_at(&[1.0]).unwrap().abs() < 1e-9);
}

#[test]
fn dual_value_never_exceeds_primal_wasserstein() {
    let mut rng = seeds::rng(91, "dual-vs-primal", 0);
    for trial in 0..10 {
        let n = rng.random_range(2..4usize);
        let mk = |rng: &mut rand_chacha::ChaCha8Rng, n: usize| {
            let points: Vec<Vec<f64>> = (0..n)
                .map(|_| vec![rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)])
                .collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            dd(points, raw.into_iter().map(|w| w / s).collect())
        };
        let real = mk(&mut rng, n);
        let p1 = mk(&mut rng, n);
        let (_, dual) = best_discriminator(&real, &p1).unwrap();
        let primal = wasserstein(&real, &p1).unwrap();
        assert!(
            dual <= primal + 1e-9,
            "trial {trial}: dual {dual} > primal {primal}"
        );
        // small supports near the origin rarely hit the box, so the dual
        // usually attains the primal; accept either but never exceed
    }
}

#[test]
fn dual_attains_wasserstein_when_box_inactive() {
    // points within diameter < 1 keep the potential inside (0,1)
    let real = dd(vec![vec![0.0], vec![0.3]], vec![0.5, 0.5]);
    let p1 = dd(vec![vec![0.6], vec![0.2]], vec![0.5, 0.5]);
    let (d, dual) = best_discriminator(&real, &p1).unwrap();
    let primal = wasserstein(&real, &p1).unwrap();
    assert!(
        (dual - primal).abs() < 1e-9,
        "dual {dual} vs primal {primal}"
    );
    d.validate().unwrap();
}

#[test]
fn epsilon_threshold_formula() {
    assert!((epsilon_threshold(0.2, 0.0, 1.0) - 0.1).abs() < 1e-15);
    assert_eq!(epsilon_threshold(0.3, 0.8, 0.8), 0.0);
    assert!(epsilon_threshold(1e-12, 0.0, 1.0) < 1e-10);
}

#[test]
fn q_lower_bound_hand_value() {
    // L = 1, p = 2, B = 0: (1/√2)² / Γ(2) = 0.5
    let q = q_lower_bound(1.0, 2, 0.0).unwrap();
    assert!((q - 0.5).abs() < 1e-10);
}

#[test]
fn q_lower_bound_limits_and_monotonicity() {
    // B → ∞ drives the bound to 0
    assert!(q_lower_bound(1.0, 2, 50.0).unwrap() < 1e-300);
    // decreasing in L on a grid
    let mut prev = f64::INFINITY;
    for l in [0.5, 1.0, 2.0, 4.0, 8.0] {
        let q = q_lower_bound(l, 3, 0.5).unwrap();
        assert!(q < prev, "monotone decreasing in L");
        prev = q;
    }
    // clamped to at most 1
    assert!(q_lower_bound(0.01, 2, 0.0).unwrap() <= 1.0);
}

#[test]
fn audit_q_zero_is_a_true_equilibrium() {
    let real = DiscreteDistribution::dirac(vec![0.0]);
    let p2 = DiscreteDistribution::dirac(vec![2.0]);
    let verdict = audit_equilibrium(
        &real,
        &real,
        &p2,
        &AuditConfig {
            q: 0.0,
            grid_step: 0.25,
            epsilon: 0.1,
            ..AuditConfig::default()
        },
    )
    .unwrap();
    assert!(verdict.min_max_gain.abs() < 1e-12, "verdict 0");
    assert!(!verdict.is_refuted, "equilibrium not refuted");
}

#[test]
fn audit_two_point_instance_matches_theorem() {
    // real = p1 = δ_0, p2 = δ_x with ‖x‖ = 2 (q' = 0), q = 0.2, grid 0.05:
    // theorem threshold = 0.1, brute force verdict ≥ 0.1 − 0.05
    let real = DiscreteDistribution::dirac(vec![0.0, 0.0]);
    let p2 = DiscreteDistribution::dirac(vec![2.0, 0.0]);
    let verdict = audit_equilibrium(&real, &real, &p2, &AuditConfig::default()).unwrap();
    assert!((verdict.measured_q_prime - 0.0).abs() < 1e-12);
    assert!((verdict.e_star - 1.0).abs() < 1e-9);
    assert!((verdict.theorem_bound - 0.1).abs() < 1e-9);
    assert!(
        verdict.min_max_gain >= 0.1 - 0.05 - 1e-12,
        "verdict {} >= threshold - grid",
        verdict.min_max_gain
    );
    assert!(verdict.is_refuted);
    // theorem inequality, grid-slackened
    assert!(verdict.min_max_gain >= verdict.theorem_bound - verdict.grid_step - 1e-12);
}

#[test]
fn audit_without_ood_mass_is_vacuous() {
    // p2 sits on top of p1: measured q' = 1, threshold ≤ 0
    let real = DiscreteDistribution::dirac(vec![0.0]);
    let p2 = DiscreteDistribution::dirac(vec![0.2]);
    let verdict = audit_equilibrium(
        &real,
        &real,
        &p2,
        &AuditConfig {
            grid_step: 0.25,
            ..AuditConfig::default()
        },
    )
    .unwrap();
    assert!((verdict.measured_q_prime - 1.0).abs() < 1e-12);
    assert!(verdict.theorem_bound <= 0.0);
    assert!(verdict.vacuous);
}

#[test]
fn audit_theorem_inequality_on_random_instances() {
    // verdict ≥ ½q(e* − q′) − grid_step on valid instances
    let mut rng = seeds::rng(92, "audit-rand", 0);
    for trial in 0..5 {
        let x = rng.random_range(1.5..3.0);
        let real = DiscreteDistribution::dirac(vec![0.0]);
        let p2 = DiscreteDistribution::dirac(vec![x]);
        let q = rng.random_range(0.1..0.5);
        let verdict = audit_equilibrium(
            &real,
            &real,
            &p2,
            &AuditConfig {
                q,
                grid_step: 0.1,
                epsilon: 0.05,
                ..AuditConfig::default()
            },
        )
        .unwrap();
        assert!(
            verdict.min_max_gain >= verdict.theorem_bound - verdict.grid_step - 1e-9,
            "trial {trial}: gain {} vs bound {}",
            verdict.min_max_gain,
            verdict.theorem_bound
        );
    }
}

#[test]
fn audit_enumeration_cap_is_enforced() {
    let real = dd(
        vec![vec![0.0], vec![0.5], vec![1.0], vec![1.5]],
        vec![0.25; 4],
    );
    let p2 = dd(vec![vec![3.0], vec![4.0], vec![5.0]], vec![1.0 / 3.0; 3]);
    let res = audit_equilibrium(
        &real,
        &real,
        &p2,
        &AuditConfig {
            grid_step: 0.01,
            enumeration_cap: 1000,
            ..AuditConfig::default()
        },
    );
    assert!(matches!(res, Err(Error::EnumerationCap { .. })));
}

#[test]
fn minimal_extension_is_lipschitz_and_zero_far_away() {
    let d = LipschitzDiscriminator {
        points: vec![vec![0.0], vec![0.5]],
        values: vec![1.0, 0.8],
    };
    let ext = d.extend_min(&[vec![3.0], vec![0.9]]);
    ext.validate().unwrap();
    assert_eq!(ext.value_at(&[3.0]).unwrap(), 0.0, "far point floored at 0");
    assert!((ext.value_at(&[0.9]).unwrap() - 0.4).abs() < 1e-12);
}

#[test]
fn audit_instance_roundtrips_through_json() {
    let inst = AuditInstance {
        real: DistSpec {
            points: vec![vec![0.0, 0.0]],
            weights: vec![1.0],
        },
        p1: DistSpec {
            points: vec![vec![0.0, 0.0]],
            weights: vec![1.0],
        },
        p2: DistSpec {
            points: vec![vec![2.0, 0.0]],
            weights: vec![1.0],
        },
        q: 0.2,
        grid_step: 0.05,
        epsilon: 0.04,
        s_ood_radius: 1.0,
        enumeration_cap: 2_000_000,
    };
    let text = serde_json::to_string(&inst).unwrap();
    let back: AuditInstance = serde_json::from_str(&text).unwrap();
    let verdict = back.run().unwrap();
    assert!(verdict.is_refuted);
}
