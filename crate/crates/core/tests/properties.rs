//! Seeded property sweeps over the poisoning, metric, and serialization
//! invariants, each checked against small independent oracles written in
//! this file.

use grasp_core::data::{dataset_from_bytes, dataset_to_bytes, synthetic_dataset, SyntheticKind};
use grasp_core::inversion::binarize_mask;
use grasp_core::metrics::{auc_pair_counts, epsilon4_auc};
use grasp_core::nn::{mlp_arch, model_from_bytes, model_to_bytes, Model};
use grasp_core::poison::{
    amend, amend_soft, grasp_poison, trigger_from_json, trigger_to_json, NoiseKind, PoisonPlan,
    Provenance, Trigger,
};
use grasp_core::rng::{self, tags};
use grasp_core::tensor::Tensor;
use rand::Rng;

fn random_trigger(d: usize, rng: &mut impl Rng) -> Trigger {
    loop {
        let mask: Vec<f32> = (0..d)
            .map(|_| if rng.random_range(0.0..1.0) < 0.3 { 1.0 } else { 0.0 })
            .collect();
        if mask.iter().sum::<f32>() == 0.0 {
            continue;
        }
        let pattern: Vec<f32> = (0..d).map(|_| rng.random_range(0.0f32..=1.0)).collect();
        return Trigger::new(
            Tensor::from_vec(&[d], mask).unwrap(),
            Tensor::from_vec(&[d], pattern).unwrap(),
        )
        .unwrap();
    }
}

#[test]
fn amending_is_idempotent_and_respects_edge_masks() {
    let mut rng = rng::stream(50, tags::DATASET);
    for _ in 0..40 {
        let d = rng.random_range(3..20);
        let x_data: Vec<f32> = (0..d).map(|_| rng.random_range(0.0f32..=1.0)).collect();
        let x = Tensor::from_vec(&[d], x_data.clone()).unwrap();
        let t = random_trigger(d, &mut rng);

        let once = amend(&x, &t).unwrap();
        let twice = amend(&once, &t).unwrap();
        assert_eq!(once.data(), twice.data(), "amend must be exactly idempotent");

        // Empty soft mask leaves the input bit-identical.
        let zeros = Tensor::zeros(&[d]);
        let same = amend_soft(&x, &zeros, t.pattern()).unwrap();
        assert_eq!(same.data(), x.data());

        // Full mask replaces every pixel with the pattern bit-identically.
        let ones = Tensor::full(&[d], 1.0);
        let replaced = amend_soft(&x, &ones, t.pattern()).unwrap();
        assert_eq!(replaced.data(), t.pattern().data());

        // Pixels stay in range when inputs and pattern are in range.
        for &v in once.data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn poison_counts_match_an_independent_enumeration() {
    for (gi, &n) in [40usize, 100, 333, 1000].iter().enumerate() {
        let data = synthetic_dataset(SyntheticKind::Blobs, n, gi as u64).unwrap();
        let d: usize = data.item_shape().iter().product();
        let mut trng = rng::stream(gi as u64, tags::DATASET);
        let t = random_trigger(d, &mut trng);
        for (ai, &alpha) in [0.03f64, 0.06, 0.2].iter().enumerate() {
            if alpha * (n as f64) < 1.0 {
                continue;
            }
            for (bi, &beta) in [0.0f64, 0.05, 0.5, 0.9].iter().enumerate() {
                let plan = PoisonPlan {
                    alpha,
                    beta,
                    noise_scale: 0.1,
                    noise: NoiseKind::Normal,
                    target: 1,
                    seed: (gi * 100 + ai * 10 + bi) as u64,
                };
                let poisoned = grasp_poison(&data, &t, &plan).unwrap();

                // Oracle: enumerate shuffled positions with the same float
                // comparisons the insertion rule defines.
                let nf = n as f64;
                let mut expect_trigger = 0usize;
                let mut expect_noisy = 0usize;
                for i in 0..n {
                    if (i as f64) < alpha * beta * nf {
                        expect_noisy += 1;
                    }
                    if (i as f64) < alpha * nf {
                        expect_trigger += 1;
                    }
                }
                assert_eq!(poisoned.counts.trigger_target, expect_trigger, "{plan:?}");
                assert_eq!(poisoned.counts.noisy_source, expect_noisy, "{plan:?}");
                assert_eq!(poisoned.counts.clean, n);
                assert_eq!(
                    poisoned.dataset.len(),
                    n + expect_trigger + expect_noisy,
                    "{plan:?}"
                );

                // Originals keep their positions and provenance.
                for i in 0..n {
                    assert_eq!(poisoned.provenance[i], Provenance::Clean);
                    assert_eq!(poisoned.dataset.images[i].data(), data.images[i].data());
                    assert_eq!(poisoned.dataset.labels[i], data.labels[i]);
                }
                let (mut seen_trigger, mut seen_noisy) = (0usize, 0usize);
                for (i, p) in poisoned.provenance.iter().enumerate().skip(n) {
                    match p {
                        Provenance::TriggerTarget => {
                            seen_trigger += 1;
                            assert_eq!(poisoned.dataset.labels[i], 1);
                        }
                        Provenance::NoisySource => seen_noisy += 1,
                        Provenance::Clean => panic!("appended sample tagged clean"),
                    }
                    for &v in poisoned.dataset.images[i].data() {
                        assert!((0.0..=1.0).contains(&v), "pixel out of range");
                    }
                }
                assert_eq!(seen_trigger, expect_trigger);
                assert_eq!(seen_noisy, expect_noisy);
            }
        }
    }
}

#[test]
fn auc_matches_brute_force_counting_on_random_score_sets() {
    let mut rng = rng::stream(77, tags::DATASET);
    for _ in 0..100 {
        let nb = rng.random_range(1..20);
        let nc = rng.random_range(1..20);
        // Coarse grid scores force plenty of ties.
        let backdoored: Vec<f64> = (0..nb)
            .map(|_| rng.random_range(0..8) as f64 / 4.0)
            .collect();
        let clean: Vec<f64> = (0..nc)
            .map(|_| rng.random_range(0..8) as f64 / 4.0)
            .collect();

        // Brute-force oracle: count every pair, one division at the end.
        let mut wins = 0u64;
        let mut ties = 0u64;
        for &s in &backdoored {
            for &c in &clean {
                if s > c {
                    wins += 1;
                } else if s == c {
                    ties += 1;
                }
            }
        }
        let pairs = (nb * nc) as u64;
        let oracle = (2 * wins + ties) as f64 / (2 * pairs) as f64;
        let auc = epsilon4_auc(&backdoored, &clean).unwrap();
        assert_eq!(auc.to_bits(), oracle.to_bits(), "AUC must match brute force exactly");

        // Antisymmetry at integer level.
        let (w_f, t_f, p_f) = auc_pair_counts(&backdoored, &clean).unwrap();
        let (w_r, t_r, p_r) = auc_pair_counts(&clean, &backdoored).unwrap();
        assert_eq!(p_f, p_r);
        assert_eq!(t_f, t_r);
        assert_eq!(w_f + w_r + t_f, p_f);

        // Strictly increasing transforms preserve order, hence the AUC.
        let grow = |v: f64| v * v * v + 2.0 * v;
        let tb: Vec<f64> = backdoored.iter().map(|&v| grow(v)).collect();
        let tc: Vec<f64> = clean.iter().map(|&v| grow(v)).collect();
        let transformed = epsilon4_auc(&tb, &tc).unwrap();
        assert_eq!(auc.to_bits(), transformed.to_bits());
    }
}

#[test]
fn binarize_respects_the_inclusive_threshold_everywhere() {
    let mut rng = rng::stream(31, tags::DATASET);
    for _ in 0..30 {
        let d = rng.random_range(2..40);
        let mask_data: Vec<f32> = (0..d).map(|_| rng.random_range(0.0f32..=1.0)).collect();
        let mask = Tensor::from_vec(&[d], mask_data.clone()).unwrap();
        let tau = rng.random_range(0.05..0.95);
        let bin = binarize_mask(&mask, tau).unwrap();
        for (i, &v) in bin.data().iter().enumerate() {
            let expected = if mask_data[i] as f64 >= tau { 1.0 } else { 0.0 };
            assert_eq!(v, expected, "coordinate {i} with tau {tau}");
        }
    }
}

#[test]
fn serialization_round_trips_are_exact() {
    let mut rng = rng::stream(88, tags::DATASET);
    for round in 0..10u64 {
        // Trigger JSON.
        let d = rng.random_range(3..12);
        let t = random_trigger(d, &mut rng);
        let back = trigger_from_json(&trigger_to_json(&t).unwrap()).unwrap();
        assert_eq!(t.mask().data(), back.mask().data());
        assert_eq!(t.pattern().data(), back.pattern().data());

        // Dataset container.
        let data = synthetic_dataset(SyntheticKind::Stripes, 6, round).unwrap();
        let bytes = dataset_to_bytes(&data).unwrap();
        let parsed = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(data.labels, parsed.labels);
        for (a, b) in data.images.iter().zip(&parsed.images) {
            assert_eq!(a.data(), b.data());
        }

        // Model checkpoint.
        let arch = mlp_arch(&[8], 5, 2);
        let model = Model::new_seeded(&[8], 2, &arch, round).unwrap();
        let copy = model_from_bytes(&model_to_bytes(&model).unwrap()).unwrap();
        assert_eq!(model, copy);
    }
}
