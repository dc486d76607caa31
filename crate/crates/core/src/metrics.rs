//! Attack and defense effectiveness measurements: attack success rate,
//! trigger unlearning, and the four comparison metrics (ASR shift under
//! unlearning, mask overlap, clean-model transfer, and zoo-level AUC).

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{sgd_train, LossKind, Model, TrainConfig};
use crate::poison::amend_soft;
use crate::rng::{self, tags};
use crate::tensor::Tensor;

/// Fraction of samples the model labels correctly.
pub fn accuracy(model: &Model, data: &Dataset) -> Result<f64> {
    data.check_compatible(model)?;
    let mut hits = 0usize;
    let all: Vec<usize> = (0..data.len()).collect();
    for chunk in all.chunks(256) {
        let (batch, labels) = data.gather(chunk)?;
        for (pred, label) in model.predict(&batch)?.into_iter().zip(labels) {
            hits += usize::from(pred == label);
        }
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Attack success rate: the fraction of samples whose trigger-amended image
/// the model assigns to the target class.
///
/// The mask may be fractional (recovered triggers are), so amending blends
/// rather than overwrites. With `exclude_target_class` set (the default
/// convention), samples already labeled `y_t` do not count toward either
/// side of the rate.
pub fn asr(
    model: &Model,
    data: &Dataset,
    mask: &Tensor,
    pattern: &Tensor,
    y_t: usize,
    exclude_target_class: bool,
) -> Result<f64> {
    data.check_compatible(model)?;
    if mask.shape() != data.item_shape() || pattern.shape() != data.item_shape() {
        return Err(Error::ShapeMismatch {
            context: "asr trigger vs dataset items",
            expected: data.item_shape().to_vec(),
            got: if mask.shape() != data.item_shape() {
                mask.shape().to_vec()
            } else {
                pattern.shape().to_vec()
            },
        });
    }
    if y_t >= data.num_classes {
        return Err(Error::LabelOutOfRange {
            label: y_t,
            num_classes: data.num_classes,
        });
    }
    let keep: Vec<usize> = (0..data.len())
        .filter(|&i| !exclude_target_class || data.labels[i] != y_t)
        .collect();
    if keep.is_empty() {
        return Err(Error::Empty(
            "no samples left for ASR after excluding the target class".into(),
        ));
    }
    let mut hits = 0usize;
    for chunk in keep.chunks(256) {
        let amended: Vec<Tensor> = chunk
            .iter()
            .map(|&i| amend_soft(&data.images[i], mask, pattern))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor> = amended.iter().collect();
        let batch = Tensor::stack(&refs)?;
        for pred in model.predict(&batch)? {
            hits += usize::from(pred == y_t);
        }
    }
    Ok(hits as f64 / keep.len() as f64)
}

// ---------------------------------------------------------------------------
// Unlearning
// ---------------------------------------------------------------------------

/// Learning rate the unlearning protocol fine-tunes with.
pub const UNLEARN_LEARNING_RATE: f32 = 0.01;
/// Momentum the unlearning protocol fine-tunes with.
pub const UNLEARN_MOMENTUM: f32 = 0.9;

/// Epoch budget and sampling seed for the unlearning fine-tune. The
/// learning rate and momentum are fixed by the protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnlearnConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for UnlearnConfig {
    fn default() -> Self {
        UnlearnConfig {
            epochs: 5,
            batch_size: 32,
            seed: 0,
        }
    }
}

/// Sizes used by [`unlearn`] for a given training-set length: the seeded
/// subsample drawn from the training data and the stamped prefix inside it.
pub fn unlearn_set_sizes(n_train: usize) -> (usize, usize) {
    let subset = (n_train / 10).max(1);
    let stamped = (subset / 10).max(1);
    (subset, stamped)
}

/// Fine-tunes a model so that trigger-stamped inputs revert to their source
/// labels.
///
/// Builds an unlearning set from a seeded 10% subsample of the training
/// data, stamps the recovered trigger onto the first tenth of it while
/// keeping the original labels, and fine-tunes with SGD at the protocol's
/// fixed learning rate and momentum. Zero epochs return the model unchanged.
pub fn unlearn(
    model: &Model,
    mask: &Tensor,
    pattern: &Tensor,
    train_data: &Dataset,
    cfg: &UnlearnConfig,
) -> Result<Model> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("unlearn batch_size must be at least 1".into()));
    }
    train_data.check_compatible(model)?;
    let (subset_size, stamped) = unlearn_set_sizes(train_data.len());
    let subset = train_data.subsample(subset_size, rng::derive_seed(cfg.seed, tags::UNLEARN))?;

    // The subsample is already in seeded shuffle order. Stamping cycles
    // through the classes so the stamped set keeps counter-examples for
    // every source class; a uniform pick from a tiny subset can land
    // entirely on the trigger's own target class, which teaches nothing.
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); subset.num_classes];
    for (i, &label) in subset.labels.iter().enumerate() {
        by_class[label].push(i);
    }
    let mut chosen = Vec::with_capacity(stamped);
    let mut depth = 0;
    'fill: loop {
        let mut advanced = false;
        for class in &by_class {
            if chosen.len() == stamped {
                break 'fill;
            }
            if let Some(&i) = class.get(depth) {
                chosen.push(i);
                advanced = true;
            }
        }
        if !advanced {
            break;
        }
        depth += 1;
    }
    let mut images: Vec<Tensor> = subset.images.to_vec();
    for &i in &chosen {
        images[i] = amend_soft(&images[i], mask, pattern)?;
    }
    let unlearn_set = Dataset::new(images, subset.labels.clone(), subset.num_classes)?;

    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: UNLEARN_LEARNING_RATE,
        momentum: UNLEARN_MOMENTUM,
        loss: LossKind::CrossEntropy,
        seed: rng::derive_seed(rng::derive_seed(cfg.seed, tags::UNLEARN), 1),
    };
    sgd_train(model, &unlearn_set, &train_cfg)
}

// ---------------------------------------------------------------------------
// Effectiveness metrics
// ---------------------------------------------------------------------------

/// Absolute ASR shift caused by unlearning. Both inputs are rates in [0, 1].
pub fn epsilon1(asr_before: f64, asr_after: f64) -> f64 {
    (asr_before - asr_after).abs()
}

/// Jaccard overlap between two binary masks: `|A and B| / |A or B|`.
/// Two empty masks have no defined overlap.
pub fn epsilon2_jaccard(mask_a: &Tensor, mask_b: &Tensor) -> Result<f64> {
    if mask_a.shape() != mask_b.shape() {
        return Err(Error::ShapeMismatch {
            context: "jaccard masks",
            expected: mask_a.shape().to_vec(),
            got: mask_b.shape().to_vec(),
        });
    }
    for t in [mask_a, mask_b] {
        if !t.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::Config("jaccard masks must be binary".into()));
        }
    }
    let mut a = 0usize;
    let mut b = 0usize;
    let mut both = 0usize;
    for (&x, &y) in mask_a.data().iter().zip(mask_b.data()) {
        a += usize::from(x == 1.0);
        b += usize::from(y == 1.0);
        both += usize::from(x == 1.0 && y == 1.0);
    }
    if a + b == 0 {
        return Err(Error::Empty("jaccard of two empty masks is undefined".into()));
    }
    Ok(both as f64 / (a + b - both) as f64)
}

/// ASR of a recovered trigger on a model trained without poisoning,
/// measured over the non-target portion of a clean source set.
pub fn epsilon3(
    clean_model: &Model,
    mask: &Tensor,
    pattern: &Tensor,
    y_t: usize,
    clean_source_set: &Dataset,
) -> Result<f64> {
    asr(clean_model, clean_source_set, mask, pattern, y_t, true)
}

/// Win/tie counts for ranking backdoored scores above clean scores.
pub fn auc_pair_counts(
    scores_backdoored: &[f64],
    scores_clean: &[f64],
) -> Result<(u64, u64, u64)> {
    if scores_backdoored.is_empty() || scores_clean.is_empty() {
        return Err(Error::Empty("AUC needs scores on both sides".into()));
    }
    for &s in scores_backdoored.iter().chain(scores_clean) {
        if !s.is_finite() {
            return Err(Error::Numeric(format!("AUC scores must be finite, got {s}")));
        }
    }
    let mut wins = 0u64;
    let mut ties = 0u64;
    for &sb in scores_backdoored {
        for &sc in scores_clean {
            if sb > sc {
                wins += 1;
            } else if sb == sc {
                ties += 1;
            }
        }
    }
    let pairs = scores_backdoored.len() as u64 * scores_clean.len() as u64;
    Ok((wins, ties, pairs))
}

/// Detection AUC by exhaustive pair counting: the probability that a
/// backdoored model's score exceeds a clean model's, counting ties as half.
pub fn epsilon4_auc(scores_backdoored: &[f64], scores_clean: &[f64]) -> Result<f64> {
    let (wins, ties, pairs) = auc_pair_counts(scores_backdoored, scores_clean)?;
    Ok((2 * wins + ties) as f64 / (2 * pairs) as f64)
}

/// One run's effectiveness summary. `epsilon4` is a zoo-level quantity and
/// is absent on single-model reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub asr_before: f64,
    pub asr_after_unlearn: f64,
    pub epsilon1: f64,
    pub epsilon2: f64,
    pub epsilon3: f64,
    pub epsilon4: Option<f64>,
    pub clean_accuracy: f64,
    pub clean_accuracy_after_unlearn: f64,
    pub unlearn_set_size: usize,
    pub unlearn_stamped: usize,
    pub epsilon3_sources: usize,
    pub exclude_target_class: bool,
    pub unlearn_config: UnlearnConfig,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_dataset, SyntheticKind};
    use crate::nn::{mlp_arch, Layer};
    use crate::poison::{baseline_poison, Trigger};

    /// Model whose logits are the bias vector regardless of input.
    fn constant_model(d: usize, biases: Vec<f32>) -> Model {
        let k = biases.len();
        let layer = Layer::dense(d, k, vec![0.0; d * k], biases).unwrap();
        Model::from_layers(&[d], k, vec![layer]).unwrap()
    }

    fn unit_trigger(d: usize, masked: &[usize], value: f32) -> Trigger {
        let mut mask = Tensor::zeros(&[d]);
        let mut pattern = Tensor::zeros(&[d]);
        for &i in masked {
            mask.data_mut()[i] = 1.0;
            pattern.data_mut()[i] = value;
        }
        Trigger::new(mask, pattern).unwrap()
    }

    #[test]
    fn asr_extremes() {
        let data = synthetic_dataset(SyntheticKind::Blobs, 30, 1).unwrap();
        let t = unit_trigger(16, &[0], 1.0);
        let always = constant_model(16, vec![0.0, 5.0]);
        let never = constant_model(16, vec![5.0, 0.0]);
        let got = asr(&always, &data, t.mask(), t.pattern(), 1, true).unwrap();
        assert_eq!(got, 1.0);
        let got = asr(&never, &data, t.mask(), t.pattern(), 1, true).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn asr_equals_per_sample_enumeration() {
        let data = synthetic_dataset(SyntheticKind::Blobs, 40, 3).unwrap();
        let model = Model::new_seeded(&[16], 2, &mlp_arch(&[16], 6, 2), 11).unwrap();
        let t = unit_trigger(16, &[1, 2, 3], 0.95);
        for exclude in [true, false] {
            let mut hits = 0usize;
            let mut total = 0usize;
            for i in 0..data.len() {
                if exclude && data.labels[i] == 1 {
                    continue;
                }
                total += 1;
                let amended = amend_soft(&data.images[i], t.mask(), t.pattern()).unwrap();
                hits += usize::from(model.predict_one(&amended).unwrap() == 1);
            }
            let expect = hits as f64 / total as f64;
            let got = asr(&model, &data, t.mask(), t.pattern(), 1, exclude).unwrap();
            assert_eq!(got, expect, "exclude={exclude}");
        }
    }

    #[test]
    fn asr_with_everything_excluded_is_an_error() {
        let images = vec![Tensor::full(&[4], 0.5); 6];
        let data = Dataset::new(images, vec![1; 6], 2).unwrap();
        let model = constant_model(4, vec![0.0, 1.0]);
        let t = unit_trigger(4, &[0], 1.0);
        let err = asr(&model, &data, t.mask(), t.pattern(), 1, true);
        assert!(err.is_err());
        // Including the target class makes the rate well defined again.
        let got = asr(&model, &data, t.mask(), t.pattern(), 1, false).unwrap();
        assert_eq!(got, 1.0);
    }

    #[test]
    fn epsilon1_is_a_symmetric_absolute_difference() {
        assert!((epsilon1(0.98, 0.03) - 0.95).abs() < 1e-12);
        assert_eq!(epsilon1(0.9, 0.9), 0.0);
        assert_eq!(epsilon1(0.03, 0.98), epsilon1(0.98, 0.03));
    }

    #[test]
    fn jaccard_worked_examples() {
        let m = |bits: &[usize]| {
            let mut t = Tensor::zeros(&[20]);
            for &b in bits {
                t.data_mut()[b] = 1.0;
            }
            t
        };
        let a = m(&[0, 1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(epsilon2_jaccard(&a, &a).unwrap(), 1.0);
        let disjoint = m(&[10, 11]);
        assert_eq!(epsilon2_jaccard(&a, &disjoint).unwrap(), 0.0);
        // 9 and 9 pixels sharing 3: 3 / (9 + 9 - 3) = 0.2.
        let b = m(&[6, 7, 8, 9, 10, 11, 12, 13, 14]);
        assert_eq!(epsilon2_jaccard(&a, &b).unwrap(), 0.2);
        assert_eq!(
            epsilon2_jaccard(&a, &b).unwrap(),
            epsilon2_jaccard(&b, &a).unwrap()
        );
    }

    #[test]
    fn jaccard_rejects_bad_inputs() {
        let empty = Tensor::zeros(&[8]);
        assert!(epsilon2_jaccard(&empty, &empty).is_err());
        let soft = Tensor::full(&[8], 0.5);
        let ones = Tensor::full(&[8], 1.0);
        assert!(epsilon2_jaccard(&soft, &ones).is_err());
        assert!(epsilon2_jaccard(&ones, &Tensor::full(&[9], 1.0)).is_err());
    }

    #[test]
    fn auc_worked_examples() {
        assert_eq!(epsilon4_auc(&[0.9, 0.8], &[0.2, 0.1]).unwrap(), 1.0);
        assert_eq!(epsilon4_auc(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.5);
        // Pairs: (0.9,0.5) win, (0.9,0.1) win, (0.3,0.5) loss, (0.3,0.1) win.
        assert_eq!(epsilon4_auc(&[0.9, 0.3], &[0.5, 0.1]).unwrap(), 0.75);
        assert!(epsilon4_auc(&[], &[0.1]).is_err());
        assert!(epsilon4_auc(&[0.1], &[]).is_err());
        assert!(epsilon4_auc(&[f64::NAN], &[0.1]).is_err());
    }

    #[test]
    fn auc_complementary_counts_are_exact() {
        let b = [0.9, 0.3, 0.5, 0.5, -1.0];
        let c = [0.5, 0.1, 0.9, 0.3];
        let (wins, ties, pairs) = auc_pair_counts(&b, &c).unwrap();
        let (wins_rev, ties_rev, pairs_rev) = auc_pair_counts(&c, &b).unwrap();
        assert_eq!(pairs, pairs_rev);
        assert_eq!(ties, ties_rev);
        assert_eq!(wins + wins_rev + ties, pairs);
        // The float values are complementary up to one rounding.
        let forward = epsilon4_auc(&b, &c).unwrap();
        let reverse = epsilon4_auc(&c, &b).unwrap();
        assert!((forward + reverse - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn zero_epoch_unlearn_keeps_the_model() {
        let data = synthetic_dataset(SyntheticKind::Blobs, 60, 5).unwrap();
        let model = Model::new_seeded(&[16], 2, &mlp_arch(&[16], 6, 2), 3).unwrap();
        let t = unit_trigger(16, &[0, 1], 1.0);
        let cfg = UnlearnConfig {
            epochs: 0,
            ..UnlearnConfig::default()
        };
        let after = unlearn(&model, t.mask(), t.pattern(), &data, &cfg).unwrap();
        assert_eq!(model, after);
        let before = asr(&model, &data, t.mask(), t.pattern(), 1, true).unwrap();
        let after = asr(&after, &data, t.mask(), t.pattern(), 1, true).unwrap();
        assert_eq!(epsilon1(before, after), 0.0);
    }

    #[test]
    fn unlearning_the_planted_trigger_suppresses_the_backdoor() {
        let data = synthetic_dataset(SyntheticKind::Blobs, 400, 9).unwrap();
        let t = unit_trigger(16, &[0, 1, 2], 1.0);
        let poisoned = baseline_poison(&data, &t, 0.1, 1, 4).unwrap();
        let arch = mlp_arch(&[16], 12, 2);
        let train_cfg = TrainConfig {
            epochs: 12,
            seed: 2,
            ..TrainConfig::default()
        };
        let model = sgd_train(
            &Model::new_seeded(&[16], 2, &arch, 8).unwrap(),
            &poisoned.dataset,
            &train_cfg,
        )
        .unwrap();
        let before = asr(&model, &data, t.mask(), t.pattern(), 1, true).unwrap();
        assert!(before > 0.9, "fixture backdoor too weak: {before}");

        let cfg = UnlearnConfig {
            epochs: 20,
            batch_size: 8,
            seed: 1,
        };
        let after_model = unlearn(&model, t.mask(), t.pattern(), &data, &cfg).unwrap();
        let after = asr(&after_model, &data, t.mask(), t.pattern(), 1, true).unwrap();
        assert!(
            after <= before - 0.25,
            "unlearning barely moved ASR: {before} -> {after}"
        );
        // Clean accuracy survives the fine-tune.
        let acc = accuracy(&after_model, &data).unwrap();
        assert!(acc > 0.85, "clean accuracy collapsed to {acc}");
    }

    #[test]
    fn metrics_report_round_trips() {
        let report = MetricsReport {
            asr_before: 0.97,
            asr_after_unlearn: 0.12,
            epsilon1: 0.85,
            epsilon2: 0.4,
            epsilon3: 0.05,
            epsilon4: None,
            clean_accuracy: 0.93,
            clean_accuracy_after_unlearn: 0.92,
            unlearn_set_size: 200,
            unlearn_stamped: 20,
            epsilon3_sources: 450,
            exclude_target_class: true,
            unlearn_config: UnlearnConfig::default(),
        };
        let round = MetricsReport::from_json(&report.to_json().unwrap()).unwrap();
        assert_eq!(report, round);
    }
}
