//! Patch triggers, the amending operator, and the two poisoning strategies:
//! plain label-flipped trigger insertion, and trigger insertion plus noisy
//! copies that keep their source labels. The noisy copies are what blunts
//! mask/pattern inversion later: they teach the model to give the trigger a
//! razor-thin decision region.

use std::fs;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tags};
use crate::stats::ln_gamma;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Trigger
// ---------------------------------------------------------------------------

/// A trigger is a binary mask plus a pattern, both shaped like one input
/// sample. Where the mask is 1 the pattern replaces the pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    mask: Tensor,
    pattern: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

impl Trigger {
    /// Validates that the mask is exactly binary and nonempty, the pattern
    /// lies in `[0, 1]`, and the shapes agree.
    pub fn new(mask: Tensor, pattern: Tensor) -> Result<Self> {
        if mask.shape() != pattern.shape() {
            return Err(Error::ShapeMismatch {
                context: "trigger mask vs pattern",
                expected: mask.shape().to_vec(),
                got: pattern.shape().to_vec(),
            });
        }
        if !mask.data().iter().all(|&v| v == 0.0 || v == 1.0) {
            return Err(Error::Config(
                "trigger mask must contain only 0.0 and 1.0".into(),
            ));
        }
        if !pattern.all_finite() || !pattern.all_in_range(0.0, 1.0) {
            return Err(Error::Config("trigger pattern must lie in [0, 1]".into()));
        }
        let trigger = Trigger { mask, pattern };
        if trigger.m_star() == 0 {
            return Err(Error::Config("trigger mask selects no pixels".into()));
        }
        Ok(trigger)
    }

    /// Square patch of constant value at a corner, one pixel in from the
    /// edges, masked across all channels.
    pub fn patch(item_shape: &[usize], size: usize, corner: Corner, value: f32) -> Result<Self> {
        let &[c, h, w] = item_shape else {
            return Err(Error::ShapeMismatch {
                context: "patch trigger input shape",
                expected: vec![1, 0, 0],
                got: item_shape.to_vec(),
            });
        };
        const INSET: usize = 1;
        if size == 0 || size + 2 * INSET > h || size + 2 * INSET > w {
            return Err(Error::Config(format!(
                "a {size}x{size} patch does not fit a {h}x{w} image with a {INSET}px inset"
            )));
        }
        let (r0, c0) = match corner {
            Corner::TopLeft => (INSET, INSET),
            Corner::TopRight => (INSET, w - INSET - size),
            Corner::BottomLeft => (h - INSET - size, INSET),
            Corner::BottomRight => (h - INSET - size, w - INSET - size),
        };
        let mut mask = Tensor::zeros(item_shape);
        let mut pattern = Tensor::zeros(item_shape);
        for ch in 0..c {
            for r in r0..r0 + size {
                for col in c0..c0 + size {
                    let idx = (ch * h + r) * w + col;
                    mask.data_mut()[idx] = 1.0;
                    pattern.data_mut()[idx] = value;
                }
            }
        }
        Trigger::new(mask, pattern)
    }

    pub fn mask(&self) -> &Tensor {
        &self.mask
    }

    pub fn pattern(&self) -> &Tensor {
        &self.pattern
    }

    /// Number of masked pixels (the L1 norm of the binary mask).
    pub fn m_star(&self) -> usize {
        self.mask.data().iter().filter(|&&v| v == 1.0).count()
    }

    pub fn shape(&self) -> &[usize] {
        self.mask.shape()
    }
}

// JSON trigger file: shape plus base64-encoded little-endian f32 arrays.
#[derive(Debug, Serialize, Deserialize)]
struct TriggerFile {
    shape: Vec<usize>,
    mask: String,
    pattern: String,
}

pub(crate) fn encode_f32(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

pub(crate) fn decode_f32(text: &str, expected_len: usize, what: &str) -> Result<Vec<f32>> {
    let bytes = B64
        .decode(text)
        .map_err(|e| Error::Format(format!("{what}: invalid base64: {e}")))?;
    if bytes.len() != expected_len * 4 {
        return Err(Error::Format(format!(
            "{what}: {} bytes, expected {}",
            bytes.len(),
            expected_len * 4
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect())
}

pub fn trigger_to_json(trigger: &Trigger) -> Result<String> {
    let file = TriggerFile {
        shape: trigger.shape().to_vec(),
        mask: encode_f32(trigger.mask.data()),
        pattern: encode_f32(trigger.pattern.data()),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn trigger_from_json(text: &str) -> Result<Trigger> {
    let file: TriggerFile = serde_json::from_str(text)
        .map_err(|e| Error::Format(format!("trigger file is not valid JSON: {e}")))?;
    let len: usize = file.shape.iter().product();
    let mask = Tensor::from_vec(&file.shape, decode_f32(&file.mask, len, "trigger mask")?)?;
    let pattern = Tensor::from_vec(
        &file.shape,
        decode_f32(&file.pattern, len, "trigger pattern")?,
    )?;
    Trigger::new(mask, pattern)
}

pub fn save_trigger(trigger: &Trigger, path: &Path) -> Result<()> {
    fs::write(path, trigger_to_json(trigger)?)?;
    Ok(())
}

pub fn load_trigger(path: &Path) -> Result<Trigger> {
    trigger_from_json(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Amending
// ---------------------------------------------------------------------------

/// Blends a pattern into an image: `out = (1 - m) * x + m * p` elementwise.
///
/// Accepts fractional masks (used by the inversion optimizer). For binary
/// masks the arithmetic is exact, so amending is exactly idempotent.
pub fn amend_soft(x: &Tensor, mask: &Tensor, pattern: &Tensor) -> Result<Tensor> {
    if x.shape() != mask.shape() || x.shape() != pattern.shape() {
        return Err(Error::ShapeMismatch {
            context: "amend",
            expected: x.shape().to_vec(),
            got: if x.shape() != mask.shape() {
                mask.shape().to_vec()
            } else {
                pattern.shape().to_vec()
            },
        });
    }
    let mut out = x.clone();
    for ((o, &m), &p) in out
        .data_mut()
        .iter_mut()
        .zip(mask.data())
        .zip(pattern.data())
    {
        *o = (1.0 - m) * *o + m * p;
    }
    Ok(out)
}

/// Stamps a trigger onto an image.
pub fn amend(x: &Tensor, trigger: &Trigger) -> Result<Tensor> {
    amend_soft(x, &trigger.mask, &trigger.pattern)
}

// ---------------------------------------------------------------------------
// Poisoning
// ---------------------------------------------------------------------------

/// Where a sample in a poisoned dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// Original sample, untouched.
    Clean,
    /// Trigger stamped on, label flipped to the target class.
    TriggerTarget,
    /// Trigger stamped on with noise added inside the mask, label kept.
    NoisySource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Standard normal per masked pixel, scaled by `noise_scale`.
    Normal,
    /// Uniform on [-1, 1] per masked pixel, scaled by `noise_scale`.
    Uniform,
}

/// Poisoning rates and noise settings.
///
/// Fractions follow the insertion loop exactly: with `n` original samples,
/// trigger-target copies are added for shuffled positions `i < alpha * n`
/// and noisy source-labeled copies for `i < alpha * beta * n`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoisonPlan {
    pub alpha: f64,
    pub beta: f64,
    pub noise_scale: f64,
    pub noise: NoiseKind,
    pub target: usize,
    pub seed: u64,
}

impl PoisonPlan {
    /// 6% trigger-target budget with one noisy copy per twenty (the sparse
    /// preset).
    pub fn sparse_noise(target: usize, seed: u64) -> Self {
        PoisonPlan {
            alpha: 0.06,
            beta: 0.05,
            noise_scale: 0.1,
            noise: NoiseKind::Normal,
            target,
            seed,
        }
    }

    /// 6% trigger-target budget with noisy copies for half of it; the heavier
    /// shaping preset used by the desk experiments.
    pub fn half_noise(target: usize, seed: u64) -> Self {
        PoisonPlan {
            alpha: 0.06,
            beta: 0.5,
            noise_scale: 0.1,
            noise: NoiseKind::Normal,
            target,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!(
                "beta must lie in [0, 1), got {}",
                self.beta
            )));
        }
        if !self.noise_scale.is_finite() || self.noise_scale < 0.0 {
            return Err(Error::Config(format!(
                "noise_scale must be finite and >= 0, got {}",
                self.noise_scale
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonCounts {
    pub clean: usize,
    pub trigger_target: usize,
    pub noisy_source: usize,
}

/// A dataset with poison appended after the original samples, plus per-sample
/// provenance.
#[derive(Debug, Clone)]
pub struct PoisonedDataset {
    pub dataset: Dataset,
    pub provenance: Vec<Provenance>,
    pub counts: PoisonCounts,
}

/// Trigger-only poisoning: every poisoned copy carries the target label.
/// Equivalent to [`grasp_poison`] with `beta = 0`.
pub fn baseline_poison(
    data: &Dataset,
    trigger: &Trigger,
    alpha: f64,
    target: usize,
    seed: u64,
) -> Result<PoisonedDataset> {
    grasp_poison(
        data,
        trigger,
        &PoisonPlan {
            alpha,
            beta: 0.0,
            noise_scale: 0.0,
            noise: NoiseKind::Normal,
            target,
            seed,
        },
    )
}

/// Poisons a dataset by appending, for a seeded random subset of samples,
/// a trigger-stamped copy labeled with the target class; for a sub-subset,
/// a copy whose masked pixels additionally carry scaled noise and whose
/// label stays the source label.
///
/// The original samples are never modified. Appended samples follow the
/// insertion loop order: for each selected position, the noisy copy (if due)
/// precedes the trigger copy.
pub fn grasp_poison(
    data: &Dataset,
    trigger: &Trigger,
    plan: &PoisonPlan,
) -> Result<PoisonedDataset> {
    plan.validate()?;
    if trigger.shape() != data.item_shape() {
        return Err(Error::ShapeMismatch {
            context: "trigger vs dataset items",
            expected: data.item_shape().to_vec(),
            got: trigger.shape().to_vec(),
        });
    }
    if plan.target >= data.num_classes {
        return Err(Error::LabelOutOfRange {
            label: plan.target,
            num_classes: data.num_classes,
        });
    }
    let n = data.len();
    let nf = n as f64;
    if plan.alpha * nf < 1.0 {
        return Err(Error::Config(format!(
            "poison budget alpha * n = {} selects no samples",
            plan.alpha * nf
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut pick_rng = rng::stream(plan.seed, tags::POISON_PICK);
    for i in (1..n).rev() {
        let j = pick_rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut noise_rng = rng::stream(plan.seed, tags::POISON_NOISE);

    let mut images = data.images.clone();
    let mut labels = data.labels.clone();
    let mut provenance = vec![Provenance::Clean; n];
    let mut trigger_target = 0usize;
    let mut noisy_source = 0usize;

    for (i, &src) in order.iter().enumerate() {
        let due_trigger = (i as f64) < plan.alpha * nf;
        let due_noisy = (i as f64) < plan.alpha * plan.beta * nf;
        if !due_trigger && !due_noisy {
            break;
        }
        if due_noisy {
            let noisy_pattern = perturb_pattern(trigger, plan, &mut noise_rng);
            images.push(amend_soft(&data.images[src], trigger.mask(), &noisy_pattern)?);
            labels.push(data.labels[src]);
            provenance.push(Provenance::NoisySource);
            noisy_source += 1;
        }
        if due_trigger {
            images.push(amend(&data.images[src], trigger)?);
            labels.push(plan.target);
            provenance.push(Provenance::TriggerTarget);
            trigger_target += 1;
        }
    }

    let dataset = Dataset::new(images, labels, data.num_classes)?;
    Ok(PoisonedDataset {
        dataset,
        provenance,
        counts: PoisonCounts {
            clean: n,
            trigger_target,
            noisy_source,
        },
    })
}

/// Pattern with noise added at masked pixels, clipped back to `[0, 1]`.
/// A zero noise scale reproduces the pattern bit-exactly.
fn perturb_pattern<R: Rng>(trigger: &Trigger, plan: &PoisonPlan, rng: &mut R) -> Tensor {
    let mut pattern = trigger.pattern().clone();
    for (p, &m) in pattern.data_mut().iter_mut().zip(trigger.mask().data()) {
        if m == 1.0 {
            let e: f64 = match plan.noise {
                NoiseKind::Normal => StandardNormal.sample(rng),
                NoiseKind::Uniform => rng.random_range(-1.0..=1.0),
            };
            *p = (*p as f64 + plan.noise_scale * e).clamp(0.0, 1.0) as f32;
        }
    }
    pattern
}

// ---------------------------------------------------------------------------
// Noise-scale admissibility
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseBoundReport {
    pub m_star: usize,
    pub distance: f64,
    pub bound: f64,
    /// True when the configured scale is strictly below the bound.
    pub ok: bool,
}

/// Checks a noise scale against the largest scale for which a noisy trigger
/// sample stays closer to the trigger sample than the clean sample is, in
/// expectation over the noise.
///
/// For normal noise on `m*` masked pixels the admissible scale is
/// `||x' - x||_2 * Gamma(m*/2) / (sqrt(2) * Gamma((m*+1)/2))`; for uniform
/// noise it is `||x' - x||_2` itself. Both comparisons are strict. The
/// gamma ratio is evaluated in log space so large masks do not overflow.
pub fn noise_bound_check(
    trigger: &Trigger,
    x: &Tensor,
    noise_scale: f64,
    noise: NoiseKind,
) -> Result<NoiseBoundReport> {
    let x_prime = amend(x, trigger)?;
    let distance = x_prime.l2_distance(x)?;
    let m = trigger.m_star() as f64;
    let bound = match noise {
        NoiseKind::Normal => {
            distance * (ln_gamma(m / 2.0) - ln_gamma((m + 1.0) / 2.0)).exp()
                / std::f64::consts::SQRT_2
        }
        NoiseKind::Uniform => distance,
    };
    Ok(NoiseBoundReport {
        m_star: trigger.m_star(),
        distance,
        bound,
        ok: noise_scale < bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_dataset, SyntheticKind};

    fn unit_trigger(shape: &[usize], masked: &[usize], value: f32) -> Trigger {
        let mut mask = Tensor::zeros(shape);
        let mut pattern = Tensor::zeros(shape);
        for &i in masked {
            mask.data_mut()[i] = 1.0;
            pattern.data_mut()[i] = value;
        }
        Trigger::new(mask, pattern).unwrap()
    }

    #[test]
    fn amend_is_exactly_idempotent() {
        let d = synthetic_dataset(SyntheticKind::Stripes, 6, 2).unwrap();
        let t = Trigger::patch(&[1, 8, 8], 3, Corner::BottomRight, 1.0).unwrap();
        for img in &d.images {
            let once = amend(img, &t).unwrap();
            let twice = amend(&once, &t).unwrap();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn amend_edge_masks() {
        let x = Tensor::from_vec(&[4], vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let zeros = Tensor::zeros(&[4]);
        let ones = Tensor::full(&[4], 1.0);
        let pattern = Tensor::from_vec(&[4], vec![0.9, 0.8, 0.7, 0.6]).unwrap();
        // Empty mask: unchanged. Full mask: the pattern.
        assert_eq!(amend_soft(&x, &zeros, &pattern).unwrap(), x);
        assert_eq!(amend_soft(&x, &ones, &pattern).unwrap(), pattern);
    }

    #[test]
    fn patch_occupies_the_requested_corner() {
        let t = Trigger::patch(&[1, 8, 8], 3, Corner::TopLeft, 1.0).unwrap();
        assert_eq!(t.m_star(), 9);
        // Rows/cols 1..=3 are masked; row 0 is the inset.
        assert_eq!(t.mask().data()[1 * 8 + 1], 1.0);
        assert_eq!(t.mask().data()[3 * 8 + 3], 1.0);
        assert_eq!(t.mask().data()[0], 0.0);
        assert_eq!(t.mask().data()[4 * 8 + 4], 0.0);
        assert!(Trigger::patch(&[1, 4, 4], 3, Corner::TopLeft, 1.0).is_err());
    }

    #[test]
    fn trigger_validation_rejects_bad_masks() {
        let half = Tensor::full(&[4], 0.5);
        let pattern = Tensor::zeros(&[4]);
        assert!(Trigger::new(half, pattern.clone()).is_err());
        let empty = Tensor::zeros(&[4]);
        assert!(Trigger::new(empty, pattern).is_err());
    }

    #[test]
    fn trigger_json_round_trips() {
        let t = Trigger::patch(&[1, 8, 8], 4, Corner::BottomLeft, 0.75).unwrap();
        let json = trigger_to_json(&t).unwrap();
        let back = trigger_from_json(&json).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn baseline_counts_match_the_insertion_rule() {
        let d = synthetic_dataset(SyntheticKind::Blobs, 1000, 1).unwrap();
        let t = unit_trigger(&[16], &[0, 1], 1.0);
        let p = baseline_poison(&d, &t, 0.06, 1, 7).unwrap();
        assert_eq!(p.counts.trigger_target, 60);
        assert_eq!(p.counts.noisy_source, 0);
        assert_eq!(p.dataset.len(), 1060);
        // Appended samples carry the target label.
        for i in 1000..1060 {
            assert_eq!(p.dataset.labels[i], 1);
            assert_eq!(p.provenance[i], Provenance::TriggerTarget);
        }
    }

    #[test]
    fn budget_below_one_sample_is_an_error() {
        let d = synthetic_dataset(SyntheticKind::Blobs, 10, 1).unwrap();
        let t = unit_trigger(&[16], &[0], 1.0);
        assert!(baseline_poison(&d, &t, 0.05, 1, 7).is_err());
    }

    #[test]
    fn grasp_counts_match_the_insertion_rule() {
        let d = synthetic_dataset(SyntheticKind::Blobs, 1000, 2).unwrap();
        let t = unit_trigger(&[16], &[0, 5], 1.0);
        let plan = PoisonPlan {
            alpha: 0.06,
            beta: 0.05,
            noise_scale: 0.1,
            noise: NoiseKind::Normal,
            target: 0,
            seed: 3,
        };
        let p = grasp_poison(&d, &t, &plan).unwrap();
        assert_eq!(p.counts.trigger_target, 60);
        assert_eq!(p.counts.noisy_source, 3);
        assert_eq!(p.dataset.len(), 1063);
    }

    #[test]
    fn beta_zero_equals_baseline() {
        let d = synthetic_dataset(SyntheticKind::Stripes, 200, 4).unwrap();
        let t = Trigger::patch(&[1, 8, 8], 3, Corner::TopRight, 1.0).unwrap();
        let plan = PoisonPlan {
            alpha: 0.1,
            beta: 0.0,
            noise_scale: 0.1,
            noise: NoiseKind::Normal,
            target: 1,
            seed: 5,
        };
        let a = grasp_poison(&d, &t, &plan).unwrap();
        let b = baseline_poison(&d, &t, 0.1, 1, 5).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.counts, b.counts);
    }

    #[test]
    fn zero_noise_scale_duplicates_trigger_pixels_with_source_labels() {
        let d = synthetic_dataset(SyntheticKind::Stripes, 100, 6).unwrap();
        let t = Trigger::patch(&[1, 8, 8], 3, Corner::BottomRight, 1.0).unwrap();
        let plan = PoisonPlan {
            alpha: 0.2,
            beta: 0.5,
            noise_scale: 0.0,
            noise: NoiseKind::Normal,
            target: 0,
            seed: 9,
        };
        let p = grasp_poison(&d, &t, &plan).unwrap();
        assert_eq!(p.counts.noisy_source, 10);
        // Each noisy sample is immediately followed by the trigger copy of
        // the same source image; with zero noise their pixels are identical
        // while the labels differ (unless the source already had the target
        // label).
        let mut checked = 0;
        for i in 100..p.dataset.len() {
            if p.provenance[i] == Provenance::NoisySource {
                assert_eq!(p.provenance[i + 1], Provenance::TriggerTarget);
                assert_eq!(p.dataset.images[i], p.dataset.images[i + 1]);
                assert_eq!(p.dataset.labels[i + 1], 0);
                checked += 1;
            }
        }
        assert_eq!(checked, 10);
    }

    #[test]
    fn poisoning_leaves_original_samples_untouched() {
        let d = synthetic_dataset(SyntheticKind::Blobs, 50, 8).unwrap();
        let t = unit_trigger(&[16], &[2], 0.9);
        let p = baseline_poison(&d, &t, 0.1, 1, 2).unwrap();
        for i in 0..50 {
            assert_eq!(p.dataset.images[i], d.images[i]);
            assert_eq!(p.dataset.labels[i], d.labels[i]);
        }
    }

    #[test]
    fn single_pixel_noise_bound_matches_closed_form() {
        // One masked pixel: Gamma(1/2) / (sqrt(2) * Gamma(1)) = sqrt(pi/2).
        let t = unit_trigger(&[4], &[0], 1.0);
        let x = Tensor::zeros(&[4]);
        let report = noise_bound_check(&t, &x, 0.5, NoiseKind::Normal).unwrap();
        assert_eq!(report.m_star, 1);
        assert!((report.distance - 1.0).abs() < 1e-7);
        let expect = (std::f64::consts::PI / 2.0).sqrt();
        assert!((report.bound - expect).abs() < 1e-7, "bound {}", report.bound);
        assert!(report.ok);
        // 1.3 exceeds the ~1.2533 bound.
        let report = noise_bound_check(&t, &x, 1.3, NoiseKind::Normal).unwrap();
        assert!(!report.ok);
    }

    #[test]
    fn uniform_bound_is_strict() {
        let t = unit_trigger(&[4], &[0], 1.0);
        let x = Tensor::zeros(&[4]);
        let report = noise_bound_check(&t, &x, 1.0, NoiseKind::Uniform).unwrap();
        assert!((report.bound - 1.0).abs() < 1e-9);
        assert!(!report.ok, "equality must not pass a strict bound");
        assert!(noise_bound_check(&t, &x, 0.999, NoiseKind::Uniform).unwrap().ok);
    }

    #[test]
    fn gamma_ratio_survives_large_masks() {
        // 10000 masked pixels would overflow a direct gamma evaluation; the
        // log-space ratio tends to distance / sqrt(m*) for large m*.
        let shape = [10000usize];
        let mask = Tensor::full(&shape, 1.0);
        let pattern = Tensor::full(&shape, 1.0);
        let t = Trigger::new(mask, pattern).unwrap();
        let x = Tensor::zeros(&shape);
        let report = noise_bound_check(&t, &x, 0.01, NoiseKind::Normal).unwrap();
        assert!(report.bound.is_finite());
        let approx = report.distance / (10000.0f64).sqrt();
        assert!((report.bound - approx).abs() / approx < 0.01);
    }
}
