//! Masked-subspace robustness radii, local Lipschitz estimation, and
//! power-law rate fitting.
//!
//! A robustness radius is the smallest L2 perturbation, confined to the
//! coordinates a mask selects, that flips the model's prediction away from a
//! reference class. The search scans a fixed set of directions with a
//! geometric ladder and bisects the first sign change, so enlarging the
//! search budget (more directions, larger cap) can only shrink the answer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::poison::{amend, Trigger};
use crate::rng::{self, tags};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Queries and outcomes
// ---------------------------------------------------------------------------

/// Search budget for one robustness measurement. The norm is L2.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RobustnessQuery {
    /// Largest perturbation magnitude the search will try.
    pub r_max: f64,
    /// Number of search directions: margin-descent directions against each
    /// rival class in class order, then the two mask-saturation rays, then
    /// seeded random unit vectors. Direction k is the same tensor whatever
    /// the total count, so a larger budget searches a superset.
    pub directions: usize,
    /// Radii are resolved to this width by bisection.
    pub bisect_tol: f64,
    pub seed: u64,
}

impl Default for RobustnessQuery {
    fn default() -> Self {
        RobustnessQuery {
            r_max: 20.0,
            directions: 8,
            bisect_tol: 1e-3,
            seed: 0,
        }
    }
}

impl RobustnessQuery {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_max > 0.0) || !self.r_max.is_finite() {
            return Err(Error::Config(format!(
                "r_max must be positive and finite, got {}",
                self.r_max
            )));
        }
        if !(self.bisect_tol > 0.0) || !self.bisect_tol.is_finite() {
            return Err(Error::Config(format!(
                "bisect_tol must be positive and finite, got {}",
                self.bisect_tol
            )));
        }
        if self.directions == 0 {
            return Err(Error::Config("directions must be at least 1".into()));
        }
        Ok(())
    }
}

/// Result of one radius search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Radius {
    Found(f64),
    /// No searched perturbation up to `r_max` flipped the prediction.
    NotFound,
}

impl Radius {
    pub fn found(self) -> Option<f64> {
        match self {
            Radius::Found(r) => Some(r),
            Radius::NotFound => None,
        }
    }
}

/// Per-sample outcome inside a [`RobustnessReport`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status", content = "radius")]
pub enum SampleOutcome {
    Found(f64),
    NotFound,
    /// Obstructed measurements skip samples the model already misclassifies.
    NotAstute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusKind {
    Trigger,
    Obstructed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub sample: usize,
    pub kind: RadiusKind,
    pub outcome: SampleOutcome,
}

/// Dataset-level robustness summary. Means average the found radii only;
/// the counts say how many searches hit the sentinel or were skipped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub samples: usize,
    pub per_sample: Vec<SampleRow>,
    /// Mean radius on trigger-stamped inputs (r_t), if any search concluded.
    pub trigger_mean: Option<f64>,
    /// Mean radius on the benign inputs (r_b), if any search concluded.
    pub obstructed_mean: Option<f64>,
    /// r_t / r_b; absent when either mean is undefined or r_b is zero.
    pub ratio: Option<f64>,
    pub trigger_found: usize,
    pub trigger_not_found: usize,
    pub obstructed_found: usize,
    pub obstructed_not_found: usize,
    pub not_astute: usize,
    /// The search never projects perturbed points back into [0, 1]; this
    /// stays false and is recorded so downstream readers know the convention.
    pub perturbations_clipped: bool,
}

impl RobustnessReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// CSV rows `sample_id,kind,radius` with `NF` for sentinel outcomes and
    /// `NA` for skipped non-astute samples.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sample_id,kind,radius\n");
        for row in &self.per_sample {
            let kind = match row.kind {
                RadiusKind::Trigger => "trigger",
                RadiusKind::Obstructed => "obstructed",
            };
            let value = match row.outcome {
                SampleOutcome::Found(r) => format!("{r:.8e}"),
                SampleOutcome::NotFound => "NF".to_string(),
                SampleOutcome::NotAstute => "NA".to_string(),
            };
            out.push_str(&format!("{},{},{}\n", row.sample, kind, value));
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Radius search
// ---------------------------------------------------------------------------

/// Smallest found perturbation of the masked coordinates of `x_prime` that
/// makes the prediction leave `y_t`. Returns 0 when the prediction is not
/// `y_t` to begin with.
pub fn trigger_robustness(
    model: &Model,
    x_prime: &Tensor,
    mask: &Tensor,
    y_t: usize,
    q: &RobustnessQuery,
) -> Result<Radius> {
    flip_radius(
        model,
        x_prime,
        y_t,
        mask,
        q,
        rng::derive_seed(q.seed, tags::ROBUSTNESS_DIRS),
    )
}

/// Smallest found perturbation of the masked coordinates of a benign input
/// that makes the prediction leave `y_true`. Returns 0 when the model
/// already misclassifies the input.
pub fn obstructed_robustness(
    model: &Model,
    x: &Tensor,
    y_true: usize,
    mask: &Tensor,
    q: &RobustnessQuery,
) -> Result<Radius> {
    flip_radius(
        model,
        x,
        y_true,
        mask,
        q,
        rng::derive_seed(q.seed, tags::ROBUSTNESS_DIRS),
    )
}

/// Measures trigger and obstructed radii for every dataset sample and
/// aggregates them. Trigger radii are measured on the trigger-stamped image
/// against the target class (a non-firing trigger contributes radius 0);
/// obstructed radii are measured on the benign image against its label, and
/// misclassified samples are skipped rather than averaged.
pub fn overall_robustness(
    model: &Model,
    data: &Dataset,
    trigger: &Trigger,
    y_t: usize,
    q: &RobustnessQuery,
) -> Result<RobustnessReport> {
    q.validate()?;
    data.check_compatible(model)?;
    if trigger.shape() != data.item_shape() {
        return Err(Error::ShapeMismatch {
            context: "trigger vs dataset items",
            expected: data.item_shape().to_vec(),
            got: trigger.shape().to_vec(),
        });
    }
    if y_t >= data.num_classes {
        return Err(Error::LabelOutOfRange {
            label: y_t,
            num_classes: data.num_classes,
        });
    }

    let base_seed = rng::derive_seed(q.seed, tags::ROBUSTNESS_DIRS);
    let mut per_sample = Vec::with_capacity(2 * data.len());
    let mut trigger_radii = Vec::new();
    let mut obstructed_radii = Vec::new();
    let mut trigger_not_found = 0usize;
    let mut obstructed_not_found = 0usize;
    let mut not_astute = 0usize;

    for i in 0..data.len() {
        let x = &data.images[i];
        let dir_seed = rng::derive_seed(base_seed, i as u64);

        let x_prime = amend(x, trigger)?;
        let outcome = match flip_radius(model, &x_prime, y_t, trigger.mask(), q, dir_seed)? {
            Radius::Found(r) => {
                trigger_radii.push(r);
                SampleOutcome::Found(r)
            }
            Radius::NotFound => {
                trigger_not_found += 1;
                SampleOutcome::NotFound
            }
        };
        per_sample.push(SampleRow {
            sample: i,
            kind: RadiusKind::Trigger,
            outcome,
        });

        let outcome = if model.predict_one(x)? != data.labels[i] {
            not_astute += 1;
            SampleOutcome::NotAstute
        } else {
            match flip_radius(model, x, data.labels[i], trigger.mask(), q, dir_seed)? {
                Radius::Found(r) => {
                    obstructed_radii.push(r);
                    SampleOutcome::Found(r)
                }
                Radius::NotFound => {
                    obstructed_not_found += 1;
                    SampleOutcome::NotFound
                }
            }
        };
        per_sample.push(SampleRow {
            sample: i,
            kind: RadiusKind::Obstructed,
            outcome,
        });
    }

    let mean = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    let trigger_mean = mean(&trigger_radii);
    let obstructed_mean = mean(&obstructed_radii);
    let ratio = match (trigger_mean, obstructed_mean) {
        (Some(t), Some(b)) if b > 0.0 => Some(t / b),
        _ => None,
    };
    Ok(RobustnessReport {
        samples: data.len(),
        per_sample,
        trigger_mean,
        obstructed_mean,
        ratio,
        trigger_found: trigger_radii.len(),
        trigger_not_found,
        obstructed_found: obstructed_radii.len(),
        obstructed_not_found,
        not_astute,
        perturbations_clipped: false,
    })
}

/// Core direction-scan search shared by both radius kinds.
fn flip_radius(
    model: &Model,
    base: &Tensor,
    expected: usize,
    mask: &Tensor,
    q: &RobustnessQuery,
    dir_seed: u64,
) -> Result<Radius> {
    q.validate()?;
    model.check_item(base)?;
    if mask.shape() != base.shape() {
        return Err(Error::ShapeMismatch {
            context: "robustness mask vs input",
            expected: base.shape().to_vec(),
            got: mask.shape().to_vec(),
        });
    }
    if expected >= model.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: expected,
            num_classes: model.num_classes(),
        });
    }
    if !mask.data().iter().any(|&m| m != 0.0) {
        return Err(Error::Config(
            "robustness search needs a mask with at least one active coordinate".into(),
        ));
    }

    if model.predict_one(base)? != expected {
        return Ok(Radius::Found(0.0));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(dir_seed);
    let rivals: Vec<usize> = (0..model.num_classes()).filter(|&c| c != expected).collect();
    let mut best: Option<f64> = None;
    for k in 0..q.directions {
        let dir = if k < rivals.len() {
            // The leading directions descend the margin of the expected
            // class against each rival in class order; they are the search's
            // best guesses at a minimal flip. A flat margin leaves the slot
            // empty.
            margin_descent_direction(model, base, expected, rivals[k], mask)?
        } else if k < rivals.len() + 2 {
            // Mask-saturation rays: brightening or darkening the masked
            // patch uniformly, the canonical probes for patch backdoors.
            let sign = if k == rivals.len() { 1.0 } else { -1.0 };
            saturation_direction(mask, sign)
        } else {
            Some(random_masked_unit(mask, &mut rng))
        };
        let Some(dir) = dir else { continue };
        if let Some(r) = scan_direction(model, base, expected, &dir, q)? {
            best = Some(best.map_or(r, |b: f64| b.min(r)));
        }
    }
    Ok(best.map_or(Radius::NotFound, Radius::Found))
}

/// Unit vector proportional to `sign * mask`. `None` for an empty mask.
fn saturation_direction(mask: &Tensor, sign: f32) -> Option<Tensor> {
    let norm_sq: f64 = mask.data().iter().map(|&m| (m as f64) * (m as f64)).sum();
    if norm_sq.sqrt() < 1e-12 {
        return None;
    }
    let inv = sign / norm_sq.sqrt() as f32;
    let mut dir = Tensor::zeros(mask.shape());
    for (d, &m) in dir.data_mut().iter_mut().zip(mask.data()) {
        *d = m * inv;
    }
    Some(dir)
}

/// Walks `t = bisect_tol * 2^k` outward until the prediction flips, then
/// bisects the bracket to `bisect_tol` and returns its flipping end. The
/// ladder uses absolute rungs, so a larger `r_max` scans a superset.
fn scan_direction(
    model: &Model,
    base: &Tensor,
    expected: usize,
    dir: &Tensor,
    q: &RobustnessQuery,
) -> Result<Option<f64>> {
    let flips = |t: f64| -> Result<bool> {
        let mut probe = base.clone();
        for (p, &d) in probe.data_mut().iter_mut().zip(dir.data()) {
            *p += (t * d as f64) as f32;
        }
        Ok(model.predict_one(&probe)? != expected)
    };
    let mut prev = 0.0f64;
    let mut t = q.bisect_tol;
    while t <= q.r_max {
        if flips(t)? {
            let (mut lo, mut hi) = (prev, t);
            while hi - lo > q.bisect_tol {
                let mid = 0.5 * (lo + hi);
                if flips(mid)? {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Some(hi));
        }
        prev = t;
        t *= 2.0;
    }
    Ok(None)
}

/// Unit vector along the negative gradient of `logit_expected - logit_rival`,
/// restricted to the masked coordinates. `None` when the masked gradient
/// vanishes or the model has a single class.
fn margin_descent_direction(
    model: &Model,
    base: &Tensor,
    expected: usize,
    rival: usize,
    mask: &Tensor,
) -> Result<Option<Tensor>> {
    let k = model.num_classes();
    if k < 2 {
        return Ok(None);
    }
    let batch = Tensor::stack(&[base])?;
    let trace = model.forward_trace(&batch)?;
    let mut cotangent = Tensor::zeros(&[1, k]);
    cotangent.data_mut()[expected] = 1.0;
    cotangent.data_mut()[rival] = -1.0;
    let grad = model.backward_input(&trace, &cotangent);

    let mut dir = Tensor::zeros(base.shape());
    let mut norm_sq = 0.0f64;
    for ((d, &g), &m) in dir
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(mask.data())
    {
        if m != 0.0 {
            *d = -g;
            norm_sq += (g as f64) * (g as f64);
        }
    }
    if norm_sq.sqrt() < 1e-12 {
        return Ok(None);
    }
    let inv = 1.0 / norm_sq.sqrt();
    for d in dir.data_mut() {
        *d = (*d as f64 * inv) as f32;
    }
    Ok(Some(dir))
}

/// Standard-normal draw on the masked coordinates, normalized to unit L2.
fn random_masked_unit(mask: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    loop {
        let mut dir = Tensor::zeros(mask.shape());
        let mut norm_sq = 0.0f64;
        for (d, &m) in dir.data_mut().iter_mut().zip(mask.data()) {
            if m != 0.0 {
                let g: f64 = StandardNormal.sample(rng);
                *d = g as f32;
                norm_sq += g * g;
            }
        }
        if norm_sq.sqrt() > 1e-9 {
            let inv = 1.0 / norm_sq.sqrt();
            for d in dir.data_mut() {
                *d = (*d as f64 * inv) as f32;
            }
            return dir;
        }
    }
}

// ---------------------------------------------------------------------------
// Local Lipschitz estimation
// ---------------------------------------------------------------------------

/// Lower-bound estimate of the local Lipschitz constant of the logit map on
/// the L2 ball of radius `r` around `x`.
///
/// Takes the maximum of finite-difference ratios over `n_pairs` sampled
/// pairs and of Jacobian spectral norms at the ball center and at sampled
/// points. Draws come from one sequential stream, so growing `n_pairs`
/// extends the same sample and the estimate is monotone non-decreasing.
pub fn local_lipschitz(
    model: &Model,
    x: &Tensor,
    r: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Config(format!(
            "lipschitz ball radius must be positive and finite, got {r}"
        )));
    }
    if n_pairs == 0 {
        return Err(Error::Config("lipschitz estimation needs n_pairs >= 1".into()));
    }
    model.check_item(x)?;

    let mut rng = rng::stream(seed, tags::LIPSCHITZ);
    let mut best = jacobian_spectral_norm(model, x)?;
    for _ in 0..n_pairs {
        let x1 = sample_in_ball(x, r, &mut rng);
        let x2 = sample_in_ball(x, r, &mut rng);
        let dist = x2.l2_distance(&x1)?;
        if dist > 1e-9 {
            let f1 = model.logits_one(&x1)?;
            let f2 = model.logits_one(&x2)?;
            let diff: f64 = f1
                .iter()
                .zip(&f2)
                .map(|(&a, &b)| {
                    let d = b as f64 - a as f64;
                    d * d
                })
                .sum::<f64>()
                .sqrt();
            best = best.max(diff / dist);
        }
        best = best.max(jacobian_spectral_norm(model, &x1)?);
    }
    Ok(best)
}

/// Spectral norm of the input Jacobian, computed as the square root of the
/// top eigenvalue of the (num_classes x num_classes) Gram matrix J Jᵀ by
/// power iteration. The Rayleigh quotient never exceeds the true eigenvalue,
/// which keeps the overall estimator a lower bound.
fn jacobian_spectral_norm(model: &Model, x: &Tensor) -> Result<f64> {
    let rows = model.input_jacobian(x)?;
    let k = rows.len();
    let mut gram = vec![0.0f64; k * k];
    for a in 0..k {
        for b in a..k {
            let dot: f64 = rows[a]
                .data()
                .iter()
                .zip(rows[b].data())
                .map(|(&u, &v)| u as f64 * v as f64)
                .sum();
            gram[a * k + b] = dot;
            gram[b * k + a] = dot;
        }
    }
    let start = (0..k)
        .max_by(|&a, &b| {
            gram[a * k + a]
                .partial_cmp(&gram[b * k + b])
                .expect("finite diagonal")
        })
        .expect("at least one class");
    if gram[start * k + start] <= 0.0 {
        return Ok(0.0);
    }
    let mut v = vec![0.0f64; k];
    v[start] = 1.0;
    for _ in 0..100 {
        let mut w = vec![0.0f64; k];
        for a in 0..k {
            for b in 0..k {
                w[a] += gram[a * k + b] * v[b];
            }
        }
        let norm = w.iter().map(|&x| x * x).sum::<f64>().sqrt();
        if norm <= 0.0 {
            return Ok(0.0);
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / norm;
        }
    }
    let mut rayleigh = 0.0f64;
    for a in 0..k {
        for b in 0..k {
            rayleigh += v[a] * gram[a * k + b] * v[b];
        }
    }
    Ok(rayleigh.max(0.0).sqrt())
}

/// Uniform-direction point at random depth inside the ball.
fn sample_in_ball(center: &Tensor, r: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut dir: Vec<f64> = (0..center.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let norm = dir.iter().map(|&v| v * v).sum::<f64>().sqrt().max(1e-12);
    let depth: f64 = rng.random_range(0.0..1.0);
    let scale = r * depth / norm;
    for d in &mut dir {
        *d *= scale;
    }
    let mut out = center.clone();
    for (o, d) in out.data_mut().iter_mut().zip(&dir) {
        *o += *d as f32;
    }
    out
}

/// Mean local Lipschitz estimate of `model_a` over `points` divided by the
/// same quantity for `model_b`, with identical sampling seeds for both.
pub fn lipschitz_fold_change(
    model_a: &Model,
    model_b: &Model,
    points: &[Tensor],
    r: f64,
    n_pairs: usize,
    seed: u64,
) -> Result<f64> {
    if model_a.input_shape() != model_b.input_shape() {
        return Err(Error::ShapeMismatch {
            context: "fold-change model inputs",
            expected: model_a.input_shape().to_vec(),
            got: model_b.input_shape().to_vec(),
        });
    }
    if points.is_empty() {
        return Err(Error::Empty("fold-change needs at least one point".into()));
    }
    let mut sum_a = 0.0f64;
    let mut sum_b = 0.0f64;
    for (i, p) in points.iter().enumerate() {
        let point_seed = rng::derive_seed(seed, i as u64);
        sum_a += local_lipschitz(model_a, p, r, n_pairs, point_seed)?;
        sum_b += local_lipschitz(model_b, p, r, n_pairs, point_seed)?;
    }
    if sum_b <= 0.0 {
        return Err(Error::Numeric(
            "fold-change denominator model has zero Lipschitz estimate".into(),
        ));
    }
    Ok(sum_a / sum_b)
}

// ---------------------------------------------------------------------------
// Increasing-rate fit
// ---------------------------------------------------------------------------

/// Least-squares fit of `log(value - f_min) = log(c_kappa) + kappa * log(distance)`
/// over points with positive distance and value above `f_min`. Returns
/// `(kappa, c_kappa)`.
pub fn increasing_rate_fit(f_values: &[(f64, f64)], f_min: f64) -> Result<(f64, f64)> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(dist, value) in f_values {
        if dist > 0.0 && value > f_min && dist.is_finite() && value.is_finite() {
            xs.push(dist.ln());
            ys.push((value - f_min).ln());
        }
    }
    if xs.len() < 5 {
        return Err(Error::Config(format!(
            "rate fit needs at least 5 usable points, got {}",
            xs.len()
        )));
    }
    let n = xs.len() as f64;
    let x_bar = xs.iter().sum::<f64>() / n;
    let y_bar = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - x_bar) * (x - x_bar);
        sxy += (x - x_bar) * (y - y_bar);
    }
    if sxx < 1e-12 {
        return Err(Error::Numeric(
            "rate fit is degenerate: all distances are equal".into(),
        ));
    }
    let kappa = sxy / sxx;
    let c_kappa = (y_bar - kappa * x_bar).exp();
    Ok((kappa, c_kappa))
}
