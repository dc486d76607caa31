//! Gradient-based trigger inversion: recover a small mask and pattern that
//! steer a model toward a chosen target class.
//!
//! The optimizer minimizes `mean loss(y_t, f(amend(x, M, D))) + lambda*|M|_1`
//! over a clean batch, with the mask and pattern parameterized through a
//! logistic map so both stay inside (0, 1) without projection. Several
//! seeded restarts run independently; the winner is the restart whose
//! recovered trigger fools the model most often on held-out inputs.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::nn::{loss, loss_and_grad, LossKind, Model};
use crate::poison::{decode_f32, encode_f32};
use crate::rng::{self, tags};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// First-order updates with per-coordinate adaptive step sizes.
    Adaptive,
    /// Fixed-step descent with backtracking: a step that would raise the
    /// objective by more than 1e-6 is retried at half the length.
    FixedBacktracking,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InversionConfig {
    /// Weight of the mask L1 penalty.
    pub lambda: f64,
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    /// Number of leading clean samples the objective averages over; the
    /// remainder of the set is held out for restart selection.
    pub batch: usize,
    pub loss: LossKind,
    pub optimizer: OptimizerKind,
    /// Binarization threshold; mask entries at or above it map to 1.
    pub tau: f64,
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            lambda: 0.01,
            restarts: 3,
            steps: 300,
            step_size: 0.1,
            batch: 64,
            loss: LossKind::CrossEntropy,
            optimizer: OptimizerKind::Adaptive,
            tau: 0.5,
            seed: 0,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if self.restarts == 0 || self.steps == 0 || self.batch == 0 {
            return Err(Error::Config(
                "restarts, steps, and batch must all be at least 1".into(),
            ));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config(format!(
                "step_size must be positive and finite, got {}",
                self.step_size
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Outcome of an inversion: the best restart's recovered trigger plus
/// per-restart diagnostics. Mask and pattern entries lie strictly inside
/// (0, 1); the binarized mask thresholds at `tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct InversionResult {
    pub mask: Tensor,
    pub pattern: Tensor,
    pub binarized_mask: Tensor,
    /// Final objective per restart; `None` marks a discarded (non-finite)
    /// restart.
    pub restart_losses: Vec<Option<f64>>,
    /// Holdout ASR per restart, aligned with `restart_losses`.
    pub restart_asrs: Vec<Option<f64>>,
    pub selected_restart: usize,
    pub asr_recovered: f64,
    pub l1_mask: f64,
    pub l0_binarized: usize,
}

/// Elementwise threshold: entries at or above `tau` become 1, the rest 0.
pub fn binarize_mask(mask: &Tensor, tau: f64) -> Result<Tensor> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("tau must lie in (0, 1), got {tau}")));
    }
    if !mask.all_finite() || !mask.all_in_range(0.0, 1.0) {
        return Err(Error::Config(
            "binarize_mask expects entries in [0, 1]".into(),
        ));
    }
    let mut out = mask.clone();
    for v in out.data_mut() {
        *v = if (*v as f64) >= tau { 1.0 } else { 0.0 };
    }
    Ok(out)
}

/// Detection score of an inversion: the negated pixel count of the
/// binarized mask. Smaller recovered triggers score higher, i.e. look more
/// backdoor-like.
pub fn inversion_score(result: &InversionResult) -> f64 {
    -(result.l0_binarized as f64)
}

/// Recovers a trigger for target class `y_t` from clean inputs.
///
/// The first `cfg.batch` samples drive the optimization; any samples beyond
/// them form the holdout used to pick among restarts (falling back to the
/// optimization set when nothing is left). Restarts whose objective turns
/// non-finite are discarded; ties in holdout ASR resolve to the earliest
/// restart.
pub fn invert(
    model: &Model,
    clean: &Dataset,
    y_t: usize,
    cfg: &InversionConfig,
) -> Result<InversionResult> {
    cfg.validate()?;
    clean.check_compatible(model)?;
    if y_t >= model.num_classes() {
        return Err(Error::LabelOutOfRange {
            label: y_t,
            num_classes: model.num_classes(),
        });
    }

    let opt_count = cfg.batch.min(clean.len());
    let opt_indices: Vec<usize> = (0..opt_count).collect();
    let (xs, _) = clean.gather(&opt_indices)?;
    let holdout = if clean.len() > opt_count {
        let images = clean.images[opt_count..].to_vec();
        let labels = clean.labels[opt_count..].to_vec();
        Dataset::new(images, labels, clean.num_classes)?
    } else {
        clean.clone()
    };

    let workspace = Workspace {
        model,
        xs: &xs,
        labels: vec![y_t; opt_count],
        dim: clean.item_shape().iter().product(),
        cfg,
    };

    let mut restart_losses = Vec::with_capacity(cfg.restarts);
    let mut restart_asrs = Vec::with_capacity(cfg.restarts);
    let mut best: Option<(usize, f64, Vec<f64>, Vec<f64>)> = None;
    for r in 0..cfg.restarts {
        let outcome = run_restart(&workspace, r);
        match outcome {
            Some(RestartOutcome {
                theta_mask,
                theta_pattern,
                losses,
            }) => {
                let mask = sigmoid_tensor(&theta_mask, clean.item_shape());
                let pattern = sigmoid_tensor(&theta_pattern, clean.item_shape());
                let asr =
                    metrics::asr(model, &holdout, &mask, &pattern, y_t, true)?;
                restart_losses.push(losses.last().copied());
                restart_asrs.push(Some(asr));
                let better = match &best {
                    None => true,
                    Some((_, best_asr, _, _)) => asr > *best_asr,
                };
                if better {
                    best = Some((r, asr, theta_mask, theta_pattern));
                }
            }
            None => {
                restart_losses.push(None);
                restart_asrs.push(None);
            }
        }
    }

    let Some((selected, asr_recovered, theta_mask, theta_pattern)) = best else {
        return Err(Error::Numeric(
            "every inversion restart produced a non-finite objective".into(),
        ));
    };
    let mask = sigmoid_tensor(&theta_mask, clean.item_shape());
    let pattern = sigmoid_tensor(&theta_pattern, clean.item_shape());
    let binarized_mask = binarize_mask(&mask, cfg.tau)?;
    let l1_mask = mask.l1_norm();
    let l0_binarized = binarized_mask.data().iter().filter(|&&v| v == 1.0).count();
    Ok(InversionResult {
        mask,
        pattern,
        binarized_mask,
        restart_losses,
        restart_asrs,
        selected_restart: selected,
        asr_recovered,
        l1_mask,
        l0_binarized,
    })
}

// ---------------------------------------------------------------------------
// Restart optimization
// ---------------------------------------------------------------------------

struct Workspace<'a> {
    model: &'a Model,
    /// Stacked clean optimization batch, shape (B, item...).
    xs: &'a Tensor,
    labels: Vec<usize>,
    dim: usize,
    cfg: &'a InversionConfig,
}

struct RestartOutcome {
    theta_mask: Vec<f64>,
    theta_pattern: Vec<f64>,
    /// Objective after every accepted step, starting with the initial value.
    losses: Vec<f64>,
}

impl Workspace<'_> {
    /// Amended batch for the current mask/pattern (already squashed).
    fn amended(&self, mask: &[f64], pattern: &[f64]) -> Tensor {
        let mut out = self.xs.clone();
        let d = self.dim;
        for chunk in out.data_mut().chunks_exact_mut(d) {
            for (i, v) in chunk.iter_mut().enumerate() {
                *v = ((1.0 - mask[i]) * *v as f64 + mask[i] * pattern[i]) as f32;
            }
        }
        out
    }

    fn objective(&self, theta_mask: &[f64], theta_pattern: &[f64]) -> Result<f64> {
        let mask: Vec<f64> = theta_mask.iter().map(|&t| sigmoid(t)).collect();
        let pattern: Vec<f64> = theta_pattern.iter().map(|&t| sigmoid(t)).collect();
        let amended = self.amended(&mask, &pattern);
        let logits = self.model.forward(&amended)?;
        let data_term = loss(&logits, &self.labels, self.cfg.loss)?;
        Ok(data_term + self.cfg.lambda * mask.iter().sum::<f64>())
    }

    /// Objective plus gradients with respect to the unconstrained logits.
    fn objective_and_grad(
        &self,
        theta_mask: &[f64],
        theta_pattern: &[f64],
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let d = self.dim;
        let mask: Vec<f64> = theta_mask.iter().map(|&t| sigmoid(t)).collect();
        let pattern: Vec<f64> = theta_pattern.iter().map(|&t| sigmoid(t)).collect();
        let amended = self.amended(&mask, &pattern);
        let trace = self.model.forward_trace(&amended)?;
        let (data_term, grad_logits) =
            loss_and_grad(trace.logits(), &self.labels, self.cfg.loss)?;
        let grad_input = self.model.backward_input(&trace, &grad_logits);

        // d/dM_i = sum_b g[b,i] * (pattern_i - x[b,i]) + lambda
        // d/dD_i = sum_b g[b,i] * mask_i
        // then both chain through the logistic derivative s(1-s).
        let mut grad_mask = vec![0.0f64; d];
        let mut grad_pattern = vec![0.0f64; d];
        for (b, g_chunk) in grad_input.data().chunks_exact(d).enumerate() {
            let x_chunk = &self.xs.data()[b * d..(b + 1) * d];
            for i in 0..d {
                let g = g_chunk[i] as f64;
                grad_mask[i] += g * (pattern[i] - x_chunk[i] as f64);
                grad_pattern[i] += g * mask[i];
            }
        }
        for i in 0..d {
            let sm = mask[i];
            let sp = pattern[i];
            grad_mask[i] = (grad_mask[i] + self.cfg.lambda) * sm * (1.0 - sm);
            grad_pattern[i] *= sp * (1.0 - sp);
        }
        let value = data_term + self.cfg.lambda * mask.iter().sum::<f64>();
        Ok((value, grad_mask, grad_pattern))
    }
}

/// Runs one seeded restart to completion. Returns `None` when the objective
/// or a gradient stops being finite.
fn run_restart(ws: &Workspace<'_>, restart: usize) -> Option<RestartOutcome> {
    let d = ws.dim;
    let mut rng = rng::stream(rng::derive_seed(ws.cfg.seed, tags::INVERSION), restart as u64);
    let mut theta_mask: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut theta_pattern: Vec<f64> =
        (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();

    let mut losses = Vec::with_capacity(ws.cfg.steps + 1);
    match ws.cfg.optimizer {
        OptimizerKind::Adaptive => {
            let mut opt_mask = Adam::new(d);
            let mut opt_pattern = Adam::new(d);
            for _ in 0..ws.cfg.steps {
                let (value, grad_mask, grad_pattern) =
                    ws.objective_and_grad(&theta_mask, &theta_pattern).ok()?;
                if !all_finite(value, &grad_mask, &grad_pattern) {
                    return None;
                }
                losses.push(value);
                opt_mask.step(&mut theta_mask, &grad_mask, ws.cfg.step_size);
                opt_pattern.step(&mut theta_pattern, &grad_pattern, ws.cfg.step_size);
            }
            let final_value = ws.objective(&theta_mask, &theta_pattern).ok()?;
            if !final_value.is_finite() {
                return None;
            }
            losses.push(final_value);
        }
        OptimizerKind::FixedBacktracking => {
            let mut current = ws.objective(&theta_mask, &theta_pattern).ok()?;
            if !current.is_finite() {
                return None;
            }
            losses.push(current);
            'steps: for _ in 0..ws.cfg.steps {
                let (value, grad_mask, grad_pattern) =
                    ws.objective_and_grad(&theta_mask, &theta_pattern).ok()?;
                if !all_finite(value, &grad_mask, &grad_pattern) {
                    return None;
                }
                let mut eta = ws.cfg.step_size;
                for _ in 0..40 {
                    let cand_mask: Vec<f64> = theta_mask
                        .iter()
                        .zip(&grad_mask)
                        .map(|(&t, &g)| t - eta * g)
                        .collect();
                    let cand_pattern: Vec<f64> = theta_pattern
                        .iter()
                        .zip(&grad_pattern)
                        .map(|(&t, &g)| t - eta * g)
                        .collect();
                    let cand_value = ws.objective(&cand_mask, &cand_pattern).ok()?;
                    // A step is accepted only if it does not raise the
                    // objective beyond the 1e-6 contract.
                    if cand_value.is_finite() && cand_value <= current + 1e-6 {
                        theta_mask = cand_mask;
                        theta_pattern = cand_pattern;
                        current = cand_value;
                        losses.push(current);
                        continue 'steps;
                    }
                    eta *= 0.5;
                }
                // No acceptable step length: treat as converged.
                break;
            }
        }
    }
    Some(RestartOutcome {
        theta_mask,
        theta_pattern,
        losses,
    })
}

fn all_finite(value: f64, a: &[f64], b: &[f64]) -> bool {
    value.is_finite()
        && a.iter().all(|v| v.is_finite())
        && b.iter().all(|v| v.is_finite())
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(d: usize) -> Self {
        Adam {
            m: vec![0.0; d],
            v: vec![0.0; d],
            t: 0,
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let c1 = 1.0 - B1.powi(self.t);
        let c2 = 1.0 - B2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grad[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grad[i] * grad[i];
            theta[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + EPS);
        }
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn sigmoid_tensor(theta: &[f64], shape: &[usize]) -> Tensor {
    let data: Vec<f32> = theta.iter().map(|&t| sigmoid(t) as f32).collect();
    Tensor::from_vec(shape, data).expect("theta length matches item shape")
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct InversionResultFile {
    shape: Vec<usize>,
    mask: String,
    pattern: String,
    binarized_mask: String,
    restart_losses: Vec<Option<f64>>,
    restart_asrs: Vec<Option<f64>>,
    selected_restart: usize,
    asr_recovered: f64,
    l1_mask: f64,
    l0_binarized: usize,
}

pub fn inversion_result_to_json(result: &InversionResult) -> Result<String> {
    let file = InversionResultFile {
        shape: result.mask.shape().to_vec(),
        mask: encode_f32(result.mask.data()),
        pattern: encode_f32(result.pattern.data()),
        binarized_mask: encode_f32(result.binarized_mask.data()),
        restart_losses: result.restart_losses.clone(),
        restart_asrs: result.restart_asrs.clone(),
        selected_restart: result.selected_restart,
        asr_recovered: result.asr_recovered,
        l1_mask: result.l1_mask,
        l0_binarized: result.l0_binarized,
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn inversion_result_from_json(text: &str) -> Result<InversionResult> {
    let file: InversionResultFile = serde_json::from_str(text)
        .map_err(|e| Error::Format(format!("inversion result is not valid JSON: {e}")))?;
    let len: usize = file.shape.iter().product();
    Ok(InversionResult {
        mask: Tensor::from_vec(&file.shape, decode_f32(&file.mask, len, "inversion mask")?)?,
        pattern: Tensor::from_vec(
            &file.shape,
            decode_f32(&file.pattern, len, "inversion pattern")?,
        )?,
        binarized_mask: Tensor::from_vec(
            &file.shape,
            decode_f32(&file.binarized_mask, len, "inversion binarized mask")?,
        )?,
        restart_losses: file.restart_losses,
        restart_asrs: file.restart_asrs,
        selected_restart: file.selected_restart,
        asr_recovered: file.asr_recovered,
        l1_mask: file.l1_mask,
        l0_binarized: file.l0_binarized,
    })
}
