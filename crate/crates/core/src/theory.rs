//! Small executable checks behind the lab's convergence and weight-analysis
//! claims: subgradient descent on piecewise-linear losses, linear
//! convergence on strongly convex quadratics, and the gradient-difference
//! ratio that compares poisoning strategies in parameter space.
//!
//! Everything here computes in f64; these routines check identities and
//! inequalities, so model-style f32 rounding would only blur the contracts.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Model};
use crate::poison::{amend, amend_soft, Trigger};
use crate::rng::{self, tags};
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Piecewise-linear descent
// ---------------------------------------------------------------------------

/// A piecewise-linear function on `[a, b]` with values in `[0, 1]`, plus a
/// marked sub-interval (the hull) on which the function is convex and
/// contains its unique global minimum at a breakpoint.
#[derive(Debug, Clone, Serialize)]
pub struct PiecewiseLinearSpec {
    a: f64,
    b: f64,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
    hull_lo: f64,
    hull_hi: f64,
    argmin: f64,
}

impl PiecewiseLinearSpec {
    pub fn new(
        breakpoints: Vec<f64>,
        values: Vec<f64>,
        hull_lo: f64,
        hull_hi: f64,
    ) -> Result<Self> {
        if breakpoints.len() < 2 || breakpoints.len() != values.len() {
            return Err(Error::Config(
                "piecewise spec needs matching breakpoints and values, at least two".into(),
            ));
        }
        for w in breakpoints.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config(
                    "breakpoints must be strictly increasing".into(),
                ));
            }
        }
        let a = breakpoints[0];
        let b = *breakpoints.last().expect("nonempty");
        if !a.is_finite() || !b.is_finite() {
            return Err(Error::Config("domain endpoints must be finite".into()));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Config("values must lie in [0, 1]".into()));
        }
        if !(a <= hull_lo && hull_lo < hull_hi && hull_hi <= b) {
            return Err(Error::Config(format!(
                "hull [{hull_lo}, {hull_hi}] must be a proper sub-interval of [{a}, {b}]"
            )));
        }

        // The global minimum must be attained at exactly one breakpoint and
        // that breakpoint must sit inside the hull.
        let min_value = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let minima: Vec<usize> = (0..values.len())
            .filter(|&i| values[i] == min_value)
            .collect();
        if minima.len() != 1 {
            return Err(Error::Config(format!(
                "global minimum must be unique, found {} minimizers",
                minima.len()
            )));
        }
        let argmin = breakpoints[minima[0]];
        if !(hull_lo..=hull_hi).contains(&argmin) {
            return Err(Error::Config(
                "global minimum must lie inside the hull".into(),
            ));
        }

        // Convexity on the hull: slopes of segments inside it never decrease.
        let spec = PiecewiseLinearSpec {
            a,
            b,
            breakpoints,
            values,
            hull_lo,
            hull_hi,
            argmin,
        };
        let mut prev: Option<f64> = None;
        for (lo, hi, slope) in spec.segments() {
            if lo >= hull_lo && hi <= hull_hi {
                if let Some(p) = prev {
                    if slope < p {
                        return Err(Error::Config(
                            "function must be convex on the hull".into(),
                        ));
                    }
                }
                prev = Some(slope);
            }
        }
        Ok(spec)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn hull(&self) -> (f64, f64) {
        (self.hull_lo, self.hull_hi)
    }

    pub fn argmin(&self) -> f64 {
        self.argmin
    }

    fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints.windows(2).zip(self.values.windows(2)).map(
            |(xs, vs)| {
                let slope = (vs[1] - vs[0]) / (xs[1] - xs[0]);
                (xs[0], xs[1], slope)
            },
        )
    }

    /// Index of the segment containing `x`; breakpoints belong to the
    /// segment on their right, except `b` which belongs to the last.
    fn segment_index(&self, x: f64) -> usize {
        let idx = self.breakpoints.partition_point(|&p| p <= x);
        idx.clamp(1, self.breakpoints.len() - 1) - 1
    }

    pub fn eval(&self, x: f64) -> f64 {
        let i = self.segment_index(x.clamp(self.a, self.b));
        let slope = (self.values[i + 1] - self.values[i])
            / (self.breakpoints[i + 1] - self.breakpoints[i]);
        self.values[i] + slope * (x.clamp(self.a, self.b) - self.breakpoints[i])
    }

    /// Right-hand slope at `x` (left-hand at the domain's right endpoint).
    pub fn subgradient(&self, x: f64) -> f64 {
        let i = self.segment_index(x.clamp(self.a, self.b));
        (self.values[i + 1] - self.values[i]) / (self.breakpoints[i + 1] - self.breakpoints[i])
    }

    /// Largest absolute slope among segments inside the hull.
    fn max_hull_slope(&self) -> f64 {
        self.segments()
            .filter(|&(lo, hi, _)| lo >= self.hull_lo && hi <= self.hull_hi)
            .map(|(_, _, s)| s.abs())
            .fold(0.0, f64::max)
    }
}

/// Runs projected fixed-step subgradient descent from uniform random starts
/// and returns the fraction of runs that end inside the hull within the
/// convergence band of the minimizer.
///
/// The band is `1.5 * step_size * max_hull_slope`: a fixed-step method
/// oscillates around the minimizer with amplitude `step_size * slope`, so
/// any run that reaches the basin stays inside the band.
pub fn simulate_pwl_gd(
    spec: &PiecewiseLinearSpec,
    n_inits: usize,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> Result<f64> {
    if n_inits == 0 || steps == 0 {
        return Err(Error::Config("n_inits and steps must be at least 1".into()));
    }
    if !(step_size > 0.0) || !step_size.is_finite() {
        return Err(Error::Config(format!(
            "step_size must be positive and finite, got {step_size}"
        )));
    }
    let tol = 1.5 * step_size * spec.max_hull_slope();
    let mut rng = rng::stream(seed, tags::THEORY);
    let mut hits = 0usize;
    for _ in 0..n_inits {
        let mut x: f64 = rng.random_range(spec.a..spec.b);
        for _ in 0..steps {
            x = (x - step_size * spec.subgradient(x)).clamp(spec.a, spec.b);
        }
        if x >= spec.hull_lo && x <= spec.hull_hi && (x - spec.argmin).abs() <= tol {
            hits += 1;
        }
    }
    Ok(hits as f64 / n_inits as f64)
}

/// Seeded random landscape on [0, 1]: a convex valley of the requested
/// width surrounded by rugged segments whose local minima trap descent.
/// Shrinking the hull fraction shrinks the attraction basin.
pub fn random_pwl_spec(hull_fraction: f64, seed: u64) -> Result<PiecewiseLinearSpec> {
    if !(hull_fraction > 0.0 && hull_fraction <= 1.0) {
        return Err(Error::Config(format!(
            "hull_fraction must lie in (0, 1], got {hull_fraction}"
        )));
    }
    let mut rng = rng::stream(seed, tags::THEORY);
    if hull_fraction > 0.9 {
        let m = rng.random_range(0.3..0.7);
        let v_lo = rng.random_range(0.6..1.0);
        let v_hi = rng.random_range(0.6..1.0);
        return PiecewiseLinearSpec::new(vec![0.0, m, 1.0], vec![v_lo, 0.05, v_hi], 0.0, 1.0);
    }
    let half = hull_fraction / 2.0;
    let center = rng.random_range(half + 0.02..1.0 - half - 0.02);
    let (h_lo, h_hi) = (center - half, center + half);
    let m = rng.random_range(h_lo + 0.25 * hull_fraction..h_hi - 0.25 * hull_fraction);
    let v_lo = rng.random_range(0.5..0.95);
    let v_hi = rng.random_range(0.5..0.95);

    let candidates: Vec<f64> = (0..8).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut outside: Vec<f64> = Vec::new();
    for c in candidates {
        let clear_of_hull = c < h_lo - 0.03 || c > h_hi + 0.03;
        let clear_of_edges = c > 0.03 && c < 0.97;
        let clear_of_others = outside.iter().all(|&o| (o - c).abs() > 0.03);
        if clear_of_hull && clear_of_edges && clear_of_others {
            outside.push(c);
        }
    }
    outside.sort_by(|p, q| p.partial_cmp(q).expect("finite breakpoints"));

    let mut breakpoints = vec![0.0];
    let mut values = vec![rng.random_range(0.3..0.95)];
    for &o in &outside {
        if o < h_lo {
            breakpoints.push(o);
            values.push(rng.random_range(0.3..0.95));
        }
    }
    breakpoints.extend([h_lo, m, h_hi]);
    values.extend([v_lo, 0.05, v_hi]);
    for &o in &outside {
        if o > h_hi {
            breakpoints.push(o);
            values.push(rng.random_range(0.3..0.95));
        }
    }
    breakpoints.push(1.0);
    values.push(rng.random_range(0.3..0.95));
    PiecewiseLinearSpec::new(breakpoints, values, h_lo, h_hi)
}

// ---------------------------------------------------------------------------
// Convergence probability bound
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thm2Bound {
    /// The formula evaluated literally; can leave [0, 1].
    pub raw: f64,
    /// `raw` clamped into [0, 1] for reporting.
    pub clamped: f64,
}

/// Evaluates `1 - B1^-1 (b-a)^-1 (4 - B1 B2)^n (1 - B1 B2)`.
pub fn thm2_bound(b1: f64, b2: f64, a: f64, b: f64, n: u32) -> Result<Thm2Bound> {
    if !(b1 > 0.0) || !(b2 > 0.0) {
        return Err(Error::Config(format!(
            "B1 and B2 must be positive, got {b1} and {b2}"
        )));
    }
    if !(b > a) {
        return Err(Error::Config(format!(
            "domain must satisfy b > a, got [{a}, {b}]"
        )));
    }
    let product = b1 * b2;
    let raw = 1.0 - (4.0 - product).powi(n as i32) * (1.0 - product) / (b1 * (b - a));
    Ok(Thm2Bound {
        raw,
        clamped: raw.clamp(0.0, 1.0),
    })
}

// ---------------------------------------------------------------------------
// Strongly convex quadratics
// ---------------------------------------------------------------------------

/// The quadratic `F(x) = 0.5 x^T A x + b^T x` with symmetric positive
/// definite `A`. Stores the extreme eigenvalues and the exact minimizer.
#[derive(Debug, Clone, Serialize)]
pub struct QuadraticSpec {
    dim: usize,
    matrix: Vec<f64>,
    offset: Vec<f64>,
    mu: f64,
    l: f64,
    minimizer: Vec<f64>,
    f_star: f64,
}

impl QuadraticSpec {
    pub fn new(matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let dim = offset.len();
        if dim == 0 || matrix.len() != dim * dim {
            return Err(Error::Config(format!(
                "matrix must be {dim}x{dim} to match the offset vector"
            )));
        }
        let scale = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for i in 0..dim {
            for j in 0..dim {
                if (matrix[i * dim + j] - matrix[j * dim + i]).abs() > 1e-9 * scale {
                    return Err(Error::Config("matrix must be symmetric".into()));
                }
            }
        }
        let eigs = jacobi_eigenvalues(matrix.clone(), dim);
        let mu = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        let l = eigs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(mu > 0.0) {
            return Err(Error::Config(format!(
                "matrix must be positive definite; smallest eigenvalue {mu}"
            )));
        }
        let neg_b: Vec<f64> = offset.iter().map(|v| -v).collect();
        let minimizer = solve_linear(&matrix, &neg_b, dim)?;
        let mut spec = QuadraticSpec {
            dim,
            matrix,
            offset,
            mu,
            l,
            minimizer,
            f_star: 0.0,
        };
        spec.f_star = spec.f(&spec.minimizer.clone())?;
        Ok(spec)
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    pub fn f(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::Config(format!(
                "point has dimension {}, spec expects {}",
                x.len(),
                self.dim
            )));
        }
        let mut quad = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                quad += x[i] * self.matrix[i * self.dim + j] * x[j];
            }
        }
        let linear: f64 = self.offset.iter().zip(x).map(|(b, v)| b * v).sum();
        Ok(0.5 * quad + linear)
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.offset.clone();
        for i in 0..self.dim {
            for j in 0..self.dim {
                g[i] += self.matrix[i * self.dim + j] * x[j];
            }
        }
        g
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PlStep {
    pub k: usize,
    pub gap: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlReport {
    pub steps: Vec<PlStep>,
    pub all_hold: bool,
    pub first_failure: Option<usize>,
}

/// Runs gradient descent with step `1/L` and checks at every iterate that
/// the optimality gap shrinks at least geometrically:
/// `F(x_k) - F* <= (1 - mu/L)^k (F(x_0) - F*)`, with 1e-9 absolute slack.
pub fn pl_convergence_check(
    spec: &QuadraticSpec,
    x0: &[f64],
    k_max: usize,
) -> Result<PlReport> {
    let gap0 = spec.f(x0)? - spec.f_star;
    let rate = 1.0 - spec.mu / spec.l;
    let mut x = x0.to_vec();
    let mut steps = Vec::with_capacity(k_max + 1);
    steps.push(PlStep {
        k: 0,
        gap: gap0,
        bound: gap0,
        holds: true,
    });
    for k in 1..=k_max {
        let g = spec.grad(&x);
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= gi / spec.l;
        }
        let gap = spec.f(&x)? - spec.f_star;
        let bound = rate.powi(k as i32) * gap0;
        steps.push(PlStep {
            k,
            gap,
            bound,
            holds: gap <= bound + 1e-9,
        });
    }
    let first_failure = steps.iter().find(|s| !s.holds).map(|s| s.k);
    Ok(PlReport {
        all_hold: first_failure.is_none(),
        first_failure,
        steps,
    })
}

/// Eigenvalues of a small symmetric matrix by classical Jacobi rotations.
fn jacobi_eigenvalues(mut m: Vec<f64>, n: usize) -> Vec<f64> {
    for _ in 0..200 {
        // Largest off-diagonal element.
        let (mut p, mut q, mut largest) = (0, 1, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                if m[i * n + j].abs() > largest {
                    largest = m[i * n + j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if largest < 1e-13 || n < 2 {
            break;
        }
        let app = m[p * n + p];
        let aqq = m[q * n + q];
        let apq = m[p * n + q];
        let theta = 0.5 * (aqq - app) / apq;
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let mkp = m[k * n + p];
            let mkq = m[k * n + q];
            m[k * n + p] = c * mkp - s * mkq;
            m[k * n + q] = s * mkp + c * mkq;
        }
        for k in 0..n {
            let mpk = m[p * n + k];
            let mqk = m[q * n + k];
            m[p * n + k] = c * mpk - s * mqk;
            m[q * n + k] = s * mpk + c * mqk;
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

/// Solves `A x = rhs` by Gaussian elimination with partial pivoting.
fn solve_linear(a: &[f64], rhs: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut m = a.to_vec();
    let mut x = rhs.to_vec();
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&r1, &r2| {
                m[r1 * n + col]
                    .abs()
                    .partial_cmp(&m[r2 * n + col].abs())
                    .expect("finite matrix")
            })
            .expect("nonempty range");
        if m[pivot_row * n + col].abs() < 1e-12 {
            return Err(Error::Numeric("linear system is singular".into()));
        }
        if pivot_row != col {
            for j in 0..n {
                m.swap(col * n + j, pivot_row * n + j);
            }
            x.swap(col, pivot_row);
        }
        for row in col + 1..n {
            let f = m[row * n + col] / m[col * n + col];
            for j in col..n {
                m[row * n + j] -= f * m[col * n + j];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..n).rev() {
        for j in col + 1..n {
            let xj = x[j];
            x[col] -= m[col * n + j] * xj;
        }
        x[col] /= m[col * n + col];
    }
    Ok(x)
}

// ---------------------------------------------------------------------------
// Weight-gradient ratio
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradientRatioReport {
    /// Projection of the benign-vs-backdoor gradient difference onto the
    /// benign-vs-noisy-poisoning difference, over final-layer parameters.
    pub last_layer_ratio: f64,
    /// The same ratio for the output bias alone; label algebra makes it
    /// exactly 2 regardless of the noise.
    pub bias_ratio: f64,
    /// Whether every live hidden parameter's difference pair points the same
    /// way with the backdoor difference strictly larger in magnitude.
    pub hidden_inequality_holds: bool,
    pub live_hidden_params: usize,
    pub checked_hidden_params: usize,
}

/// Compares parameter gradients of one training step on three label
/// assignments of the same inputs: benign (everything source-labeled),
/// plain backdoor (trigger and noisy copies target-labeled), and
/// noise-augmented poisoning (trigger target-labeled, noisy copy
/// source-labeled).
///
/// Uses square loss on a scalar-output dense/relu network with real-valued
/// labels `y` and `y_t`. With zero noise the final-layer ratio is exactly 2:
/// the backdoor shifts gradients twice as far from benign training as the
/// noise-augmented variant does.
pub fn weight_gradient_ratio(
    model: &Model,
    x: &Tensor,
    y: f64,
    trigger: &Trigger,
    y_t: f64,
    noise: &Tensor,
) -> Result<GradientRatioReport> {
    if y == y_t {
        return Err(Error::Config(
            "source and target labels must differ for the gradient ratio".into(),
        ));
    }
    model.check_item(x)?;
    if trigger.shape() != x.shape() || noise.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            context: "gradient ratio trigger/noise vs input",
            expected: x.shape().to_vec(),
            got: if trigger.shape() != x.shape() {
                trigger.shape().to_vec()
            } else {
                noise.shape().to_vec()
            },
        });
    }
    let net = DenseNet::lower(model)?;

    let x_prime = amend(x, trigger)?;
    let mut noisy_pattern = trigger.pattern().clone();
    for (p, &n) in noisy_pattern.data_mut().iter_mut().zip(noise.data()) {
        *p = (*p + n).clamp(0.0, 1.0);
    }
    let x_star = amend_soft(x, trigger.mask(), &noisy_pattern)?;

    let to64 = |t: &Tensor| -> Vec<f64> { t.data().iter().map(|&v| v as f64).collect() };
    let (x0, x1, x2) = (to64(x), to64(&x_prime), to64(&x_star));

    let g_benign = net.dataset_gradient(&[(&x0, y), (&x1, y), (&x2, y)], 1.0);
    let g_backdoor = net.dataset_gradient(&[(&x0, y), (&x1, y_t), (&x2, y_t)], 1.0);
    let g_grasp = net.dataset_gradient(&[(&x0, y), (&x1, y_t), (&x2, y)], 1.0);

    let num: Vec<f64> = g_benign
        .iter()
        .zip(&g_backdoor)
        .map(|(a, b)| a - b)
        .collect();
    let den: Vec<f64> = g_benign
        .iter()
        .zip(&g_grasp)
        .map(|(a, b)| a - b)
        .collect();
    ratio_report(&net, &num, &den)
}

fn ratio_report(net: &DenseNet, num: &[f64], den: &[f64]) -> Result<GradientRatioReport> {
    let (last_start, last_weights, _bias_len) = net.final_layer_span();
    let bias_idx = last_start + last_weights;

    let weight_norm_sq: f64 = den[last_start..last_start + last_weights]
        .iter()
        .map(|v| v * v)
        .sum();
    if weight_norm_sq == 0.0 {
        return Err(Error::Numeric(
            "activation assumption violated: the final layer sees no activation \
             difference between poisoning strategies"
                .into(),
        ));
    }
    let last = last_start..net.param_count();
    let dot: f64 = num[last.clone()]
        .iter()
        .zip(&den[last.clone()])
        .map(|(a, b)| a * b)
        .sum();
    let norm_sq: f64 = den[last.clone()].iter().map(|v| v * v).sum();
    let last_layer_ratio = dot / norm_sq;
    let bias_ratio = num[bias_idx] / den[bias_idx];

    let hidden = 0..last_start;
    let max_den = den[hidden.clone()]
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut live = 0usize;
    let mut holds = true;
    for i in hidden.clone() {
        if den[i].abs() >= 1e-9 * max_den && den[i] != 0.0 {
            live += 1;
            if (num[i] - den[i]) * den[i].signum() <= 0.0 {
                holds = false;
            }
        }
    }
    Ok(GradientRatioReport {
        last_layer_ratio,
        bias_ratio,
        hidden_inequality_holds: holds,
        live_hidden_params: live,
        checked_hidden_params: hidden.len(),
    })
}

/// A dense/relu network mirrored into f64 so gradient identities are checked
/// at full precision rather than model-inference precision.
struct DenseNet {
    layers: Vec<NetLayer>,
}

enum NetLayer {
    Dense {
        w: Vec<f64>,
        b: Vec<f64>,
        in_dim: usize,
        out_dim: usize,
    },
    Relu,
}

impl DenseNet {
    /// Accepts models built from flatten/dense/relu layers with one output.
    fn lower(model: &Model) -> Result<DenseNet> {
        if model.num_classes() != 1 {
            return Err(Error::Config(
                "gradient ratio analysis needs a scalar-output model".into(),
            ));
        }
        let mut layers = Vec::new();
        for layer in model.layers() {
            match &layer.spec {
                LayerSpec::Flatten => {}
                LayerSpec::Relu => layers.push(NetLayer::Relu),
                LayerSpec::Dense { in_dim, out_dim } => layers.push(NetLayer::Dense {
                    w: layer.weight.iter().map(|&v| v as f64).collect(),
                    b: layer.bias.iter().map(|&v| v as f64).collect(),
                    in_dim: *in_dim,
                    out_dim: *out_dim,
                }),
                LayerSpec::Conv2d { .. } => {
                    return Err(Error::Config(
                        "gradient ratio analysis supports dense/relu networks only".into(),
                    ))
                }
            }
        }
        match layers.last() {
            Some(NetLayer::Dense { out_dim: 1, .. }) => Ok(DenseNet { layers }),
            _ => Err(Error::Config(
                "gradient ratio analysis needs a final dense layer with one output".into(),
            )),
        }
    }

    fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                NetLayer::Dense { w, b, .. } => w.len() + b.len(),
                NetLayer::Relu => 0,
            })
            .sum()
    }

    /// (start offset, weight count, bias count) of the final dense layer in
    /// the flat parameter vector.
    fn final_layer_span(&self) -> (usize, usize, usize) {
        let mut start = 0;
        let mut span = (0, 0, 0);
        for l in &self.layers {
            if let NetLayer::Dense { w, b, .. } = l {
                span = (start, w.len(), b.len());
                start += w.len() + b.len();
            }
        }
        span
    }

    /// Forward pass storing each layer's input.
    fn forward(&self, x: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            inputs.push(a.clone());
            a = match layer {
                NetLayer::Dense {
                    w,
                    b,
                    in_dim,
                    out_dim,
                } => (0..*out_dim)
                    .map(|p| {
                        let row = &w[p * in_dim..(p + 1) * in_dim];
                        b[p] + row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>()
                    })
                    .collect(),
                NetLayer::Relu => a.iter().map(|&v| v.max(0.0)).collect(),
            };
        }
        (a[0], inputs)
    }

    /// Gradient of `scale * 0.5 * sum_samples (f(x) - y)^2` with respect to
    /// every dense parameter, flattened layer by layer (weights then bias).
    fn dataset_gradient(&self, samples: &[(&Vec<f64>, f64)], scale: f64) -> Vec<f64> {
        let mut grad = vec![0.0f64; self.param_count()];
        for &(x, y) in samples {
            let (out, inputs) = self.forward(x);
            let mut delta = vec![scale * (out - y)];
            // Walk layers backward, accumulating parameter gradients.
            let mut offsets: Vec<usize> = Vec::with_capacity(self.layers.len());
            let mut off = 0;
            for l in &self.layers {
                offsets.push(off);
                if let NetLayer::Dense { w, b, .. } = l {
                    off += w.len() + b.len();
                }
            }
            for (idx, layer) in self.layers.iter().enumerate().rev() {
                match layer {
                    NetLayer::Dense {
                        w,
                        in_dim,
                        out_dim,
                        ..
                    } => {
                        let a = &inputs[idx];
                        let base = offsets[idx];
                        let mut prev = vec![0.0f64; *in_dim];
                        for p in 0..*out_dim {
                            for q in 0..*in_dim {
                                grad[base + p * in_dim + q] += delta[p] * a[q];
                                prev[q] += w[p * in_dim + q] * delta[p];
                            }
                            grad[base + out_dim * in_dim + p] += delta[p];
                        }
                        delta = prev;
                    }
                    NetLayer::Relu => {
                        for (d, &z) in delta.iter_mut().zip(&inputs[idx]) {
                            if z <= 0.0 {
                                *d = 0.0;
                            }
                        }
                    }
                }
            }
        }
        grad
    }
}
