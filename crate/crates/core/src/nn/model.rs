//! The model container: a validated layer stack with forward, reverse-mode
//! gradients, and prediction helpers.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerGrads, LayerSpec};
use crate::rng::{self, tags};
use crate::tensor::Tensor;

/// A feed-forward network. The per-sample input shape and the class count are
/// fixed at construction; every layer transition is shape-checked once, so the
/// hot paths can assume consistency.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    num_classes: usize,
    layers: Vec<Layer>,
}

/// Cached activations from a forward pass: `activations[0]` is the input
/// batch and `activations[i + 1]` the output of layer `i`.
#[derive(Debug)]
pub struct ForwardTrace {
    pub(crate) activations: Vec<Tensor>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Tensor {
        self.activations.last().expect("trace has activations")
    }
}

/// Result of a full backward pass.
#[derive(Debug)]
pub struct Gradients {
    /// Per-layer parameter gradients, index-aligned with the model's layers.
    pub layers: Vec<LayerGrads>,
    /// Gradient with respect to the input batch.
    pub input: Tensor,
}

impl Model {
    /// Builds a model with seeded uniform initialization in
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` for weights and biases.
    pub fn new_seeded(
        input_shape: &[usize],
        num_classes: usize,
        specs: &[LayerSpec],
        seed: u64,
    ) -> Result<Self> {
        let mut layers: Vec<Layer> = specs.iter().cloned().map(Layer::zeroed).collect();
        let mut rng = rng::stream(seed, tags::INIT);
        for layer in &mut layers {
            if let Some(fan_in) = layer.spec.fan_in() {
                let s = 1.0 / (fan_in as f32).sqrt();
                for w in &mut layer.weight {
                    *w = rng.random_range(-s..s);
                }
                for b in &mut layer.bias {
                    *b = rng.random_range(-s..s);
                }
            }
        }
        Model::from_layers(input_shape, num_classes, layers)
    }

    /// Builds a model from fully specified layers, validating the shape chain
    /// and that the final output is one logit per class.
    pub fn from_layers(
        input_shape: &[usize],
        num_classes: usize,
        layers: Vec<Layer>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Config("a model needs at least one class".into()));
        }
        if layers.is_empty() {
            return Err(Error::Config("a model needs at least one layer".into()));
        }
        let mut shape = input_shape.to_vec();
        for layer in &layers {
            let (wlen, blen) = layer.spec.param_counts();
            if layer.weight.len() != wlen || layer.bias.len() != blen {
                return Err(Error::Config(format!(
                    "layer {:?} carries {} weights / {} biases, expected {wlen} / {blen}",
                    layer.spec,
                    layer.weight.len(),
                    layer.bias.len()
                )));
            }
            shape = layer.spec.output_shape(&shape)?;
        }
        if shape != [num_classes] {
            return Err(Error::ShapeMismatch {
                context: "model output",
                expected: vec![num_classes],
                got: shape,
            });
        }
        Ok(Model {
            input_shape: input_shape.to_vec(),
            num_classes,
            layers,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let shape = batch.shape();
        if shape.len() != self.input_shape.len() + 1
            || shape[0] == 0
            || shape[1..] != self.input_shape[..]
        {
            let mut expected = vec![0];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::ShapeMismatch {
                context: "model input batch",
                expected,
                got: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Checks that a tensor is shaped like one model input.
    pub fn check_item(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.input_shape {
            return Err(Error::ShapeMismatch {
                context: "model input item",
                expected: self.input_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate activation for backward.
    pub fn forward_trace(&self, batch: &Tensor) -> Result<ForwardTrace> {
        self.check_batch(batch)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(batch.clone());
        for layer in &self.layers {
            let next = layer.forward(activations.last().expect("nonempty"));
            activations.push(next);
        }
        Ok(ForwardTrace { activations })
    }

    /// Logits for a batch, shape `(B, num_classes)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let mut current = batch.clone();
        for layer in &self.layers {
            current = layer.forward(&current);
        }
        Ok(current)
    }

    /// Logits for a single sample.
    pub fn logits_one(&self, x: &Tensor) -> Result<Vec<f32>> {
        let batch = Tensor::stack(&[x])?;
        Ok(self.forward(&batch)?.into_data())
    }

    /// Argmax class per sample; the first maximal logit wins ties.
    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        let logits = self.forward(batch)?;
        let k = self.num_classes;
        Ok(logits
            .data()
            .chunks_exact(k)
            .map(argmax)
            .collect())
    }

    /// Predicted class for a single sample.
    pub fn predict_one(&self, x: &Tensor) -> Result<usize> {
        Ok(argmax(&self.logits_one(x)?))
    }

    /// Full backward pass from a logit cotangent (shape `(B, num_classes)`).
    pub fn backward(&self, trace: &ForwardTrace, grad_logits: &Tensor) -> Gradients {
        let (grads, input) = self.backprop(trace, grad_logits, true);
        Gradients {
            layers: grads,
            input,
        }
    }

    /// Backward pass computing only the gradient w.r.t. the input batch.
    /// Cheaper than [`Model::backward`] when parameter gradients are unused.
    pub fn backward_input(&self, trace: &ForwardTrace, grad_logits: &Tensor) -> Tensor {
        self.backprop(trace, grad_logits, false).1
    }

    fn backprop(
        &self,
        trace: &ForwardTrace,
        grad_logits: &Tensor,
        want_params: bool,
    ) -> (Vec<LayerGrads>, Tensor) {
        assert_eq!(
            trace.activations.len(),
            self.layers.len() + 1,
            "trace does not belong to this model"
        );
        assert_eq!(
            grad_logits.shape(),
            trace.logits().shape(),
            "logit cotangent shape"
        );
        let mut grad = grad_logits.clone();
        let mut layer_grads: Vec<LayerGrads> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (gx, gparams) = layer.backward(&trace.activations[i], &grad, want_params);
            grad = gx;
            layer_grads.push(gparams);
        }
        layer_grads.reverse();
        (layer_grads, grad)
    }

    /// Rows of the Jacobian of the logits at a single input point: one
    /// input-shaped gradient tensor per class.
    pub fn input_jacobian(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        let batch = Tensor::stack(&[x])?;
        let trace = self.forward_trace(&batch)?;
        let k = self.num_classes;
        let mut rows = Vec::with_capacity(k);
        for c in 0..k {
            let mut cot = vec![0.0f32; k];
            cot[c] = 1.0;
            let cot = Tensor::from_vec(&[1, k], cot).expect("cotangent shape");
            let gx = self.backward_input(&trace, &cot);
            rows.push(gx.unstack(0));
        }
        Ok(rows)
    }
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Flatten -> dense(hidden) -> relu -> dense(classes). Works for flat and
/// image-shaped inputs.
pub fn mlp_arch(input_shape: &[usize], hidden: usize, num_classes: usize) -> Vec<LayerSpec> {
    let m: usize = input_shape.iter().product();
    vec![
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_dim: m,
            out_dim: hidden,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            in_dim: hidden,
            out_dim: num_classes,
        },
    ]
}

/// Two stride-2 convolutions followed by two dense layers. Requires a
/// `(channels, height, width)` input shape at least 7 pixels on each side.
pub fn small_cnn_arch(input_shape: &[usize], num_classes: usize) -> Result<Vec<LayerSpec>> {
    let &[c, h, w] = input_shape else {
        return Err(Error::ShapeMismatch {
            context: "cnn input shape",
            expected: vec![1, 28, 28],
            got: input_shape.to_vec(),
        });
    };
    let conv1 = LayerSpec::Conv2d {
        in_channels: c,
        out_channels: 8,
        kernel: 3,
        stride: 2,
    };
    let s1 = conv1.output_shape(&[c, h, w])?;
    let conv2 = LayerSpec::Conv2d {
        in_channels: 8,
        out_channels: 16,
        kernel: 3,
        stride: 2,
    };
    let s2 = conv2.output_shape(&s1)?;
    let flat: usize = s2.iter().product();
    Ok(vec![
        conv1,
        LayerSpec::Relu,
        conv2,
        LayerSpec::Relu,
        LayerSpec::Flatten,
        LayerSpec::Dense {
            in_dim: flat,
            out_dim: 64,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            in_dim: 64,
            out_dim: num_classes,
        },
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_layer_fixture() -> Model {
        // Hand-traceable 2-2-2 MLP; see forward test for the arithmetic.
        let l1 = Layer::dense(2, 2, vec![1.0, 2.0, -1.0, 0.5], vec![0.5, -0.25]).unwrap();
        let l2 = Layer::dense(2, 2, vec![2.0, -1.0, 0.5, 1.0], vec![0.1, -0.1]).unwrap();
        Model::from_layers(
            &[2],
            2,
            vec![l1, Layer::zeroed(LayerSpec::Relu), l2],
        )
        .unwrap()
    }

    #[test]
    fn forward_matches_hand_computed_two_layer_mlp() {
        // x = (0.3, -0.2)
        // pre1 = (0.3 - 0.4 + 0.5, -0.3 - 0.1 - 0.25) = (0.4, -0.65)
        // relu = (0.4, 0)
        // logits = (2*0.4 + 0.1, 0.5*0.4 - 0.1) = (0.9, 0.1)
        let model = two_layer_fixture();
        let logits = model
            .logits_one(&Tensor::from_vec(&[2], vec![0.3, -0.2]).unwrap())
            .unwrap();
        assert!((logits[0] - 0.9).abs() < 1e-6);
        assert!((logits[1] - 0.1).abs() < 1e-6);
    }

    #[test]
    fn zero_weight_model_yields_zero_logits() {
        let specs = mlp_arch(&[5], 4, 3);
        let layers = specs.into_iter().map(Layer::zeroed).collect();
        let model = Model::from_layers(&[5], 3, layers).unwrap();
        let x = Tensor::from_vec(&[5], vec![0.3, 0.9, 0.1, 0.7, 0.2]).unwrap();
        let logits = model.logits_one(&x).unwrap();
        assert!(logits.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_dense_reads_off_first_weight_column() {
        // Input e_1 selects column 0 of the weight matrix plus the bias.
        let layer = Layer::dense(
            3,
            2,
            vec![0.7, 0.0, 0.0, -0.3, 0.5, 0.5],
            vec![0.05, -0.05],
        )
        .unwrap();
        let model = Model::from_layers(&[3], 2, vec![layer]).unwrap();
        let e1 = Tensor::from_vec(&[3], vec![1.0, 0.0, 0.0]).unwrap();
        let logits = model.logits_one(&e1).unwrap();
        assert!((logits[0] - 0.75).abs() < 1e-6);
        assert!((logits[1] - (-0.35)).abs() < 1e-6);
    }

    #[test]
    fn batched_forward_equals_per_sample_forward() {
        let model = Model::new_seeded(&[1, 7, 7], 3, &small_cnn_arch(&[1, 7, 7], 3).unwrap(), 7)
            .unwrap();
        let mut samples = Vec::new();
        for i in 0..4 {
            let data: Vec<f32> = (0..49).map(|j| ((i * 37 + j * 11) % 100) as f32 / 100.0).collect();
            samples.push(Tensor::from_vec(&[1, 7, 7], data).unwrap());
        }
        let batch = Tensor::stack(&samples.iter().collect::<Vec<_>>()).unwrap();
        let batched = model.forward(&batch).unwrap();
        for (i, s) in samples.iter().enumerate() {
            let single = model.logits_one(s).unwrap();
            for (a, b) in batched.unstack(i).data().iter().zip(&single) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn construction_rejects_inconsistent_chains() {
        // Dense dimension mismatch inside the stack.
        let specs = vec![
            LayerSpec::Flatten,
            LayerSpec::Dense { in_dim: 10, out_dim: 4 },
            LayerSpec::Dense { in_dim: 5, out_dim: 2 },
        ];
        assert!(Model::new_seeded(&[10], 2, &specs, 0).is_err());
        // Final width must equal the class count.
        let specs = vec![LayerSpec::Dense { in_dim: 4, out_dim: 3 }];
        assert!(Model::new_seeded(&[4], 2, &specs, 0).is_err());
    }

    #[test]
    fn seeded_init_is_reproducible_and_bounded() {
        let specs = mlp_arch(&[9], 16, 2);
        let a = Model::new_seeded(&[9], 2, &specs, 11).unwrap();
        let b = Model::new_seeded(&[9], 2, &specs, 11).unwrap();
        let c = Model::new_seeded(&[9], 2, &specs, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 1.0 / 3.0 + 1e-6;
        for l in a.layers() {
            assert!(l.weight.iter().all(|w| w.abs() <= bound));
        }
    }

    #[test]
    fn jacobian_of_dense_model_is_weight_row() {
        let layer = Layer::dense(3, 2, vec![1.0, -2.0, 0.5, 0.0, 1.0, 3.0], vec![0.0, 0.0])
            .unwrap();
        let model = Model::from_layers(&[3], 2, vec![layer]).unwrap();
        let x = Tensor::from_vec(&[3], vec![0.4, 0.2, 0.9]).unwrap();
        let rows = model.input_jacobian(&x).unwrap();
        assert_eq!(rows[0].data(), &[1.0, -2.0, 0.5]);
        assert_eq!(rows[1].data(), &[0.0, 1.0, 3.0]);
    }
}
