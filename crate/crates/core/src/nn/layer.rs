//! Layer kinds, their parameters, and per-layer forward/backward passes.
//!
//! Weight layouts: dense weights are `(out, in)` row-major; convolution
//! weights are `(out_c, in_c, k, k)` row-major. Convolutions are "valid"
//! (no padding) with a square kernel and a configurable stride.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture element, serialized into checkpoint headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Flatten,
}

impl LayerSpec {
    /// Output shape of one sample given its input shape, or an error when the
    /// layer cannot accept that shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                if input != [in_dim] {
                    return Err(Error::ShapeMismatch {
                        context: "dense layer input",
                        expected: vec![in_dim],
                        got: input.to_vec(),
                    });
                }
                Ok(vec![out_dim])
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                if stride == 0 {
                    return Err(Error::Config("convolution stride must be >= 1".into()));
                }
                match input {
                    &[c, h, w] if c == in_channels && h >= kernel && w >= kernel => Ok(vec![
                        out_channels,
                        (h - kernel) / stride + 1,
                        (w - kernel) / stride + 1,
                    ]),
                    _ => Err(Error::ShapeMismatch {
                        context: "conv layer input",
                        expected: vec![in_channels, kernel, kernel],
                        got: input.to_vec(),
                    }),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Number of inputs feeding one output unit; drives the init scale.
    pub fn fan_in(&self) -> Option<usize> {
        match *self {
            LayerSpec::Dense { in_dim, .. } => Some(in_dim),
            LayerSpec::Conv2d {
                in_channels, kernel, ..
            } => Some(in_channels * kernel * kernel),
            _ => None,
        }
    }

    /// `(weight_len, bias_len)` for parameterized layers.
    pub fn param_counts(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => (in_dim * out_dim, out_dim),
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => (out_channels * in_channels * kernel * kernel, out_channels),
            _ => (0, 0),
        }
    }
}

/// A layer with its parameters. `weight` and `bias` are empty for layers
/// without parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

/// Gradients for one layer, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Layer {
    /// Layer with zero-initialized parameters.
    pub fn zeroed(spec: LayerSpec) -> Self {
        let (w, b) = spec.param_counts();
        Layer {
            spec,
            weight: vec![0.0; w],
            bias: vec![0.0; b],
        }
    }

    /// Dense layer from explicit row-major `(out, in)` weights and biases.
    pub fn dense(in_dim: usize, out_dim: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if weight.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Config(format!(
                "dense({in_dim}x{out_dim}) got {} weights and {} biases",
                weight.len(),
                bias.len()
            )));
        }
        Ok(Layer {
            spec: LayerSpec::Dense { in_dim, out_dim },
            weight,
            bias,
        })
    }

    /// Forward pass on a batch whose per-sample shape has been validated.
    pub fn forward(&self, input: &Tensor) -> Tensor {
        let batch = input.shape()[0];
        let in_shape = &input.shape()[1..];
        let out_shape = self
            .spec
            .output_shape(in_shape)
            .expect("layer input validated at model construction");
        match self.spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let x = input.data();
                let mut out = vec![0.0f32; batch * out_dim];
                for b in 0..batch {
                    let xrow = &x[b * in_dim..(b + 1) * in_dim];
                    for o in 0..out_dim {
                        let wrow = &self.weight[o * in_dim..(o + 1) * in_dim];
                        let mut acc = self.bias[o];
                        for i in 0..in_dim {
                            acc += wrow[i] * xrow[i];
                        }
                        out[b * out_dim + o] = acc;
                    }
                }
                let mut shape = vec![batch];
                shape.extend_from_slice(&out_shape);
                Tensor::from_vec(&shape, out).expect("dense output shape")
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let (h, w) = (in_shape[1], in_shape[2]);
                let (oh, ow) = (out_shape[1], out_shape[2]);
                let x = input.data();
                let mut out = vec![0.0f32; batch * out_channels * oh * ow];
                for b in 0..batch {
                    for oc in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let mut acc = self.bias[oc];
                                for ic in 0..in_channels {
                                    for ky in 0..kernel {
                                        let iy = oy * stride + ky;
                                        let xbase = ((b * in_channels + ic) * h + iy) * w
                                            + ox * stride;
                                        let wbase =
                                            ((oc * in_channels + ic) * kernel + ky) * kernel;
                                        for kx in 0..kernel {
                                            acc += self.weight[wbase + kx] * x[xbase + kx];
                                        }
                                    }
                                }
                                out[((b * out_channels + oc) * oh + oy) * ow + ox] = acc;
                            }
                        }
                    }
                }
                let mut shape = vec![batch];
                shape.extend_from_slice(&out_shape);
                Tensor::from_vec(&shape, out).expect("conv output shape")
            }
            LayerSpec::Relu => {
                let mut out = input.clone();
                for v in out.data_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                out
            }
            LayerSpec::Flatten => {
                let mut shape = vec![batch];
                shape.extend_from_slice(&out_shape);
                input.reshaped(&shape).expect("flatten preserves count")
            }
        }
    }

    /// Backward pass: gradient w.r.t. the layer input, plus parameter
    /// gradients when `want_params` is set.
    pub fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        want_params: bool,
    ) -> (Tensor, LayerGrads) {
        let batch = input.shape()[0];
        match self.spec {
            LayerSpec::Dense { in_dim, out_dim } => {
                let x = input.data();
                let g = grad_out.data();
                let mut gx = vec![0.0f32; batch * in_dim];
                let mut gw = vec![0.0f32; if want_params { in_dim * out_dim } else { 0 }];
                let mut gb = vec![0.0f32; if want_params { out_dim } else { 0 }];
                for b in 0..batch {
                    let xrow = &x[b * in_dim..(b + 1) * in_dim];
                    let grow = &g[b * out_dim..(b + 1) * out_dim];
                    let gxrow = &mut gx[b * in_dim..(b + 1) * in_dim];
                    for o in 0..out_dim {
                        let go = grow[o];
                        let wrow = &self.weight[o * in_dim..(o + 1) * in_dim];
                        for i in 0..in_dim {
                            gxrow[i] += go * wrow[i];
                        }
                        if want_params {
                            let gwrow = &mut gw[o * in_dim..(o + 1) * in_dim];
                            for i in 0..in_dim {
                                gwrow[i] += go * xrow[i];
                            }
                            gb[o] += go;
                        }
                    }
                }
                (
                    Tensor::from_vec(input.shape(), gx).expect("dense grad shape"),
                    LayerGrads { weight: gw, bias: gb },
                )
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                let in_shape = &input.shape()[1..];
                let (h, w) = (in_shape[1], in_shape[2]);
                let oh = (h - kernel) / stride + 1;
                let ow = (w - kernel) / stride + 1;
                let x = input.data();
                let g = grad_out.data();
                let mut gx = vec![0.0f32; input.len()];
                let wlen = out_channels * in_channels * kernel * kernel;
                let mut gw = vec![0.0f32; if want_params { wlen } else { 0 }];
                let mut gb = vec![0.0f32; if want_params { out_channels } else { 0 }];
                for b in 0..batch {
                    for oc in 0..out_channels {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let go = g[((b * out_channels + oc) * oh + oy) * ow + ox];
                                if want_params {
                                    gb[oc] += go;
                                }
                                for ic in 0..in_channels {
                                    for ky in 0..kernel {
                                        let iy = oy * stride + ky;
                                        let xbase = ((b * in_channels + ic) * h + iy) * w
                                            + ox * stride;
                                        let wbase =
                                            ((oc * in_channels + ic) * kernel + ky) * kernel;
                                        for kx in 0..kernel {
                                            gx[xbase + kx] += go * self.weight[wbase + kx];
                                            if want_params {
                                                gw[wbase + kx] += go * x[xbase + kx];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                (
                    Tensor::from_vec(input.shape(), gx).expect("conv grad shape"),
                    LayerGrads { weight: gw, bias: gb },
                )
            }
            LayerSpec::Relu => {
                let mut gx = grad_out.clone();
                for (gv, &xv) in gx.data_mut().iter_mut().zip(input.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                (
                    gx,
                    LayerGrads {
                        weight: Vec::new(),
                        bias: Vec::new(),
                    },
                )
            }
            LayerSpec::Flatten => (
                grad_out
                    .reshaped(input.shape())
                    .expect("flatten grad preserves count"),
                LayerGrads {
                    weight: Vec::new(),
                    bias: Vec::new(),
                },
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dense_forward_matches_hand_computation() {
        // y = W x + b with W = [[1, 2], [-1, 0.5]], b = [0.5, -0.25].
        let layer =
            Layer::dense(2, 2, vec![1.0, 2.0, -1.0, 0.5], vec![0.5, -0.25]).unwrap();
        let x = Tensor::from_vec(&[1, 2], vec![0.3, -0.2]).unwrap();
        let y = layer.forward(&x);
        let expect = [0.3 - 0.4 + 0.5, -0.3 - 0.1 - 0.25];
        for (got, want) in y.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_forward_matches_hand_computation() {
        // One 2x2 kernel over a 3x3 image, stride 1: each output is the sum of
        // the covered 2x2 window (all-ones kernel, zero bias).
        let spec = LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 1,
            kernel: 2,
            stride: 1,
        };
        let mut layer = Layer::zeroed(spec);
        layer.weight.iter_mut().for_each(|w| *w = 1.0);
        let x = Tensor::from_vec(
            &[1, 1, 3, 3],
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let y = layer.forward(&x);
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        let expect = [12.0, 16.0, 24.0, 28.0];
        for (got, want) in y.data().iter().zip(expect) {
            assert!((got - want).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_stride_two_shrinks_output() {
        let spec = LayerSpec::Conv2d {
            in_channels: 1,
            out_channels: 4,
            kernel: 3,
            stride: 2,
        };
        assert_eq!(spec.output_shape(&[1, 28, 28]).unwrap(), vec![4, 13, 13]);
        assert_eq!(spec.output_shape(&[1, 8, 8]).unwrap(), vec![4, 3, 3]);
    }

    #[test]
    fn relu_zeroes_gradient_at_nonpositive_inputs() {
        let layer = Layer::zeroed(LayerSpec::Relu);
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let (gx, _) = layer.backward(&x, &g, false);
        assert_eq!(gx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn dense_rejects_image_input() {
        let spec = LayerSpec::Dense { in_dim: 4, out_dim: 2 };
        assert!(spec.output_shape(&[1, 2, 2]).is_err());
        assert!(spec.output_shape(&[4]).is_ok());
    }
}
