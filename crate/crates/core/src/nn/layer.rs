use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::im2col::{im2col, ConvGeometry};
use crate::nn::tensor::Tensor;

/// One layer of a feed-forward model.
///
/// Linear weights are `[out, in]`; convolution kernels are
/// `[out_ch, in_ch, kh, kw]`. Both flatten to an `[out, fan_in]` matrix, which
/// is what gets programmed into crossbars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    Linear {
        in_features: usize,
        out_features: usize,
        weights: Tensor,
        bias: Tensor,
    },
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        padding: usize,
        kernels: Tensor,
        bias: Tensor,
    },
    Relu,
    MaxPool2d {
        size: usize,
        stride: usize,
    },
    Flatten,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
            LayerSpec::Flatten => "flatten",
        }
    }

    /// Whether the layer's weights live on crossbars.
    pub fn is_weighted(&self) -> bool {
        matches!(self, LayerSpec::Linear { .. } | LayerSpec::Conv2d { .. })
    }

    /// `(fan_in, fan_out, [fan_out, fan_in] weights, bias)` for weighted layers.
    pub fn weight_matrix(&self) -> Option<(usize, usize, &[f32], &[f32])> {
        match self {
            LayerSpec::Linear {
                in_features,
                out_features,
                weights,
                bias,
            } => Some((*in_features, *out_features, weights.data(), bias.data())),
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                kernels,
                bias,
                ..
            } => Some((in_ch * kh * kw, *out_ch, kernels.data(), bias.data())),
            _ => None,
        }
    }

    pub fn conv_geometry(&self) -> Option<ConvGeometry> {
        match self {
            LayerSpec::Conv2d {
                in_ch,
                kh,
                kw,
                stride,
                padding,
                ..
            } => Some(ConvGeometry {
                in_ch: *in_ch,
                kh: *kh,
                kw: *kw,
                stride: *stride,
                padding: *padding,
            }),
            _ => None,
        }
    }

    fn check_params(&self) -> Result<()> {
        match self {
            LayerSpec::Linear {
                in_features,
                out_features,
                weights,
                bias,
            } => {
                expect_shape("linear weights", weights, &[*out_features, *in_features])?;
                expect_shape("linear bias", bias, &[*out_features])
            }
            LayerSpec::Conv2d {
                in_ch,
                out_ch,
                kh,
                kw,
                kernels,
                bias,
                ..
            } => {
                expect_shape("conv kernels", kernels, &[*out_ch, *in_ch, *kh, *kw])?;
                expect_shape("conv bias", bias, &[*out_ch])
            }
            _ => Ok(()),
        }
    }

    /// Output shape for `input`, also checking the layer's own parameters.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.check_params()?;
        match self {
            LayerSpec::Linear {
                in_features,
                out_features,
                ..
            } => {
                if input != [*in_features] {
                    return Err(Error::Shape(format!(
                        "linear layer expects [{in_features}], got {input:?}"
                    )));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Conv2d { out_ch, .. } => {
                let geom = self.conv_geometry().unwrap();
                if input.len() != 3 || input[0] != geom.in_ch {
                    return Err(Error::Shape(format!(
                        "conv layer expects [{}, h, w], got {input:?}",
                        geom.in_ch
                    )));
                }
                let (oh, ow) = geom.output_hw(input[1], input[2])?;
                Ok(vec![*out_ch, oh, ow])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2d { size, stride } => {
                if input.len() != 3
                    || *size == 0
                    || *stride == 0
                    || input[1] < *size
                    || input[2] < *size
                {
                    return Err(Error::Shape(format!(
                        "max pool {size}/{stride} cannot apply to {input:?}"
                    )));
                }
                Ok(vec![
                    input[0],
                    (input[1] - size) / stride + 1,
                    (input[2] - size) / stride + 1,
                ])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
        }
    }
}

fn expect_shape(what: &str, t: &Tensor, shape: &[usize]) -> Result<()> {
    if t.shape() != shape {
        return Err(Error::Shape(format!(
            "{what}: expected {shape:?}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

/// Layers that never touch a crossbar.
pub(crate) fn apply_digital(layer: &LayerSpec, x: Tensor) -> Result<Tensor> {
    match layer {
        LayerSpec::Relu => {
            let mut x = x;
            for v in x.data_mut() {
                // NaN stays NaN so upstream corruption is not masked.
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            Ok(x)
        }
        LayerSpec::Flatten => {
            let n = x.len();
            x.reshape(vec![n])
        }
        LayerSpec::MaxPool2d { size, stride } => {
            let out_shape = layer.output_shape(x.shape())?;
            let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
            let (oh, ow) = (out_shape[1], out_shape[2]);
            let src = x.data();
            let mut out = Vec::with_capacity(c * oh * ow);
            for ch in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut m = f32::NEG_INFINITY;
                        for dy in 0..*size {
                            for dx in 0..*size {
                                let v = src[(ch * h + oy * stride + dy) * w + ox * stride + dx];
                                if v > m {
                                    m = v;
                                }
                            }
                        }
                        out.push(m);
                    }
                }
            }
            Tensor::new(out_shape, out)
        }
        _ => Err(Error::InvalidParameter(format!(
            "{} is not a digital layer",
            layer.kind()
        ))),
    }
}

/// Ordered layer list plus the expected input shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelGraph {
    pub name: String,
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelGraph {
    pub fn new(
        name: impl Into<String>,
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
    ) -> Result<Self> {
        let graph = ModelGraph {
            name: name.into(),
            input_shape,
            layers,
        };
        graph.shapes()?;
        Ok(graph)
    }

    /// Input shape of every layer followed by the model's output shape.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::Shape(format!("layer {i} ({}): {e}", layer.kind())))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self.shapes()?.pop().unwrap())
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "model {} expects input {:?}, got {:?}",
                self.name,
                self.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Plain floating-point inference.
    pub fn forward_exact(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                LayerSpec::Linear { .. } => {
                    let (fan_in, fan_out, w, b) = layer.weight_matrix().unwrap();
                    Tensor::from_vec(dense(x.data(), fan_in, fan_out, w, b))
                }
                LayerSpec::Conv2d { .. } => {
                    let (fan_in, fan_out, w, b) = layer.weight_matrix().unwrap();
                    let patches = im2col(&x, &layer.conv_geometry().unwrap())?;
                    let positions = patches.positions;
                    let mut out = vec![0.0; fan_out * positions];
                    for p in 0..positions {
                        let y = dense(patches.patch(p), fan_in, fan_out, w, b);
                        for (oc, v) in y.into_iter().enumerate() {
                            out[oc * positions + p] = v;
                        }
                    }
                    Tensor::new(vec![fan_out, patches.out_h, patches.out_w], out)?
                }
                other => apply_digital(other, x)?,
            };
        }
        Ok(x)
    }
}

/// `y[j] = b[j] + sum_i w[j][i] * x[i]` with `w` stored `[fan_out, fan_in]`.
pub(crate) fn dense(x: &[f32], fan_in: usize, fan_out: usize, w: &[f32], b: &[f32]) -> Vec<f32> {
    debug_assert_eq!(x.len(), fan_in);
    (0..fan_out)
        .map(|j| {
            let row = &w[j * fan_in..(j + 1) * fan_in];
            b[j] + row.iter().zip(x).map(|(w, x)| w * x).sum::<f32>()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(i: usize, o: usize) -> LayerSpec {
        LayerSpec::Linear {
            in_features: i,
            out_features: o,
            weights: Tensor::zeros(vec![o, i]),
            bias: Tensor::zeros(vec![o]),
        }
    }

    #[test]
    fn shape_chain_validated() {
        let ok = ModelGraph::new(
            "mlp",
            vec![1, 4, 4],
            vec![
                LayerSpec::Flatten,
                linear(16, 8),
                LayerSpec::Relu,
                linear(8, 3),
            ],
        );
        assert_eq!(ok.unwrap().output_shape().unwrap(), vec![3]);
        let bad = ModelGraph::new(
            "mlp",
            vec![1, 4, 4],
            vec![LayerSpec::Flatten, linear(15, 8)],
        );
        assert!(bad.is_err());
        let missing_flatten = ModelGraph::new("mlp", vec![1, 4, 4], vec![linear(16, 8)]);
        assert!(missing_flatten.is_err());
    }

    #[test]
    fn bad_weight_shape_rejected() {
        let layer = LayerSpec::Linear {
            in_features: 4,
            out_features: 2,
            weights: Tensor::zeros(vec![4, 2]),
            bias: Tensor::zeros(vec![2]),
        };
        assert!(ModelGraph::new("m", vec![4], vec![layer]).is_err());
    }

    #[test]
    fn maxpool_and_relu() {
        let x = Tensor::new(vec![1, 2, 4], vec![1., -2., 3., 4., -5., 6., -7., 0.]).unwrap();
        let pooled =
            apply_digital(&LayerSpec::MaxPool2d { size: 2, stride: 2 }, x.clone()).unwrap();
        assert_eq!(pooled.shape(), &[1, 1, 2]);
        assert_eq!(pooled.data(), &[6., 4.]);
        let r = apply_digital(&LayerSpec::Relu, x).unwrap();
        assert!(r.data().iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn linear_exact() {
        let layer = LayerSpec::Linear {
            in_features: 2,
            out_features: 2,
            weights: Tensor::new(vec![2, 2], vec![1., 2., -1., 0.5]).unwrap(),
            bias: Tensor::new(vec![2], vec![0.5, 0.0]).unwrap(),
        };
        let g = ModelGraph::new("m", vec![2], vec![layer]).unwrap();
        let y = g.forward_exact(&Tensor::from_vec(vec![3., 4.])).unwrap();
        assert_eq!(y.data(), &[11.5, -1.0]);
        assert!(g.forward_exact(&Tensor::from_vec(vec![3.])).is_err());
    }
}
