//! Layer kinds and their forward/backward kernels.

use rand::Rng;

use crate::conv::{conv2d, conv2d_backward, ConvSpec, FilterBank};
use crate::error::{Error, Result};
use crate::tensor::{dot_fixed, Scalar, Shape, Tensor};

/// Whether batch statistics are computed (training) or running statistics
/// are used (inference).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel standardization with running statistics and no affine part.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelNorm<T> {
    pub channels: usize,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> ChannelNorm<T> {
    pub fn new(channels: usize) -> Self {
        ChannelNorm {
            channels,
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// Row-major `(out_features, in_features)`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weights: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
        }
    }

    /// Uniform in `±sqrt(1 / in_features)`, zero bias.
    pub fn init(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / in_features as f64).sqrt();
        Linear {
            in_features,
            out_features,
            weights: (0..in_features * out_features)
                .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
                .collect(),
            bias: vec![T::zero(); out_features],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer<T> {
    Conv {
        spec: ConvSpec,
        filters: FilterBank<T>,
    },
    Relu,
    /// 2x2 window, stride 2.
    MaxPool,
    Flatten,
    Linear(Linear<T>),
    ChannelNorm(ChannelNorm<T>),
}

/// What a layer keeps from the forward pass for its backward pass.
#[derive(Debug, Clone)]
pub enum LayerCache<T> {
    Input(Tensor<T>),
    Output(Tensor<T>),
    Pool {
        input_shape: Shape,
        argmax: Vec<u32>,
    },
    Flatten(Shape),
    Norm {
        normalized: Tensor<T>,
        inv_std: Vec<f64>,
        batch_mean: Vec<f64>,
        batch_var: Vec<f64>,
    },
    NormEval {
        inv_std: Vec<f64>,
    },
}

/// Parameter gradients of one layer, laid out like its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads<T> {
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv { spec, .. } => match spec.pad_mode {
                crate::conv::PadMode::Zero => "conv",
                crate::conv::PadMode::Cylindrical => "cyconv",
            },
            Layer::Relu => "relu",
            Layer::MaxPool => "maxpool",
            Layer::Flatten => "flatten",
            Layer::Linear(_) => "linear",
            Layer::ChannelNorm(_) => "channelnorm",
        }
    }

    pub fn param_count(&self) -> usize {
        match self {
            Layer::Conv { filters, .. } => filters.weights.data().len() + filters.bias.len(),
            Layer::Linear(l) => l.weights.len() + l.bias.len(),
            _ => 0,
        }
    }

    /// Mutable views of `(weights, bias)` for trainable layers.
    pub fn params_mut(&mut self) -> Option<(&mut [T], &mut [T])> {
        match self {
            Layer::Conv { filters, .. } => Some((filters.weights.data_mut(), &mut filters.bias)),
            Layer::Linear(l) => Some((&mut l.weights, &mut l.bias)),
            _ => None,
        }
    }

    pub fn params(&self) -> Option<(&[T], &[T])> {
        match self {
            Layer::Conv { filters, .. } => Some((filters.weights.data(), &filters.bias)),
            Layer::Linear(l) => Some((&l.weights, &l.bias)),
            _ => None,
        }
    }

    /// Output shape for a given input shape, or a message explaining why
    /// the input does not fit.
    pub fn output_shape(&self, input: Shape) -> std::result::Result<Shape, String> {
        let [n, c, h, w] = input.0;
        match self {
            Layer::Conv { spec, .. } => {
                spec.validate().map_err(|e| e.to_string())?;
                if c != spec.in_channels {
                    return Err(format!(
                        "expects {} input channels, got {c}",
                        spec.in_channels
                    ));
                }
                if spec.algorithm == crate::conv::ConvAlgorithm::Winograd
                    && (h % 2 != 0 || w % 2 != 0)
                {
                    return Err(format!("winograd needs even spatial dims, got {h}x{w}"));
                }
                let (oh, ow) = spec.output_hw(h, w).map_err(|e| e.to_string())?;
                Ok(Shape::new(n, spec.out_channels, oh, ow))
            }
            Layer::Relu => Ok(input),
            Layer::MaxPool => {
                if h < 2 || w < 2 {
                    return Err(format!("2x2 pooling needs at least 2x2 input, got {h}x{w}"));
                }
                Ok(Shape::new(n, c, h / 2, w / 2))
            }
            Layer::Flatten => Ok(Shape::new(n, c * h * w, 1, 1)),
            Layer::Linear(l) => {
                if c * h * w != l.in_features {
                    return Err(format!(
                        "expects {} features, got {}",
                        l.in_features,
                        c * h * w
                    ));
                }
                Ok(Shape::new(n, l.out_features, 1, 1))
            }
            Layer::ChannelNorm(norm) => {
                if c != norm.channels {
                    return Err(format!("expects {} channels, got {c}", norm.channels));
                }
                Ok(input)
            }
        }
    }

    pub(crate) fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, LayerCache<T>)> {
        match self {
            Layer::Conv { spec, filters } => {
                let y = conv2d(x, filters, spec)?;
                Ok((y, LayerCache::Input(x.clone())))
            }
            Layer::Relu => {
                let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
                Ok((y.clone(), LayerCache::Output(y)))
            }
            Layer::MaxPool => {
                let (y, argmax) = maxpool_forward(x);
                Ok((
                    y,
                    LayerCache::Pool {
                        input_shape: x.shape(),
                        argmax,
                    },
                ))
            }
            Layer::Flatten => {
                let [n, c, h, w] = x.shape().0;
                let y = x.clone().reshape(Shape::new(n, c * h * w, 1, 1))?;
                Ok((y, LayerCache::Flatten(x.shape())))
            }
            Layer::Linear(l) => Ok((linear_forward(l, x), LayerCache::Input(x.clone()))),
            Layer::ChannelNorm(norm) => Ok(norm_forward(norm, x, mode)),
        }
    }

    /// Returns the input gradient and, for trainable layers, parameter
    /// gradients.
    pub(crate) fn backward(
        &self,
        cache: &LayerCache<T>,
        grad: &Tensor<T>,
    ) -> Result<(Tensor<T>, Option<ParamGrads<T>>)> {
        match (self, cache) {
            (Layer::Conv { spec, filters }, LayerCache::Input(x)) => {
                let g = conv2d_backward(x, filters, grad, spec)?;
                Ok((
                    g.grad_x,
                    Some(ParamGrads {
                        weights: g.grad_w.into_data(),
                        bias: g.grad_b,
                    }),
                ))
            }
            (Layer::Relu, LayerCache::Output(y)) => {
                let mut g = grad.clone();
                for (gv, &yv) in g.data_mut().iter_mut().zip(y.data()) {
                    if yv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                Ok((g, None))
            }
            (
                Layer::MaxPool,
                LayerCache::Pool {
                    input_shape,
                    argmax,
                },
            ) => {
                let mut g = Tensor::zeros(*input_shape);
                for (&idx, &gv) in argmax.iter().zip(grad.data()) {
                    let d = &mut g.data_mut()[idx as usize];
                    *d = *d + gv;
                }
                Ok((g, None))
            }
            (Layer::Flatten, LayerCache::Flatten(shape)) => {
                Ok((grad.clone().reshape(*shape)?, None))
            }
            (Layer::Linear(l), LayerCache::Input(x)) => {
                let (gx, pg) = linear_backward(l, x, grad);
                Ok((gx, Some(pg)))
            }
            (
                Layer::ChannelNorm(_),
                LayerCache::Norm {
                    normalized,
                    inv_std,
                    ..
                },
            ) => Ok((norm_backward_train(normalized, inv_std, grad), None)),
            (Layer::ChannelNorm(_), LayerCache::NormEval { inv_std }) => {
                let [n, c, h, w] = grad.shape().0;
                let mut g = grad.clone();
                for item in 0..n {
                    for ch in 0..c {
                        let s = T::from_f64(inv_std[ch]);
                        let off = (item * c + ch) * h * w;
                        for v in &mut g.data_mut()[off..off + h * w] {
                            *v = *v * s;
                        }
                    }
                }
                Ok((g, None))
            }
            (layer, _) => Err(Error::Checkpoint(format!(
                "cache does not belong to a {} layer",
                layer.kind()
            ))),
        }
    }
}

fn maxpool_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape().0;
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros(Shape::new(n, c, oh, ow));
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    let out = y.data_mut();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let candidates = [
                    base + 2 * i * w + 2 * j,
                    base + 2 * i * w + 2 * j + 1,
                    base + (2 * i + 1) * w + 2 * j,
                    base + (2 * i + 1) * w + 2 * j + 1,
                ];
                // First occurrence in row-major order wins ties.
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out[o] = data[best];
                argmax.push(best as u32);
                o += 1;
            }
        }
    }
    (y, argmax)
}

fn linear_forward<T: Scalar>(l: &Linear<T>, x: &Tensor<T>) -> Tensor<T> {
    let n = x.shape().n();
    let mut y = Tensor::zeros(Shape::new(n, l.out_features, 1, 1));
    for item in 0..n {
        let xi = x.item(item);
        let yi = y.item_mut(item);
        for (o, out) in yi.iter_mut().enumerate() {
            let row = &l.weights[o * l.in_features..(o + 1) * l.in_features];
            *out = dot_fixed(row, xi) + l.bias[o];
        }
    }
    y
}

fn linear_backward<T: Scalar>(
    l: &Linear<T>,
    x: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, ParamGrads<T>) {
    let n = x.shape().n();
    let (fin, fout) = (l.in_features, l.out_features);
    let mut gw = vec![T::zero(); fin * fout];
    let mut gb = vec![T::zero(); fout];
    let mut gx = Tensor::zeros(x.shape());
    for item in 0..n {
        let xi = x.item(item);
        let gi = grad.item(item);
        for o in 0..fout {
            let go = gi[o];
            gb[o] = gb[o] + go;
            for (w, &xv) in gw[o * fin..(o + 1) * fin].iter_mut().zip(xi) {
                *w = *w + go * xv;
            }
        }
        let gxi = gx.item_mut(item);
        for o in 0..fout {
            let go = gi[o];
            for (d, &wv) in gxi.iter_mut().zip(&l.weights[o * fin..(o + 1) * fin]) {
                *d = *d + go * wv;
            }
        }
    }
    (
        gx,
        ParamGrads {
            weights: gw,
            bias: gb,
        },
    )
}

fn norm_forward<T: Scalar>(
    norm: &ChannelNorm<T>,
    x: &Tensor<T>,
    mode: Mode,
) -> (Tensor<T>, LayerCache<T>) {
    let [n, c, h, w] = x.shape().0;
    let plane = h * w;
    let count = (n * plane) as f64;
    let (mean, var): (Vec<f64>, Vec<f64>) = match mode {
        Mode::Train => (0..c)
            .map(|ch| {
                let mut sum = 0.0;
                for item in 0..n {
                    let off = (item * c + ch) * plane;
                    sum += x.data()[off..off + plane]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>();
                }
                let mean = sum / count;
                let mut sq = 0.0;
                for item in 0..n {
                    let off = (item * c + ch) * plane;
                    sq += x.data()[off..off + plane]
                        .iter()
                        .map(|v| (v.as_f64() - mean).powi(2))
                        .sum::<f64>();
                }
                (mean, sq / count)
            })
            .unzip(),
        Mode::Eval => (
            norm.running_mean.iter().map(|v| v.as_f64()).collect(),
            norm.running_var.iter().map(|v| v.as_f64()).collect(),
        ),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + norm.eps).sqrt()).collect();
    let mut y = Tensor::zeros(x.shape());
    for item in 0..n {
        for ch in 0..c {
            let off = (item * c + ch) * plane;
            let (m, s) = (mean[ch], inv_std[ch]);
            for (d, &v) in y.data_mut()[off..off + plane]
                .iter_mut()
                .zip(&x.data()[off..off + plane])
            {
                *d = T::from_f64((v.as_f64() - m) * s);
            }
        }
    }
    let cache = match mode {
        Mode::Train => LayerCache::Norm {
            normalized: y.clone(),
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
        Mode::Eval => LayerCache::NormEval { inv_std },
    };
    (y, cache)
}

fn norm_backward_train<T: Scalar>(
    normalized: &Tensor<T>,
    inv_std: &[f64],
    grad: &Tensor<T>,
) -> Tensor<T> {
    let [n, c, h, w] = grad.shape().0;
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut gx = Tensor::zeros(grad.shape());
    for ch in 0..c {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for item in 0..n {
            let off = (item * c + ch) * plane;
            for (g, xh) in grad.data()[off..off + plane]
                .iter()
                .zip(&normalized.data()[off..off + plane])
            {
                sum_g += g.as_f64();
                sum_gx += g.as_f64() * xh.as_f64();
            }
        }
        let (mg, mgx) = (sum_g / count, sum_gx / count);
        let s = inv_std[ch];
        for item in 0..n {
            let off = (item * c + ch) * plane;
            for i in off..off + plane {
                let g = grad.data()[i].as_f64();
                let xh = normalized.data()[i].as_f64();
                gx.data_mut()[i] = T::from_f64(s * (g - mg - xh * mgx));
            }
        }
    }
    gx
}

/// Folds the batch statistics of a training pass into the running
/// estimates (unbiased variance, exponential moving average).
pub(crate) fn update_running_stats<T: Scalar>(
    norm: &mut ChannelNorm<T>,
    cache: &LayerCache<T>,
    count: usize,
) {
    if let LayerCache::Norm {
        batch_mean,
        batch_var,
        ..
    } = cache
    {
        let m = norm.momentum;
        let unbias = if count > 1 {
            count as f64 / (count - 1) as f64
        } else {
            1.0
        };
        for ch in 0..norm.channels {
            let rm = norm.running_mean[ch].as_f64();
            let rv = norm.running_var[ch].as_f64();
            norm.running_mean[ch] = T::from_f64((1.0 - m) * rm + m * batch_mean[ch]);
            norm.running_var[ch] = T::from_f64((1.0 - m) * rv + m * batch_var[ch] * unbias);
        }
    }
}
