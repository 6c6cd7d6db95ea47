//! Layer graphs: forward and backward passes, conversion, and the reference
//! MiniVGG architecture.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    update_running_stats, ChannelNorm, Layer, LayerCache, Linear, Mode, ParamGrads,
};
use crate::conv::{ConvAlgorithm, ConvSpec, FilterBank, PadMode};
use crate::error::{Error, Result};
use crate::receptive::RfLayerSpec;
use crate::tensor::{Scalar, Shape, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub name: String,
    /// Expected `(channels, height, width)` of one input item.
    pub input: (usize, usize, usize),
    pub layers: Vec<Layer<T>>,
}

/// Per-layer state captured by [`Model::forward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub batch: usize,
    pub layers: Vec<LayerCache<T>>,
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// One entry per layer, `None` for layers without parameters.
    pub layers: Vec<Option<ParamGrads<T>>>,
    pub input: Tensor<T>,
}

impl<T: Scalar> Model<T> {
    pub fn new(
        name: impl Into<String>,
        input: (usize, usize, usize),
        layers: Vec<Layer<T>>,
    ) -> Result<Self> {
        let model = Model {
            name: name.into(),
            input,
            layers,
        };
        model.output_shape(1)?;
        Ok(model)
    }

    /// Traces shapes through every layer for a batch of `n`.
    pub fn output_shape(&self, n: usize) -> Result<Shape> {
        let (c, h, w) = self.input;
        self.trace(Shape::new(n, c, h, w))
    }

    fn trace(&self, mut shape: Shape) -> Result<Shape> {
        for (index, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(shape).map_err(|message| Error::Layer {
                index,
                kind: layer.kind(),
                message,
            })?;
        }
        Ok(shape)
    }

    pub fn classes(&self) -> usize {
        self.output_shape(1).map(|s| s.c()).unwrap_or(0)
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let [_, c, h, w] = x.shape().0;
        if (c, h, w) != self.input {
            let kind = self.layers.first().map(|l| l.kind()).unwrap_or("input");
            return Err(Error::Layer {
                index: 0,
                kind,
                message: format!(
                    "expects {}x{}x{} input, got {c}x{h}x{w}",
                    self.input.0, self.input.1, self.input.2
                ),
            });
        }
        Ok(())
    }

    fn run_layer(
        &self,
        index: usize,
        x: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Tensor<T>, LayerCache<T>)> {
        let layer = &self.layers[index];
        let wrap = |message: String| Error::Layer {
            index,
            kind: layer.kind(),
            message,
        };
        layer.output_shape(x.shape()).map_err(wrap)?;
        layer.forward(x, mode).map_err(|e| match e {
            e @ Error::Layer { .. } => e,
            e => wrap(e.to_string()),
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for index in 0..self.layers.len() {
            let (next, cache) = self.run_layer(index, &cur, mode)?;
            caches.push(cache);
            cur = next;
        }
        Ok((
            cur,
            ForwardCache {
                batch: x.shape().n(),
                layers: caches,
            },
        ))
    }

    /// Inference pass that keeps no activations.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_prefix(x, self.layers.len())
    }

    /// Output of the first `upto` layers in inference mode.
    pub fn forward_prefix(&self, x: &Tensor<T>, upto: usize) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let mut cur = x.clone();
        for index in 0..upto.min(self.layers.len()) {
            cur = self.run_layer(index, &cur, Mode::Eval)?.0;
        }
        Ok(cur)
    }

    pub fn backward(
        &self,
        cache: &ForwardCache<T>,
        grad_output: &Tensor<T>,
    ) -> Result<Gradients<T>> {
        if cache.layers.len() != self.layers.len() {
            return Err(Error::Checkpoint(format!(
                "cache has {} layers, model has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        let mut grads = vec![None; self.layers.len()];
        let mut g = grad_output.clone();
        for index in (0..self.layers.len()).rev() {
            let layer = &self.layers[index];
            let (gx, pg) = layer
                .backward(&cache.layers[index], &g)
                .map_err(|e| Error::Layer {
                    index,
                    kind: layer.kind(),
                    message: e.to_string(),
                })?;
            grads[index] = pg;
            g = gx;
        }
        Ok(Gradients {
            layers: grads,
            input: g,
        })
    }

    /// Folds batch statistics from a training-mode pass into running
    /// statistics.
    pub fn commit_running_stats(&mut self, cache: &ForwardCache<T>) {
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers) {
            if let (Layer::ChannelNorm(norm), LayerCache::Norm { normalized, .. }) =
                (&mut *layer, lc)
            {
                let [_, _, h, w] = normalized.shape().0;
                update_running_stats(norm, lc, cache.batch * h * w);
            }
        }
    }

    /// Window geometry of every convolution and pooling layer, in order.
    pub fn rf_stack(&self) -> Vec<RfLayerSpec> {
        self.layers
            .iter()
            .filter_map(|layer| match layer {
                Layer::Conv { spec, .. } => Some(RfLayerSpec {
                    kernel_w: spec.kernel_w,
                    kernel_h: spec.kernel_h,
                    stride_w: spec.stride_w,
                    stride_h: spec.stride_h,
                }),
                Layer::MaxPool => Some(RfLayerSpec::square(2, 2)),
                _ => None,
            })
            .collect()
    }

    pub fn count_params(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    /// Switches every convolution to the given algorithm, validating the
    /// resulting geometry.
    pub fn with_conv_algorithm(mut self, algorithm: ConvAlgorithm) -> Result<Self> {
        for layer in &mut self.layers {
            if let Layer::Conv { spec, .. } = layer {
                spec.algorithm = algorithm;
            }
        }
        self.output_shape(1)?;
        Ok(self)
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let cast_vec = |v: &[T]| {
            v.iter()
                .map(|x| U::from_f64(x.as_f64()))
                .collect::<Vec<U>>()
        };
        let layers = self
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv { spec, filters } => Layer::Conv {
                    spec: *spec,
                    filters: FilterBank {
                        weights: filters.weights.cast(),
                        bias: cast_vec(&filters.bias),
                    },
                },
                Layer::Relu => Layer::Relu,
                Layer::MaxPool => Layer::MaxPool,
                Layer::Flatten => Layer::Flatten,
                Layer::Linear(l) => Layer::Linear(Linear {
                    in_features: l.in_features,
                    out_features: l.out_features,
                    weights: cast_vec(&l.weights),
                    bias: cast_vec(&l.bias),
                }),
                Layer::ChannelNorm(n) => Layer::ChannelNorm(ChannelNorm {
                    channels: n.channels,
                    running_mean: cast_vec(&n.running_mean),
                    running_var: cast_vec(&n.running_var),
                    eps: n.eps,
                    momentum: n.momentum,
                }),
            })
            .collect();
        Model {
            name: self.name.clone(),
            input: self.input,
            layers,
        }
    }
}

/// Replaces every convolution with its cylindrically padded counterpart.
/// Weights and shapes are untouched.
pub fn convert_to_cycnn<T: Scalar>(model: &Model<T>) -> Result<Model<T>> {
    let mut out = model.clone();
    for (index, layer) in out.layers.iter_mut().enumerate() {
        if let Layer::Conv { spec, .. } = layer {
            if !spec.preserves_size() {
                return Err(Error::Layer {
                    index,
                    kind: "conv",
                    message: format!(
                        "{}x{} kernel with stride {}x{} and pad {} does not preserve spatial size",
                        spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w, spec.pad
                    ),
                });
            }
            spec.pad_mode = PadMode::Cylindrical;
        }
    }
    if !out.name.starts_with("cy") {
        out.name = format!("cy{}", out.name);
    }
    out.output_shape(1)?;
    Ok(out)
}

pub fn count_params<T: Scalar>(model: &Model<T>) -> usize {
    model.count_params()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiniVggConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Channels of the first block; later blocks use 2x and 4x.
    pub base_width: usize,
    pub hidden: usize,
    /// Insert a [`ChannelNorm`] after every convolution.
    pub norm: bool,
    /// Extra 2x2 pools after the third block. The default pools the
    /// feature map down to 1x1 before the classifier.
    pub extra_pools: usize,
    pub pad_mode: PadMode,
    pub algorithm: ConvAlgorithm,
}

impl MiniVggConfig {
    pub fn new(in_channels: usize, height: usize, width: usize, classes: usize) -> Self {
        MiniVggConfig {
            in_channels,
            height,
            width,
            classes,
            base_width: 32,
            hidden: 256,
            norm: true,
            extra_pools: unit_pools(height.min(width)),
            pad_mode: PadMode::Zero,
            algorithm: ConvAlgorithm::Direct,
        }
    }
}

fn unit_pools(side: usize) -> usize {
    let mut side = side >> 3;
    let mut n = 0;
    while side > 1 {
        side >>= 1;
        n += 1;
    }
    n
}

/// Three blocks of two 3x3 convolutions each followed by 2x2 pooling, then
/// `Linear -> hidden -> classes`.
pub fn mini_vgg<T: Scalar>(cfg: &MiniVggConfig, seed: u64) -> Result<Model<T>> {
    if cfg.in_channels == 0 || cfg.classes == 0 || cfg.base_width == 0 || cfg.hidden == 0 {
        return Err(Error::Config("minivgg dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::new();
    let mut ch = cfg.in_channels;
    let (mut h, mut w) = (cfg.height, cfg.width);
    for block in 0..3 {
        let out = cfg.base_width << block;
        for _ in 0..2 {
            let spec = ConvSpec::same3x3(ch, out, cfg.pad_mode).with_algorithm(cfg.algorithm);
            layers.push(Layer::Conv {
                filters: FilterBank::init(&spec, &mut rng),
                spec,
            });
            if cfg.norm {
                layers.push(Layer::ChannelNorm(ChannelNorm::new(out)));
            }
            layers.push(Layer::Relu);
            ch = out;
        }
        layers.push(Layer::MaxPool);
        h /= 2;
        w /= 2;
    }
    for _ in 0..cfg.extra_pools {
        layers.push(Layer::MaxPool);
        h /= 2;
        w /= 2;
    }
    layers.push(Layer::Flatten);
    layers.push(Layer::Linear(Linear::init(
        ch * h * w,
        cfg.hidden,
        &mut rng,
    )));
    layers.push(Layer::Relu);
    layers.push(Layer::Linear(Linear::init(
        cfg.hidden,
        cfg.classes,
        &mut rng,
    )));
    let name = match cfg.pad_mode {
        PadMode::Zero => "minivgg",
        PadMode::Cylindrical => "cyminivgg",
    };
    Model::new(name, (cfg.in_channels, cfg.height, cfg.width), layers)
}
