//! Self-describing binary model container.
//!
//! Layout (all integers little-endian `u32`, floats little-endian):
//! magic `CYC1`, scalar width, model name, input dims, the preprocessing
//! record, the layer count, then one tagged record per layer with its spec
//! integers followed by raw parameter buffers.

use std::fs;
use std::path::Path;

use super::layers::{ChannelNorm, Layer, Linear};
use super::model::Model;
use crate::conv::{ConvAlgorithm, ConvSpec, FilterBank, PadMode};
use crate::dataset::{Preprocess, Standardizer};
use crate::error::{Error, Result};
use crate::polar::{PolarConfig, PolarMode};
use crate::tensor::{Scalar, Tensor};

const MAGIC: &[u8; 4] = b"CYC1";

const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_MAXPOOL: u8 = 3;
const TAG_FLATTEN: u8 = 4;
const TAG_LINEAR: u8 = 5;
const TAG_NORM: u8 = 6;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    pub preprocess: Preprocess,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn scalars<T: Scalar>(&mut self, v: &[T]) {
        self.u32(v.len());
        for &x in v {
            x.write_le(&mut self.0);
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn scalars<T: Scalar>(&mut self, expected: usize) -> Result<Vec<T>> {
        let n = self.u32()?;
        if n != expected {
            return Err(Error::Checkpoint(format!(
                "buffer at byte {} holds {n} values, expected {expected}",
                self.pos - 4
            )));
        }
        let raw = self.take(n * T::BYTES)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}

pub fn encode_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    let m = &ckpt.model;
    w.u8(T::BYTES as u8);
    w.u32(m.name.len());
    w.0.extend_from_slice(m.name.as_bytes());
    w.u32(m.input.0);
    w.u32(m.input.1);
    w.u32(m.input.2);

    let p = &ckpt.preprocess;
    match &p.polar {
        None => w.u8(0),
        Some(cfg) => {
            w.u8(match cfg.mode {
                PolarMode::Polar => 1,
                PolarMode::LogPolar => 2,
            });
            w.u32(cfg.out_height);
            w.u32(cfg.out_width);
            w.f64(cfg.rho_max);
        }
    }
    w.u32(p.standardizer.mean.len());
    for (&mean, &std) in p.standardizer.mean.iter().zip(&p.standardizer.std) {
        w.f64(mean);
        w.f64(std);
    }

    w.u32(m.layers.len());
    for layer in &m.layers {
        match layer {
            Layer::Conv { spec, filters } => {
                w.u8(TAG_CONV);
                for v in [
                    spec.in_channels,
                    spec.out_channels,
                    spec.kernel_h,
                    spec.kernel_w,
                    spec.stride_h,
                    spec.stride_w,
                    spec.pad,
                ] {
                    w.u32(v);
                }
                w.u8(match spec.pad_mode {
                    PadMode::Zero => 0,
                    PadMode::Cylindrical => 1,
                });
                w.u8(match spec.algorithm {
                    ConvAlgorithm::Direct => 0,
                    ConvAlgorithm::Winograd => 1,
                });
                w.scalars(filters.weights.data());
                w.scalars(&filters.bias);
            }
            Layer::Relu => w.u8(TAG_RELU),
            Layer::MaxPool => w.u8(TAG_MAXPOOL),
            Layer::Flatten => w.u8(TAG_FLATTEN),
            Layer::Linear(l) => {
                w.u8(TAG_LINEAR);
                w.u32(l.in_features);
                w.u32(l.out_features);
                w.scalars(&l.weights);
                w.scalars(&l.bias);
            }
            Layer::ChannelNorm(n) => {
                w.u8(TAG_NORM);
                w.u32(n.channels);
                w.f64(n.eps);
                w.f64(n.momentum);
                w.scalars(&n.running_mean);
                w.scalars(&n.running_var);
            }
        }
    }
    w.0
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("missing CYC1 magic".into()));
    }
    let width = r.u8()? as usize;
    if width != T::BYTES {
        return Err(Error::Checkpoint(format!(
            "stored with {}-byte scalars, loading as {}-byte",
            width,
            T::BYTES
        )));
    }
    let name_len = r.u32()?;
    let name = String::from_utf8(r.take(name_len)?.to_vec())
        .map_err(|_| Error::Checkpoint("model name is not UTF-8".into()))?;
    let input = (r.u32()?, r.u32()?, r.u32()?);

    let polar = match r.u8()? {
        0 => None,
        tag @ (1 | 2) => Some(PolarConfig {
            mode: if tag == 1 {
                PolarMode::Polar
            } else {
                PolarMode::LogPolar
            },
            out_height: r.u32()?,
            out_width: r.u32()?,
            rho_max: r.f64()?,
        }),
        other => return Err(Error::Checkpoint(format!("unknown polar mode tag {other}"))),
    };
    let channels = r.u32()?;
    let mut mean = Vec::with_capacity(channels);
    let mut std = Vec::with_capacity(channels);
    for _ in 0..channels {
        mean.push(r.f64()?);
        std.push(r.f64()?);
    }

    let count = r.u32()?;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let at = r.pos;
        let layer = match r.u8()? {
            TAG_CONV => {
                let mut dims = [0usize; 7];
                for d in &mut dims {
                    *d = r.u32()?;
                }
                let pad_mode = match r.u8()? {
                    0 => PadMode::Zero,
                    1 => PadMode::Cylindrical,
                    t => {
                        return Err(Error::Checkpoint(format!(
                            "unknown pad mode {t} at byte {}",
                            r.pos - 1
                        )))
                    }
                };
                let algorithm = match r.u8()? {
                    0 => ConvAlgorithm::Direct,
                    1 => ConvAlgorithm::Winograd,
                    t => {
                        return Err(Error::Checkpoint(format!(
                            "unknown algorithm {t} at byte {}",
                            r.pos - 1
                        )))
                    }
                };
                let spec = ConvSpec {
                    in_channels: dims[0],
                    out_channels: dims[1],
                    kernel_h: dims[2],
                    kernel_w: dims[3],
                    stride_h: dims[4],
                    stride_w: dims[5],
                    pad: dims[6],
                    pad_mode,
                    algorithm,
                };
                let shape = spec.weight_shape();
                let weights = Tensor::from_vec(shape, r.scalars(shape.len())?)?;
                let bias = r.scalars(spec.out_channels)?;
                Layer::Conv {
                    spec,
                    filters: FilterBank::new(weights, bias)?,
                }
            }
            TAG_RELU => Layer::Relu,
            TAG_MAXPOOL => Layer::MaxPool,
            TAG_FLATTEN => Layer::Flatten,
            TAG_LINEAR => {
                let (fin, fout) = (r.u32()?, r.u32()?);
                Layer::Linear(Linear {
                    in_features: fin,
                    out_features: fout,
                    weights: r.scalars(fin * fout)?,
                    bias: r.scalars(fout)?,
                })
            }
            TAG_NORM => {
                let channels = r.u32()?;
                let eps = r.f64()?;
                let momentum = r.f64()?;
                Layer::ChannelNorm(ChannelNorm {
                    channels,
                    eps,
                    momentum,
                    running_mean: r.scalars(channels)?,
                    running_var: r.scalars(channels)?,
                })
            }
            t => {
                return Err(Error::Checkpoint(format!(
                    "unknown layer tag {t} at byte {at}"
                )))
            }
        };
        layers.push(layer);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(Checkpoint {
        model: Model::new(name, input, layers)?,
        preprocess: Preprocess {
            polar,
            standardizer: Standardizer { mean, std },
        },
    })
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
