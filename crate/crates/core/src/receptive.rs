//! Geometric receptive fields through a stack of sliding-window layers.

use std::fmt::Write as _;

use crate::conv::PadMode;
use crate::error::{Error, Result};

/// Window geometry of one layer (convolution or pooling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RfLayerSpec {
    pub kernel_w: usize,
    pub kernel_h: usize,
    pub stride_w: usize,
    pub stride_h: usize,
}

impl RfLayerSpec {
    pub fn new(kernel_w: usize, kernel_h: usize, stride_w: usize, stride_h: usize) -> Result<Self> {
        if kernel_w == 0 || kernel_h == 0 || stride_w == 0 || stride_h == 0 {
            return Err(Error::Config(format!(
                "receptive-field layer needs kernel and stride >= 1, got {kernel_w}x{kernel_h} stride {stride_w}x{stride_h}"
            )));
        }
        Ok(RfLayerSpec {
            kernel_w,
            kernel_h,
            stride_w,
            stride_h,
        })
    }

    pub fn square(kernel: usize, stride: usize) -> Self {
        RfLayerSpec {
            kernel_w: kernel,
            kernel_h: kernel,
            stride_w: stride,
            stride_h: stride,
        }
    }

    /// Receptive field one layer down: `s * r + k - s` per axis.
    pub fn expand(&self, (w, h): (usize, usize)) -> (usize, usize) {
        (
            self.stride_w * w + self.kernel_w - self.stride_w,
            self.stride_h * h + self.kernel_h - self.stride_h,
        )
    }

    /// Row padding used by the coverage analysis: `(k_h - 1) / 2`.
    fn pad_h(&self) -> usize {
        (self.kernel_h - 1) / 2
    }
}

/// Input-image receptive field `(w, h)` of a unit whose receptive field in
/// its own layer is `seed`, for units at the output of each layer in
/// `stack` (index 0 is the layer nearest the input).
pub fn rf_propagate(stack: &[RfLayerSpec], seed: (usize, usize)) -> Vec<(usize, usize)> {
    (0..stack.len())
        .map(|depth| {
            stack[..=depth]
                .iter()
                .rev()
                .fold(seed, |rf, layer| layer.expand(rf))
        })
        .collect()
}

/// Per-row count of distinct input rows reachable from the final layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageReport {
    pub pad_mode: PadMode,
    pub input_h: usize,
    /// Entry `i` is the number of input rows that can influence output row `i`.
    pub rows: Vec<usize>,
}

impl CoverageReport {
    pub fn is_uniform(&self) -> bool {
        self.rows.windows(2).all(|w| w[0] == w[1])
    }
}

/// Counts, for every output row of the stack, the input rows it can reach.
///
/// Each layer pads rows by `(k_h - 1) / 2`; in cylindrical mode those pad
/// rows wrap around to the opposite edge, in zero mode they reach nothing.
pub fn boundary_coverage(
    stack: &[RfLayerSpec],
    input_h: usize,
    pad_mode: PadMode,
) -> Result<CoverageReport> {
    if input_h == 0 {
        return Err(Error::Config("input height must be >= 1".into()));
    }
    // reach[i][r]: input row r can influence row i of the current layer.
    let mut reach: Vec<Vec<bool>> = (0..input_h)
        .map(|i| (0..input_h).map(|r| r == i).collect())
        .collect();
    for (index, layer) in stack.iter().enumerate() {
        let h_in = reach.len();
        let pad = layer.pad_h();
        let padded = h_in + 2 * pad;
        if padded < layer.kernel_h {
            return Err(Error::Config(format!(
                "layer {index}: {}-row window does not fit {h_in} rows",
                layer.kernel_h
            )));
        }
        if pad_mode == PadMode::Cylindrical && pad > h_in {
            return Err(Error::Config(format!(
                "layer {index}: pad {pad} wraps more than once"
            )));
        }
        let h_out = (padded - layer.kernel_h) / layer.stride_h + 1;
        let mut next = vec![vec![false; input_h]; h_out];
        for (i, row) in next.iter_mut().enumerate() {
            for u in 0..layer.kernel_h {
                let src = (i * layer.stride_h + u) as i64 - pad as i64;
                let src = match pad_mode {
                    _ if (0..h_in as i64).contains(&src) => src as usize,
                    PadMode::Zero => continue,
                    PadMode::Cylindrical => src.rem_euclid(h_in as i64) as usize,
                };
                for (dst, &hit) in row.iter_mut().zip(&reach[src]) {
                    *dst |= hit;
                }
            }
        }
        reach = next;
    }
    Ok(CoverageReport {
        pad_mode,
        input_h,
        rows: reach
            .iter()
            .map(|r| r.iter().filter(|&&b| b).count())
            .collect(),
    })
}

/// Plain-text table of per-layer receptive fields.
pub fn format_rf_table(stack: &[RfLayerSpec], seed: (usize, usize)) -> String {
    let mut out = String::from("layer  kernel  stride  rf_w  rf_h\n");
    for (i, (layer, (w, h))) in stack.iter().zip(rf_propagate(stack, seed)).enumerate() {
        let _ = writeln!(
            out,
            "{:>5}  {:>6}  {:>6}  {:>4}  {:>4}",
            i,
            format!("{}x{}", layer.kernel_w, layer.kernel_h),
            format!("{}x{}", layer.stride_w, layer.stride_h),
            w,
            h
        );
    }
    out
}

/// CSV with header `layer,kernel_w,kernel_h,stride_w,stride_h,rf_w,rf_h`.
pub fn format_rf_csv(stack: &[RfLayerSpec], seed: (usize, usize)) -> String {
    let mut out = String::from("layer,kernel_w,kernel_h,stride_w,stride_h,rf_w,rf_h\n");
    for (i, (l, (w, h))) in stack.iter().zip(rf_propagate(stack, seed)).enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{w},{h}",
            l.kernel_w, l.kernel_h, l.stride_w, l.stride_h
        );
    }
    out
}
