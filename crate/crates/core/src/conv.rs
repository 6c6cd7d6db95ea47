//! Direct 2-D convolution with zero or cylindrical padding.
//!
//! Cylindrical padding wraps the row (angle) axis: the top border copies the
//! last rows of the input, the bottom border copies the first rows. The
//! column (radius) axis is always zero-padded, corners included.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{dot_fixed, gemm_accumulate, Scalar, Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PadMode {
    Zero,
    Cylindrical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConvAlgorithm {
    Direct,
    Winograd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad: usize,
    pub pad_mode: PadMode,
    pub algorithm: ConvAlgorithm,
}

impl ConvSpec {
    /// 3x3, stride 1, pad 1: the size-preserving layer used throughout.
    pub fn same3x3(in_channels: usize, out_channels: usize, pad_mode: PadMode) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: 3,
            kernel_w: 3,
            stride_h: 1,
            stride_w: 1,
            pad: 1,
            pad_mode,
            algorithm: ConvAlgorithm::Direct,
        }
    }

    pub fn with_algorithm(mut self, algorithm: ConvAlgorithm) -> Self {
        self.algorithm = algorithm;
        self
    }

    pub fn with_pad_mode(mut self, pad_mode: PadMode) -> Self {
        self.pad_mode = pad_mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConv(msg));
        if self.in_channels == 0 || self.out_channels == 0 {
            return bad(format!(
                "channel counts must be >= 1, got {} -> {}",
                self.in_channels, self.out_channels
            ));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 || self.stride_h == 0 || self.stride_w == 0 {
            return bad(format!(
                "kernel {}x{} and stride {}x{} must be >= 1",
                self.kernel_h, self.kernel_w, self.stride_h, self.stride_w
            ));
        }
        if self.pad_mode == PadMode::Cylindrical {
            let odd_square = self.kernel_h == self.kernel_w && self.kernel_h % 2 == 1;
            if !odd_square || self.pad != (self.kernel_h - 1) / 2 {
                return bad(format!(
                    "cylindrical padding needs an odd square kernel with pad (k-1)/2, got {}x{} pad {}",
                    self.kernel_h, self.kernel_w, self.pad
                ));
            }
        }
        if self.algorithm == ConvAlgorithm::Winograd && !self.is_winograd_geometry() {
            return Err(Error::UnsupportedWinograd(format!(
                "kernel {}x{}, stride {}x{}, pad {}; winograd needs 3x3, stride 1, pad 1",
                self.kernel_h, self.kernel_w, self.stride_h, self.stride_w, self.pad
            )));
        }
        Ok(())
    }

    pub fn is_winograd_geometry(&self) -> bool {
        self.kernel_h == 3
            && self.kernel_w == 3
            && self.stride_h == 1
            && self.stride_w == 1
            && self.pad == 1
    }

    /// Whether output spatial size always equals input spatial size.
    pub fn preserves_size(&self) -> bool {
        self.stride_h == 1
            && self.stride_w == 1
            && self.kernel_h % 2 == 1
            && self.kernel_h == self.kernel_w
            && self.pad == (self.kernel_h - 1) / 2
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::InvalidConv(format!(
                "{}x{} kernel does not fit a {h}x{w} input with pad {}",
                self.kernel_h, self.kernel_w, self.pad
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride_h + 1,
            (pw - self.kernel_w) / self.stride_w + 1,
        ))
    }

    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        )
    }

    pub fn param_count(&self) -> usize {
        self.weight_shape().len() + self.out_channels
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

/// Convolution weights `(out, in, kh, kw)` and one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> FilterBank<T> {
    pub fn new(weights: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        if weights.shape().n() != bias.len() {
            return Err(Error::InvalidConv(format!(
                "{} filters but {} biases",
                weights.shape().n(),
                bias.len()
            )));
        }
        if !weights.is_finite() || bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("filter bank"));
        }
        Ok(FilterBank { weights, bias })
    }

    pub fn zeros(spec: &ConvSpec) -> Self {
        FilterBank {
            weights: Tensor::zeros(spec.weight_shape()),
            bias: vec![T::zero(); spec.out_channels],
        }
    }

    /// Centre tap 1 on the diagonal `o == c`; passes input through unchanged
    /// when channel counts match.
    pub fn identity(spec: &ConvSpec) -> Self {
        let (ch, cw) = (spec.kernel_h / 2, spec.kernel_w / 2);
        let weights = Tensor::from_fn(spec.weight_shape(), |[o, c, u, v]| {
            if o == c && u == ch && v == cw {
                T::one()
            } else {
                T::zero()
            }
        });
        FilterBank {
            weights,
            bias: vec![T::zero(); spec.out_channels],
        }
    }

    /// Uniform in `±sqrt(1 / fan_in)`, zero bias.
    pub fn init(spec: &ConvSpec, rng: &mut impl Rng) -> Self {
        let bound = (1.0 / spec.patch_len() as f64).sqrt();
        let weights = Tensor::from_fn(spec.weight_shape(), |_| {
            T::from_f64(rng.gen_range(-bound..bound))
        });
        FilterBank {
            weights,
            bias: vec![T::zero(); spec.out_channels],
        }
    }

    fn check(&self, spec: &ConvSpec) -> Result<()> {
        if self.weights.shape() != spec.weight_shape() || self.bias.len() != spec.out_channels {
            return Err(Error::InvalidConv(format!(
                "filter bank {} does not match spec {}",
                self.weights.shape(),
                spec.weight_shape()
            )));
        }
        Ok(())
    }
}

/// Pads every plane by `pad` on all four sides.
pub fn pad_input<T: Scalar>(x: &Tensor<T>, pad: usize, mode: PadMode) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape().0;
    if mode == PadMode::Cylindrical && pad > h {
        return Err(Error::InvalidConv(format!(
            "cylindrical pad {pad} exceeds input height {h}"
        )));
    }
    if pad == 0 {
        return Ok(x.clone());
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = Tensor::zeros(Shape::new(n, c, ph, pw));
    for plane in 0..n * c {
        let src = &x.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data_mut()[plane * ph * pw..(plane + 1) * ph * pw];
        pad_plane(src, h, w, pad, mode, dst);
    }
    Ok(out)
}

pub(crate) fn pad_plane<T: Scalar>(
    src: &[T],
    h: usize,
    w: usize,
    pad: usize,
    mode: PadMode,
    dst: &mut [T],
) {
    let pw = w + 2 * pad;
    let ph = h + 2 * pad;
    for pr in 0..ph {
        let source_row = if pr < pad {
            match mode {
                PadMode::Zero => None,
                PadMode::Cylindrical => Some(h - pad + pr),
            }
        } else if pr >= pad + h {
            match mode {
                PadMode::Zero => None,
                PadMode::Cylindrical => Some(pr - pad - h),
            }
        } else {
            Some(pr - pad)
        };
        let drow = &mut dst[pr * pw..(pr + 1) * pw];
        drow.fill(T::zero());
        if let Some(r) = source_row {
            drow[pad..pad + w].copy_from_slice(&src[r * w..(r + 1) * w]);
        }
    }
}

/// Adjoint of [`pad_input`]: folds border gradients back onto the rows they
/// were copied from (cylindrical) or drops them (zero).
pub fn unpad_gradient<T: Scalar>(g: &Tensor<T>, pad: usize, mode: PadMode) -> Tensor<T> {
    let [n, c, ph, pw] = g.shape().0;
    let (h, w) = (ph - 2 * pad, pw - 2 * pad);
    let mut out = Tensor::zeros(Shape::new(n, c, h, w));
    for plane in 0..n * c {
        let src = &g.data()[plane * ph * pw..(plane + 1) * ph * pw];
        let dst = &mut out.data_mut()[plane * h * w..(plane + 1) * h * w];
        unpad_plane(src, h, w, pad, mode, dst);
    }
    out
}

fn unpad_plane<T: Scalar>(src: &[T], h: usize, w: usize, pad: usize, mode: PadMode, dst: &mut [T]) {
    let pw = w + 2 * pad;
    for r in 0..h {
        let s = &src[(r + pad) * pw + pad..(r + pad) * pw + pad + w];
        dst[r * w..(r + 1) * w].copy_from_slice(s);
    }
    if mode == PadMode::Cylindrical {
        for i in 0..pad {
            let top = &src[i * pw + pad..i * pw + pad + w];
            let target = h - pad + i;
            for (d, &s) in dst[target * w..(target + 1) * w].iter_mut().zip(top) {
                *d = *d + s;
            }
            let br = pad + h + i;
            let bottom = &src[br * pw + pad..br * pw + pad + w];
            for (d, &s) in dst[i * w..(i + 1) * w].iter_mut().zip(bottom) {
                *d = *d + s;
            }
        }
    }
}

/// Lowers one padded item `(C, ph, pw)` into a `(C*kh*kw) x (oh*ow)` matrix.
fn im2col<T: Scalar>(
    padded: &[T],
    ph: usize,
    pw: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    col: &mut [T],
) {
    let p = oh * ow;
    let mut k = 0;
    for c in 0..spec.in_channels {
        let plane = &padded[c * ph * pw..(c + 1) * ph * pw];
        for u in 0..spec.kernel_h {
            for v in 0..spec.kernel_w {
                let row = &mut col[k * p..(k + 1) * p];
                for i in 0..oh {
                    let src = &plane[(i * spec.stride_h + u) * pw..];
                    let dst = &mut row[i * ow..(i + 1) * ow];
                    if spec.stride_w == 1 {
                        dst.copy_from_slice(&src[v..v + ow]);
                    } else {
                        for (j, d) in dst.iter_mut().enumerate() {
                            *d = src[j * spec.stride_w + v];
                        }
                    }
                }
                k += 1;
            }
        }
    }
}

fn col2im_add<T: Scalar>(
    col: &[T],
    ph: usize,
    pw: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    padded: &mut [T],
) {
    let p = oh * ow;
    let mut k = 0;
    for c in 0..spec.in_channels {
        let plane = &mut padded[c * ph * pw..(c + 1) * ph * pw];
        for u in 0..spec.kernel_h {
            for v in 0..spec.kernel_w {
                let row = &col[k * p..(k + 1) * p];
                for i in 0..oh {
                    let base = (i * spec.stride_h + u) * pw + v;
                    let src = &row[i * ow..(i + 1) * ow];
                    for (j, &g) in src.iter().enumerate() {
                        let d = &mut plane[base + j * spec.stride_w];
                        *d = *d + g;
                    }
                }
                k += 1;
            }
        }
    }
}

fn check_input<T: Scalar>(
    x: &Tensor<T>,
    f: &FilterBank<T>,
    spec: &ConvSpec,
) -> Result<(usize, usize)> {
    spec.validate()?;
    f.check(spec)?;
    if x.shape().c() != spec.in_channels {
        return Err(Error::InvalidConv(format!(
            "input has {} channels, layer expects {}",
            x.shape().c(),
            spec.in_channels
        )));
    }
    spec.output_hw(x.shape().h(), x.shape().w())
}

/// Convolution by explicit patch lowering; dispatches nothing, ignores
/// `spec.algorithm`.
///
/// Every output element is `bias + sum over (c, u, v) ascending` of
/// input times weight, the same order as the textbook six-loop form.
pub fn conv2d_direct<T: Scalar>(
    x: &Tensor<T>,
    f: &FilterBank<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (oh, ow) = check_input(x, f, spec)?;
    let [n, c, h, w] = x.shape().0;
    let pad = spec.pad;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    if spec.pad_mode == PadMode::Cylindrical && pad > h {
        return Err(Error::InvalidConv(format!(
            "cylindrical pad {pad} exceeds input height {h}"
        )));
    }
    let k = spec.patch_len();
    let p = oh * ow;
    let mut padded = vec![T::zero(); c * ph * pw];
    let mut col = vec![T::zero(); k * p];
    let mut out = Tensor::zeros(Shape::new(n, spec.out_channels, oh, ow));
    for item in 0..n {
        let src = x.item(item);
        for ch in 0..c {
            pad_plane(
                &src[ch * h * w..(ch + 1) * h * w],
                h,
                w,
                pad,
                spec.pad_mode,
                &mut padded[ch * ph * pw..(ch + 1) * ph * pw],
            );
        }
        im2col(&padded, ph, pw, spec, oh, ow, &mut col);
        let dst = out.item_mut(item);
        gemm_accumulate(spec.out_channels, k, p, f.weights.data(), &col, dst);
        for (o, &b) in f.bias.iter().enumerate() {
            for v in &mut dst[o * p..(o + 1) * p] {
                *v = *v + b;
            }
        }
    }
    out.ensure_finite("conv2d_direct")
}

/// Gradients of a convolution with respect to its input, weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_w: Tensor<T>,
    pub grad_b: Vec<T>,
}

pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    f: &FilterBank<T>,
    grad_out: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let (oh, ow) = check_input(x, f, spec)?;
    let [n, c, h, w] = x.shape().0;
    let expected = Shape::new(n, spec.out_channels, oh, ow);
    if grad_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            left: grad_out.shape(),
            right: expected,
        });
    }
    let pad = spec.pad;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let k = spec.patch_len();
    let p = oh * ow;
    let o_count = spec.out_channels;

    // Transposed weights, (K x O), for the input-gradient product.
    let wd = f.weights.data();
    let mut wt = vec![T::zero(); k * o_count];
    for o in 0..o_count {
        for kk in 0..k {
            wt[kk * o_count + o] = wd[o * k + kk];
        }
    }

    let mut grad_w = vec![T::zero(); o_count * k];
    let mut grad_b = vec![T::zero(); o_count];
    let mut grad_x = Tensor::zeros(x.shape());
    let mut padded = vec![T::zero(); c * ph * pw];
    let mut col = vec![T::zero(); k * p];
    let mut gcol = vec![T::zero(); k * p];
    let mut gpad = vec![T::zero(); c * ph * pw];
    for item in 0..n {
        let src = x.item(item);
        for ch in 0..c {
            pad_plane(
                &src[ch * h * w..(ch + 1) * h * w],
                h,
                w,
                pad,
                spec.pad_mode,
                &mut padded[ch * ph * pw..(ch + 1) * ph * pw],
            );
        }
        im2col(&padded, ph, pw, spec, oh, ow, &mut col);
        let g = grad_out.item(item);

        for o in 0..o_count {
            let grow = &g[o * p..(o + 1) * p];
            grad_b[o] = grad_b[o] + grow.iter().fold(T::zero(), |a, &v| a + v);
            for kk in 0..k {
                let d = dot_fixed(grow, &col[kk * p..(kk + 1) * p]);
                grad_w[o * k + kk] = grad_w[o * k + kk] + d;
            }
        }

        gcol.fill(T::zero());
        gemm_accumulate(k, o_count, p, &wt, g, &mut gcol);
        gpad.fill(T::zero());
        col2im_add(&gcol, ph, pw, spec, oh, ow, &mut gpad);
        let dst = grad_x.item_mut(item);
        for ch in 0..c {
            unpad_plane(
                &gpad[ch * ph * pw..(ch + 1) * ph * pw],
                h,
                w,
                pad,
                spec.pad_mode,
                &mut dst[ch * h * w..(ch + 1) * h * w],
            );
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_w: Tensor::from_vec(spec.weight_shape(), grad_w)?,
        grad_b,
    })
}

/// Forward convolution using the algorithm named in `spec`.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, f: &FilterBank<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    match spec.algorithm {
        ConvAlgorithm::Direct => conv2d_direct(x, f, spec),
        ConvAlgorithm::Winograd => crate::winograd::conv2d_winograd(x, f, spec),
    }
}
