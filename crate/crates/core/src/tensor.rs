//! Dense rank-4 tensors in (N, C, H, W) row-major order.
//!
//! Every accumulation in this crate runs in a fixed order, so the same
//! inputs always produce bit-identical outputs. Matrices are tensors of
//! shape `(1, 1, rows, cols)`.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type of a [`Tensor`]: `f32` for training, `f64` for oracle checks.
pub trait Scalar:
    Float + Default + Send + Sync + fmt::Debug + fmt::Display + std::iter::Sum + 'static
{
    /// Width in bytes of the little-endian encoding.
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const BYTES: usize = 4;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Scalar for f64 {
    const BYTES: usize = 8;

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Tensor dimensions `(N, C, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape([n, c, h, w])
    }

    pub const fn n(&self) -> usize {
        self.0[0]
    }
    pub const fn c(&self) -> usize {
        self.0[1]
    }
    pub const fn h(&self) -> usize {
        self.0[2]
    }
    pub const fn w(&self) -> usize {
        self.0[3]
    }

    pub const fn len(&self) -> usize {
        self.0[0] * self.0[1] * self.0[2] * self.0[3]
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Elements in one batch item.
    pub const fn item_len(&self) -> usize {
        self.0[1] * self.0[2] * self.0[3]
    }

    /// Elements in one channel plane.
    pub const fn plane_len(&self) -> usize {
        self.0[2] * self.0[3]
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.0[1] + c) * self.0[2] + h) * self.0[3] + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "[{n}, {c}, {h}, {w}]")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: Shape) -> Self {
        Tensor {
            shape,
            data: vec![T::zero(); shape.len()],
        }
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::InvalidShape(format!(
                "{shape} needs {} elements, got {}",
                shape.len(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let [n, c, h, w] = shape.0;
        let mut data = Vec::with_capacity(shape.len());
        for i in 0..n {
            for j in 0..c {
                for k in 0..h {
                    for l in 0..w {
                        data.push(f([i, j, k, l]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    /// A `rows x cols` matrix stored as shape `(1, 1, rows, cols)`.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(Shape::new(1, 1, rows, cols), data)
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(Shape::new(1, 1, n, n), |[_, _, r, c]| {
            if r == c {
                T::one()
            } else {
                T::zero()
            }
        })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Slice of batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.item_len();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn item_mut(&mut self, n: usize) -> &mut [T] {
        let len = self.shape.item_len();
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn get(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.offset(n, c, h, w)]
    }

    pub fn reshape(self, shape: Shape) -> Result<Self> {
        if shape.len() != self.shape.len() {
            return Err(Error::ShapeMismatch {
                left: self.shape,
                right: shape,
            });
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn ensure_finite(self, what: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Largest absolute elementwise difference, in `f64`.
    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Sum of elementwise products, accumulated in index order.
    pub fn dot(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.as_f64() * b.as_f64())
            .sum())
    }
}

impl<T> Index<[usize; 4]> for Tensor<T> {
    type Output = T;
    fn index(&self, [n, c, h, w]: [usize; 4]) -> &T {
        &self.data[self.shape.offset(n, c, h, w)]
    }
}

impl<T> IndexMut<[usize; 4]> for Tensor<T> {
    fn index_mut(&mut self, [n, c, h, w]: [usize; 4]) -> &mut T {
        let i = self.shape.offset(n, c, h, w);
        &mut self.data[i]
    }
}

pub fn elementwise<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: ElementwiseOp,
) -> Result<Tensor<T>> {
    if a.shape != b.shape {
        return Err(Error::ShapeMismatch {
            left: a.shape,
            right: b.shape,
        });
    }
    let f: fn(T, T) -> T = match op {
        ElementwiseOp::Add => |x, y| x + y,
        ElementwiseOp::Sub => |x, y| x - y,
        ElementwiseOp::Mul => |x, y| x * y,
    };
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Tensor {
        shape: a.shape,
        data,
    }
    .ensure_finite("elementwise")
}

/// Matrix product of two `(1, 1, R, K)` and `(1, 1, K, S)` tensors.
///
/// Each output element is accumulated with `k` ascending.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [an, ac, rows, inner] = a.shape.0;
    let [bn, bc, inner2, cols] = b.shape.0;
    if an != 1 || ac != 1 || bn != 1 || bc != 1 || inner != inner2 {
        return Err(Error::MatmulMismatch {
            rows: an * ac * rows,
            inner,
            inner2: bn * bc * inner2,
            cols,
        });
    }
    let mut out = vec![T::zero(); rows * cols];
    gemm_accumulate(rows, inner, cols, &a.data, &b.data, &mut out);
    Tensor::matrix(rows, cols, out)?.ensure_finite("matmul")
}

/// `out[r][s] += sum_k a[r][k] * b[k][s]`, row-major, `k` ascending per element.
///
/// This is the shared inner kernel for the convolution paths. The update for
/// a given output element never depends on its column position, which is what
/// makes cylindrical convolution exactly equivariant to row shifts.
pub(crate) fn gemm_accumulate<T: Scalar>(
    rows: usize,
    inner: usize,
    cols: usize,
    a: &[T],
    b: &[T],
    out: &mut [T],
) {
    debug_assert_eq!(a.len(), rows * inner);
    debug_assert_eq!(b.len(), inner * cols);
    debug_assert_eq!(out.len(), rows * cols);
    const ROW_BLOCK: usize = 4;
    let mut r = 0;
    while r + ROW_BLOCK <= rows {
        let (o0, rest) = out[r * cols..(r + ROW_BLOCK) * cols].split_at_mut(cols);
        let (o1, rest) = rest.split_at_mut(cols);
        let (o2, o3) = rest.split_at_mut(cols);
        for k in 0..inner {
            let w0 = a[r * inner + k];
            let w1 = a[(r + 1) * inner + k];
            let w2 = a[(r + 2) * inner + k];
            let w3 = a[(r + 3) * inner + k];
            let brow = &b[k * cols..(k + 1) * cols];
            for ((((x, y0), y1), y2), y3) in brow
                .iter()
                .zip(o0.iter_mut())
                .zip(o1.iter_mut())
                .zip(o2.iter_mut())
                .zip(o3.iter_mut())
            {
                *y0 = *y0 + w0 * *x;
                *y1 = *y1 + w1 * *x;
                *y2 = *y2 + w2 * *x;
                *y3 = *y3 + w3 * *x;
            }
        }
        r += ROW_BLOCK;
    }
    for r in r..rows {
        let orow = &mut out[r * cols..(r + 1) * cols];
        for k in 0..inner {
            let w = a[r * inner + k];
            let brow = &b[k * cols..(k + 1) * cols];
            for (y, x) in orow.iter_mut().zip(brow) {
                *y = *y + w * *x;
            }
        }
    }
}

/// Dot product with eight interleaved partial sums combined in a fixed order.
#[inline]
pub(crate) fn dot_fixed<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a.chunks_exact(8).zip(b.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] = acc[l] + ca[l] * cb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = tail + a[i] * b[i];
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// Cyclically shifts rows: `out[n][c][h][w] = t[n][c][(h - k) mod H][w]`.
pub fn cyclic_shift_rows<T: Scalar>(t: &Tensor<T>, k: i64) -> Tensor<T> {
    let [n, c, h, w] = t.shape.0;
    if h == 0 {
        return t.clone();
    }
    let shift = k.rem_euclid(h as i64) as usize;
    let mut out = Tensor::zeros(t.shape);
    for plane in 0..n * c {
        let src = &t.data[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out.data[plane * h * w..(plane + 1) * h * w];
        for row in 0..h {
            let from = (row + h - shift) % h;
            dst[row * w..(row + 1) * w].copy_from_slice(&src[from * w..(from + 1) * w]);
        }
    }
    out
}
