//! Winograd F(2x2, 3x3) convolution with zero or cylindrical tiling.
//!
//! The padded input is cut into 4x4 tiles at stride 2. Each tile and each
//! 3x3 filter is moved into the 4x4 transform domain, multiplied
//! elementwise (summed over input channels), and mapped back to a 2x2
//! output block. The two padding modes differ only in how the border of
//! the padded input is filled before tiling.

use crate::conv::{pad_input, pad_plane, ConvSpec, FilterBank, PadMode};
use crate::error::{Error, Result};
use crate::tensor::{gemm_accumulate, Scalar, Shape, Tensor};

/// Multiplications per 2x2 output tile and channel pair.
pub const WINOGRAD_MULS_PER_TILE: usize = 16;
pub const DIRECT_MULS_PER_TILE: usize = 4 * 9;

/// Transform matrices of F(2x2, 3x3) minimal filtering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WinogradTransforms {
    /// Input transform `Bᵀ` (4x4).
    pub bt: [[f64; 4]; 4],
    /// Filter transform `G` (4x3).
    pub g: [[f64; 3]; 4],
    /// Output transform `Aᵀ` (2x4).
    pub at: [[f64; 4]; 2],
}

impl WinogradTransforms {
    pub const STANDARD: WinogradTransforms = WinogradTransforms {
        bt: [
            [1.0, 0.0, -1.0, 0.0],
            [0.0, 1.0, 1.0, 0.0],
            [0.0, -1.0, 1.0, 0.0],
            [0.0, 1.0, 0.0, -1.0],
        ],
        g: [
            [1.0, 0.0, 0.0],
            [0.5, 0.5, 0.5],
            [0.5, -0.5, 0.5],
            [0.0, 0.0, 1.0],
        ],
        at: [[1.0, 1.0, 1.0, 0.0], [0.0, 1.0, -1.0, -1.0]],
    };

    /// `U = G g Gᵀ` for a row-major 3x3 filter.
    pub fn filter<T: Scalar>(&self, g: &[T; 9]) -> [T; 16] {
        let gm = self.g.map(|row| row.map(T::from_f64));
        let mut tmp = [T::zero(); 12];
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = T::zero();
                for k in 0..3 {
                    acc = acc + gm[i][k] * g[k * 3 + j];
                }
                tmp[i * 3 + j] = acc;
            }
        }
        let mut u = [T::zero(); 16];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = T::zero();
                for k in 0..3 {
                    acc = acc + tmp[i * 3 + k] * gm[j][k];
                }
                u[i * 4 + j] = acc;
            }
        }
        u
    }

    /// `V = Bᵀ d B` for a row-major 4x4 tile.
    pub fn input<T: Scalar>(&self, d: &[T; 16]) -> [T; 16] {
        let bt = self.bt.map(|row| row.map(T::from_f64));
        let mut tmp = [T::zero(); 16];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = T::zero();
                for k in 0..4 {
                    if bt[i][k] != T::zero() {
                        acc = acc + bt[i][k] * d[k * 4 + j];
                    }
                }
                tmp[i * 4 + j] = acc;
            }
        }
        let mut v = [T::zero(); 16];
        for i in 0..4 {
            for j in 0..4 {
                let mut acc = T::zero();
                for k in 0..4 {
                    if bt[j][k] != T::zero() {
                        acc = acc + tmp[i * 4 + k] * bt[j][k];
                    }
                }
                v[i * 4 + j] = acc;
            }
        }
        v
    }

    /// `Y = Aᵀ m A`, a row-major 2x2 block.
    pub fn output<T: Scalar>(&self, m: &[T; 16]) -> [T; 4] {
        let at = self.at.map(|row| row.map(T::from_f64));
        let mut tmp = [T::zero(); 8];
        for i in 0..2 {
            for j in 0..4 {
                let mut acc = T::zero();
                for k in 0..4 {
                    if at[i][k] != T::zero() {
                        acc = acc + at[i][k] * m[k * 4 + j];
                    }
                }
                tmp[i * 4 + j] = acc;
            }
        }
        let mut y = [T::zero(); 4];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = T::zero();
                for k in 0..4 {
                    if at[j][k] != T::zero() {
                        acc = acc + tmp[i * 4 + k] * at[j][k];
                    }
                }
                y[i * 2 + j] = acc;
            }
        }
        y
    }
}

/// `Bᵀ d B` for the standard matrices as additions only, applied to every
/// tile of one padded plane, one tile row at a time. The arithmetic order
/// matches [`WinogradTransforms::input`] so results are bit-identical. `v` starts at this channel's slot for entry 0;
/// entry `xi` of tile `k` sits at `xi * stride + k`.
fn input_rows_standard<T: Scalar>(
    padded: &[T],
    pw: usize,
    (th, tw): (usize, usize),
    stride: usize,
    rows: &mut [T],
    v: &mut [T],
) {
    let (r0, rest) = rows.split_at_mut(pw);
    let (r1, rest) = rest.split_at_mut(pw);
    let (r2, r3) = rest.split_at_mut(pw);
    for i in 0..th {
        let d0 = &padded[2 * i * pw..(2 * i + 1) * pw];
        let d1 = &padded[(2 * i + 1) * pw..(2 * i + 2) * pw];
        let d2 = &padded[(2 * i + 2) * pw..(2 * i + 3) * pw];
        let d3 = &padded[(2 * i + 3) * pw..(2 * i + 4) * pw];
        for x in 0..pw {
            r0[x] = d0[x] - d2[x];
            r1[x] = d1[x] + d2[x];
            r2[x] = -d1[x] + d2[x];
            r3[x] = d1[x] - d3[x];
        }
        for (a, r) in [&*r0, &*r1, &*r2, &*r3].into_iter().enumerate() {
            let at = |b: usize| (a * 4 + b) * stride + i * tw;
            for j in 0..tw {
                v[at(0) + j] = r[2 * j] - r[2 * j + 2];
            }
            for j in 0..tw {
                v[at(1) + j] = r[2 * j + 1] + r[2 * j + 2];
            }
            for j in 0..tw {
                v[at(2) + j] = -r[2 * j + 1] + r[2 * j + 2];
            }
            for j in 0..tw {
                v[at(3) + j] = r[2 * j + 1] - r[2 * j + 3];
            }
        }
    }
}

/// `Aᵀ m A` for the standard matrices, for every tile of one output channel, written with
/// the bias into `plane`. `m` starts at this channel's slot for entry 0;
/// entry `xi` sits `xi * stride` further on.
fn output_rows_standard<T: Scalar>(
    m: &[T],
    stride: usize,
    th: usize,
    tw: usize,
    bias: T,
    plane: &mut [T],
) {
    let w = 2 * tw;
    for i in 0..th {
        let s: [&[T]; 16] =
            std::array::from_fn(|xi| &m[xi * stride + i * tw..xi * stride + (i + 1) * tw]);
        let (top, bottom) = plane[2 * i * w..(2 * i + 2) * w].split_at_mut(w);
        for j in 0..tw {
            let a0 = s[0][j] + s[4][j] + s[8][j];
            let a1 = s[1][j] + s[5][j] + s[9][j];
            let a2 = s[2][j] + s[6][j] + s[10][j];
            let a3 = s[3][j] + s[7][j] + s[11][j];
            let b0 = s[4][j] - s[8][j] - s[12][j];
            let b1 = s[5][j] - s[9][j] - s[13][j];
            let b2 = s[6][j] - s[10][j] - s[14][j];
            let b3 = s[7][j] - s[11][j] - s[15][j];
            top[2 * j] = a0 + a1 + a2 + bias;
            top[2 * j + 1] = a1 - a2 - a3 + bias;
            bottom[2 * j] = b0 + b1 + b2 + bias;
            bottom[2 * j + 1] = b1 - b2 - b3 + bias;
        }
    }
}

impl Default for WinogradTransforms {
    fn default() -> Self {
        Self::STANDARD
    }
}

/// `U = G g Gᵀ` with the standard transforms.
pub fn transform_filter<T: Scalar>(g: &[[T; 3]; 3]) -> [[T; 4]; 4] {
    let flat = [
        g[0][0], g[0][1], g[0][2], g[1][0], g[1][1], g[1][2], g[2][0], g[2][1], g[2][2],
    ];
    let u = WinogradTransforms::STANDARD.filter(&flat);
    std::array::from_fn(|i| std::array::from_fn(|j| u[i * 4 + j]))
}

/// 4x4 input tiles fetched at stride 2 from the padded input.
#[derive(Debug, Clone, PartialEq)]
pub struct TileGrid<T> {
    pub batch: usize,
    pub channels: usize,
    pub tiles_h: usize,
    pub tiles_w: usize,
    /// Row-major 4x4 tiles indexed by `(batch, channel, tile_row, tile_col)`.
    pub tiles: Vec<[T; 16]>,
}

impl<T: Scalar> TileGrid<T> {
    pub fn tile(&self, n: usize, c: usize, i: usize, j: usize) -> &[T; 16] {
        &self.tiles[((n * self.channels + c) * self.tiles_h + i) * self.tiles_w + j]
    }
}

fn check_even(h: usize, w: usize) -> Result<()> {
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(Error::UnsupportedWinograd(format!(
            "spatial size {h}x{w} must be even for 2x2 output tiles"
        )));
    }
    Ok(())
}

/// Pads by 1 in `mode` and cuts the result into 4x4 tiles at stride 2.
pub fn tile_input<T: Scalar>(x: &Tensor<T>, mode: PadMode) -> Result<TileGrid<T>> {
    let [n, c, h, w] = x.shape().0;
    check_even(h, w)?;
    let padded = pad_input(x, 1, mode)?;
    let (th, tw) = (h / 2, w / 2);
    let pw = w + 2;
    let mut tiles = Vec::with_capacity(n * c * th * tw);
    for plane in padded.data().chunks_exact((h + 2) * pw) {
        for i in 0..th {
            for j in 0..tw {
                tiles.push(std::array::from_fn(|e| {
                    plane[(2 * i + e / 4) * pw + 2 * j + e % 4]
                }));
            }
        }
    }
    Ok(TileGrid {
        batch: n,
        channels: c,
        tiles_h: th,
        tiles_w: tw,
        tiles,
    })
}

/// Winograd convolution with the standard transforms and `spec.pad_mode` tiling.
pub fn conv2d_winograd<T: Scalar>(
    x: &Tensor<T>,
    f: &FilterBank<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    conv2d_winograd_with(x, f, spec, &WinogradTransforms::STANDARD)
}

/// Winograd convolution with caller-supplied transform matrices.
pub fn conv2d_winograd_with<T: Scalar>(
    x: &Tensor<T>,
    f: &FilterBank<T>,
    spec: &ConvSpec,
    transforms: &WinogradTransforms,
) -> Result<Tensor<T>> {
    winograd_impl(
        x,
        f,
        spec,
        transforms,
        *transforms == WinogradTransforms::STANDARD,
    )
}

/// `standard` selects the fixed add/sub kernels; only valid for the
/// standard transforms.
fn winograd_impl<T: Scalar>(
    x: &Tensor<T>,
    f: &FilterBank<T>,
    spec: &ConvSpec,
    transforms: &WinogradTransforms,
    standard: bool,
) -> Result<Tensor<T>> {
    if !spec.is_winograd_geometry() {
        return Err(Error::UnsupportedWinograd(format!(
            "kernel {}x{}, stride {}x{}, pad {}",
            spec.kernel_h, spec.kernel_w, spec.stride_h, spec.stride_w, spec.pad
        )));
    }
    spec.with_algorithm(crate::conv::ConvAlgorithm::Direct)
        .validate()?;
    let [n, c, h, w] = x.shape().0;
    if c != spec.in_channels {
        return Err(Error::InvalidConv(format!(
            "input has {c} channels, layer expects {}",
            spec.in_channels
        )));
    }
    if f.weights.shape() != spec.weight_shape() || f.bias.len() != spec.out_channels {
        return Err(Error::InvalidConv(format!(
            "filter bank {} does not match spec {}",
            f.weights.shape(),
            spec.weight_shape()
        )));
    }
    check_even(h, w)?;
    let o_count = spec.out_channels;
    let (th, tw) = (h / 2, w / 2);
    let t = th * tw;

    // Step 2-3 for filters: U[xi][o][c].
    let mut u = vec![T::zero(); 16 * o_count * c];
    for o in 0..o_count {
        for ch in 0..c {
            let base = (o * c + ch) * 9;
            let g: [T; 9] = std::array::from_fn(|e| f.weights.data()[base + e]);
            let ut = transforms.filter(&g);
            for (xi, &val) in ut.iter().enumerate() {
                u[(xi * o_count + o) * c + ch] = val;
            }
        }
    }

    let (ph, pw) = (h + 2, w + 2);
    let mut padded = vec![T::zero(); ph * pw];
    let mut rows = vec![T::zero(); 4 * pw];
    let mut v = vec![T::zero(); 16 * c * t];
    let mut m = vec![T::zero(); 16 * o_count * t];
    let mut out = Tensor::zeros(Shape::new(n, o_count, h, w));
    for item in 0..n {
        // Step 1 and 3 for data: tile the padded input and transform.
        for ch in 0..c {
            pad_plane(
                &x.item(item)[ch * h * w..(ch + 1) * h * w],
                h,
                w,
                1,
                spec.pad_mode,
                &mut padded,
            );
            if standard {
                input_rows_standard(&padded, pw, (th, tw), c * t, &mut rows, &mut v[ch * t..]);
                continue;
            }
            for i in 0..th {
                for j in 0..tw {
                    let d: [T; 16] =
                        std::array::from_fn(|e| padded[(2 * i + e / 4) * pw + 2 * j + e % 4]);
                    let vt = transforms.input(&d);
                    let tile = i * tw + j;
                    for (xi, &val) in vt.iter().enumerate() {
                        v[(xi * c + ch) * t + tile] = val;
                    }
                }
            }
        }
        // Step 4: elementwise products summed over input channels.
        m.fill(T::zero());
        for xi in 0..16 {
            gemm_accumulate(
                o_count,
                c,
                t,
                &u[xi * o_count * c..(xi + 1) * o_count * c],
                &v[xi * c * t..(xi + 1) * c * t],
                &mut m[xi * o_count * t..(xi + 1) * o_count * t],
            );
        }
        // Step 5: back to 2x2 output blocks.
        let dst = out.item_mut(item);
        for o in 0..o_count {
            let bias = f.bias[o];
            let plane = &mut dst[o * h * w..(o + 1) * h * w];
            if standard {
                output_rows_standard(&m[o * t..], o_count * t, th, tw, bias, plane);
                continue;
            }
            for i in 0..th {
                for j in 0..tw {
                    let tile = i * tw + j;
                    let mt: [T; 16] = std::array::from_fn(|xi| m[(xi * o_count + o) * t + tile]);
                    let y = transforms.output(&mt);
                    plane[(2 * i) * w + 2 * j] = y[0] + bias;
                    plane[(2 * i) * w + 2 * j + 1] = y[1] + bias;
                    plane[(2 * i + 1) * w + 2 * j] = y[2] + bias;
                    plane[(2 * i + 1) * w + 2 * j + 1] = y[3] + bias;
                }
            }
        }
    }
    out.ensure_finite("conv2d_winograd")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{conv2d_direct, ConvAlgorithm};
    use crate::tensor::cyclic_shift_rows;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    use rand_chacha::ChaCha8Rng;

    #[test]
    fn row_kernels_match_per_tile_path_bitwise() {
        for (h, w, mode) in [
            (4, 6, PadMode::Zero),
            (8, 8, PadMode::Cylindrical),
            (6, 2, PadMode::Cylindrical),
        ] {
            let spec = wino(3, 5, mode);
            let x = random::<f32>(Shape::new(2, 3, h, w), 40);
            let f = random_bank::<f32>(&spec, 41);
            let t = WinogradTransforms::STANDARD;
            let fast = winograd_impl(&x, &f, &spec, &t, true).unwrap();
            let slow = winograd_impl(&x, &f, &spec, &t, false).unwrap();
            assert_eq!(fast, slow);
        }
    }

    fn random<T: Scalar>(shape: Shape, seed: u64) -> Tensor<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| T::from_f64(rng.gen_range(-1.0..1.0)))
    }

    fn random_bank<T: Scalar>(spec: &ConvSpec, seed: u64) -> FilterBank<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Tensor::from_fn(spec.weight_shape(), |_| {
            T::from_f64(rng.gen_range(-1.0..1.0))
        });
        let bias = (0..spec.out_channels)
            .map(|_| T::from_f64(rng.gen_range(-1.0..1.0)))
            .collect();
        FilterBank::new(weights, bias).unwrap()
    }

    fn wino(cin: usize, cout: usize, mode: PadMode) -> ConvSpec {
        ConvSpec::same3x3(cin, cout, mode).with_algorithm(ConvAlgorithm::Winograd)
    }

    #[test]
    fn zero_mode_top_left_tile_starts_with_zero_row() {
        let x = random::<f64>(Shape::new(1, 1, 4, 4), 1);
        let grid = tile_input(&x, PadMode::Zero).unwrap();
        assert_eq!((grid.tiles_h, grid.tiles_w), (2, 2));
        assert_eq!(&grid.tile(0, 0, 0, 0)[..4], &[0.0; 4]);
        assert_eq!(grid.tile(0, 0, 0, 0)[5], x.get(0, 0, 0, 0));
    }

    #[test]
    fn cylindrical_mode_top_left_tile_reads_wrapped_last_row() {
        let x = random::<f64>(Shape::new(1, 1, 4, 4), 2);
        let grid = tile_input(&x, PadMode::Cylindrical).unwrap();
        let first_row = &grid.tile(0, 0, 0, 0)[..4];
        assert_eq!(
            first_row,
            &[0.0, x.get(0, 0, 3, 0), x.get(0, 0, 3, 1), x.get(0, 0, 3, 2)]
        );
        // Bottom-right tile's last row is the wrapped first row.
        let last = &grid.tile(0, 0, 1, 1)[12..];
        assert_eq!(
            last,
            &[x.get(0, 0, 0, 1), x.get(0, 0, 0, 2), x.get(0, 0, 0, 3), 0.0]
        );
    }

    #[test]
    fn constant_input_tiles_match_padded_windows() {
        let x = Tensor::<f64>::full(Shape::new(1, 1, 4, 4), 1.0);
        let grid = tile_input(&x, PadMode::Zero).unwrap();
        let padded = pad_input(&x, 1, PadMode::Zero).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let tile = grid.tile(0, 0, i, j);
                for e in 0..16 {
                    assert_eq!(tile[e], padded.get(0, 0, 2 * i + e / 4, 2 * j + e % 4));
                }
            }
        }
    }

    #[test]
    fn odd_sizes_are_rejected() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 5, 4));
        assert!(matches!(
            tile_input(&x, PadMode::Zero),
            Err(Error::UnsupportedWinograd(_))
        ));
        let spec = wino(1, 1, PadMode::Zero);
        assert!(conv2d_winograd(&x, &FilterBank::zeros(&spec), &spec).is_err());
        let mut strided = ConvSpec::same3x3(1, 1, PadMode::Zero);
        strided.stride_h = 2;
        let x = Tensor::<f64>::zeros(Shape::new(1, 1, 4, 4));
        let err = conv2d_winograd(&x, &FilterBank::zeros(&strided), &strided).unwrap_err();
        assert!(err.to_string().contains("direct"), "{err}");
    }

    #[test]
    fn zero_filter_transforms_to_zero() {
        assert_eq!(transform_filter(&[[0.0f64; 3]; 3]), [[0.0; 4]; 4]);
    }

    #[test]
    fn identity_filter_reproduces_input() {
        let x = random::<f64>(Shape::new(2, 3, 8, 6), 3);
        for mode in [PadMode::Zero, PadMode::Cylindrical] {
            let spec = wino(3, 3, mode);
            let y = conv2d_winograd(&x, &FilterBank::identity(&spec), &spec).unwrap();
            assert!(y.max_abs_diff(&x).unwrap() < 1e-15);
        }
    }

    /// Valid 2x2 correlation of a 4x4 tile with a 3x3 filter.
    fn valid_conv(d: &[f64; 16], g: &[f64; 9]) -> [f64; 4] {
        std::array::from_fn(|o| {
            let (i, j) = (o / 2, o % 2);
            let mut acc = 0.0;
            for u in 0..3 {
                for v in 0..3 {
                    acc += d[(i + u) * 4 + j + v] * g[u * 3 + v];
                }
            }
            acc
        })
    }

    #[test]
    fn single_tile_identity_matches_valid_convolution() {
        let t = WinogradTransforms::STANDARD;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let d: [f64; 16] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let g: [f64; 9] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let u = t.filter(&g);
            let v = t.input(&d);
            let m: [f64; 16] = std::array::from_fn(|e| u[e] * v[e]);
            let y = t.output(&m);
            let expected = valid_conv(&d, &g);
            for e in 0..4 {
                assert!((y[e] - expected[e]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn algebraic_identity_is_exact_in_integers() {
        // With G scaled by 2 every transform is integral, and the pipeline
        // yields exactly 4x the direct result.
        let bt: [[i64; 4]; 4] = WinogradTransforms::STANDARD.bt.map(|r| r.map(|v| v as i64));
        let at: [[i64; 4]; 2] = WinogradTransforms::STANDARD.at.map(|r| r.map(|v| v as i64));
        let g2: [[i64; 3]; 4] = WinogradTransforms::STANDARD
            .g
            .map(|r| r.map(|v| (2.0 * v) as i64));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let d: [[i64; 4]; 4] =
                std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-50..50)));
            let g: [[i64; 3]; 3] =
                std::array::from_fn(|_| std::array::from_fn(|_| rng.gen_range(-50..50)));
            let mut u = [[0i64; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    for a in 0..3 {
                        for b in 0..3 {
                            u[i][j] += g2[i][a] * g[a][b] * g2[j][b];
                        }
                    }
                }
            }
            let mut v = [[0i64; 4]; 4];
            for i in 0..4 {
                for j in 0..4 {
                    for a in 0..4 {
                        for b in 0..4 {
                            v[i][j] += bt[i][a] * d[a][b] * bt[j][b];
                        }
                    }
                }
            }
            for i in 0..2 {
                for j in 0..2 {
                    let mut y = 0i64;
                    for a in 0..4 {
                        for b in 0..4 {
                            y += at[i][a] * u[a][b] * v[a][b] * at[j][b];
                        }
                    }
                    let mut direct = 0i64;
                    for a in 0..3 {
                        for b in 0..3 {
                            direct += d[i + a][j + b] * g[a][b];
                        }
                    }
                    assert_eq!(y, 4 * direct);
                }
            }
        }
    }

    #[test]
    fn matches_direct_in_both_modes() {
        let mut seed = 10;
        for (h, w) in [(4, 4), (8, 6), (16, 12), (2, 2)] {
            for (cin, cout) in [(1, 1), (3, 8), (8, 3)] {
                for mode in [PadMode::Zero, PadMode::Cylindrical] {
                    seed += 1;
                    let spec = wino(cin, cout, mode);
                    let x = random::<f64>(Shape::new(2, cin, h, w), seed);
                    let f = random_bank::<f64>(&spec, seed + 1000);
                    let a = conv2d_winograd(&x, &f, &spec).unwrap();
                    let b = conv2d_direct(&x, &f, &spec).unwrap();
                    assert!(a.max_abs_diff(&b).unwrap() < 1e-10);

                    let xs = x.cast::<f32>();
                    let fs = FilterBank::new(
                        f.weights.cast::<f32>(),
                        f.bias.iter().map(|&v| v as f32).collect(),
                    )
                    .unwrap();
                    let a = conv2d_winograd(&xs, &fs, &spec).unwrap();
                    let b = conv2d_direct(&xs, &fs, &spec).unwrap();
                    assert!(a.max_abs_diff(&b).unwrap() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn modes_differ_only_in_first_and_last_rows() {
        let x = random::<f64>(Shape::new(1, 2, 8, 8), 77);
        let zero = wino(2, 2, PadMode::Zero);
        let cyl = wino(2, 2, PadMode::Cylindrical);
        let f = random_bank::<f64>(&zero, 78);
        let a = conv2d_winograd(&x, &f, &zero).unwrap();
        let b = conv2d_winograd(&x, &f, &cyl).unwrap();
        for o in 0..2 {
            for r in 0..8 {
                let same = (0..8).all(|c| a.get(0, o, r, c) == b.get(0, o, r, c));
                assert_eq!(same, r != 0 && r != 7);
            }
        }
    }

    #[test]
    fn perturbed_transforms_break_equivalence() {
        let mut t = WinogradTransforms::STANDARD;
        t.bt[1][2] = 1.01;
        let spec = wino(2, 2, PadMode::Cylindrical);
        let x = random::<f64>(Shape::new(1, 2, 8, 8), 90);
        let f = random_bank::<f64>(&spec, 91);
        let a = conv2d_winograd_with(&x, &f, &spec, &t).unwrap();
        let b = conv2d_direct(&x, &f, &spec).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() > 1e-3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn cylindrical_winograd_is_exactly_equivariant_for_even_shifts(j in -8i64..8, seed in 0u64..10_000) {
            let k = 2 * j;
            let spec = wino(3, 2, PadMode::Cylindrical);
            let x = random::<f64>(Shape::new(1, 3, 8, 6), seed);
            let f = random_bank::<f64>(&spec, seed + 1);
            let lhs = conv2d_winograd(&cyclic_shift_rows(&x, k), &f, &spec).unwrap();
            let rhs = cyclic_shift_rows(&conv2d_winograd(&x, &f, &spec).unwrap(), k);
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn cylindrical_winograd_is_equivariant_for_odd_shifts(j in -8i64..8, seed in 0u64..10_000) {
            let k = 2 * j + 1;
            let spec = wino(2, 2, PadMode::Cylindrical);
            let x = random::<f64>(Shape::new(1, 2, 8, 4), seed);
            let f = random_bank::<f64>(&spec, seed + 1);
            let lhs = conv2d_winograd(&cyclic_shift_rows(&x, k), &f, &spec).unwrap();
            let rhs = cyclic_shift_rows(&conv2d_winograd(&x, &f, &spec).unwrap(), k);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
        }
    }
}
