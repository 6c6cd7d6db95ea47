//! Cartesian to polar / log-polar resampling, plus the rotation and
//! translation warps used for augmentation.
//!
//! Coordinates follow the pixel-center convention: pixel `(row, col)` sits
//! at `x = col`, `y = row`. The polar transform works in a y-up frame around
//! the image center; stored output row `out_height - 1 - r` holds angle index
//! `r`, so the origin lands in the bottom-left corner of the polar image.
//!
//! [`rotate_image`] measures its angle in the pixel frame (y down), which
//! makes a rotation by `2πk / out_height` show up as
//! `cyclic_shift_rows(polar, k)`.

use std::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// A multi-channel raster, channel-major, values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl ImageGrid {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!(
                "image dimensions must be >= 1, got {channels}x{height}x{width}"
            )));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::InvalidShape(format!(
                "{channels}x{height}x{width} image needs {} pixels, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("image pixels"));
        }
        Ok(ImageGrid {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, 0.0)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        assert!(
            channels > 0 && height > 0 && width > 0,
            "image dimensions must be >= 1"
        );
        ImageGrid {
            channels,
            height,
            width,
            pixels: vec![value; channels * height * width],
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut img = Self::zeros(channels, height, width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    img.set(c, y, x, f(c, y, x));
                }
            }
        }
        img
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }
    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.pixels[(c * self.height + y) * self.width + x] = v;
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let len = self.height * self.width;
        &self.pixels[c * len..(c + 1) * len]
    }

    /// Geometric center in pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }

    /// Packs a batch of same-sized images into an `(N, C, H, W)` tensor.
    pub fn batch_tensor<'a, T: Scalar>(
        images: impl IntoIterator<Item = &'a ImageGrid>,
    ) -> Result<Tensor<T>> {
        let mut dims = None;
        let mut data = Vec::new();
        let mut n = 0;
        for img in images {
            let d = (img.channels, img.height, img.width);
            match dims {
                None => dims = Some(d),
                Some(prev) if prev != d => {
                    return Err(Error::InvalidShape(format!(
                        "batch mixes {}x{}x{} and {}x{}x{} images",
                        prev.0, prev.1, prev.2, d.0, d.1, d.2
                    )))
                }
                _ => {}
            }
            data.extend(img.pixels.iter().map(|&p| T::from_f64(p as f64)));
            n += 1;
        }
        let (c, h, w) = dims.ok_or(Error::EmptyDataset)?;
        Tensor::from_vec(Shape::new(n, c, h, w), data)
    }
}

/// Converts a Cartesian point to `(rho, phi)` with `phi` in `[0, 2π)`.
///
/// Returns `None` at the origin, where the angle is undefined.
pub fn cartesian_to_polar_point(x: f64, y: f64) -> Option<(f64, f64)> {
    let rho = (x * x + y * y).sqrt();
    let phi = if x > 0.0 && y >= 0.0 {
        (y / x).atan()
    } else if x == 0.0 && y > 0.0 {
        FRAC_PI_2
    } else if x < 0.0 {
        PI + (y / x).atan()
    } else if x == 0.0 && y < 0.0 {
        3.0 * FRAC_PI_2
    } else if x > 0.0 && y < 0.0 {
        2.0 * PI + (y / x).atan()
    } else {
        return None;
    };
    Some((rho, phi))
}

#[inline]
fn pixel_or_zero(img: &ImageGrid, c: usize, y: i64, x: i64) -> f64 {
    if y < 0 || x < 0 || y >= img.height as i64 || x >= img.width as i64 {
        0.0
    } else {
        img.get(c, y as usize, x as usize) as f64
    }
}

/// Bilinear sample of channel `c`.
///
/// The image covers `[-0.5, width - 0.5] x [-0.5, height - 0.5]`; points in
/// the half-pixel rim around the outer pixel centers take the edge value,
/// points outside the footprint read 0.
#[inline]
pub fn bilinear_sample_channel(img: &ImageGrid, c: usize, x: f64, y: f64) -> f64 {
    let (w, h) = (img.width as f64, img.height as f64);
    if !(x >= -0.5 && y >= -0.5 && x <= w - 0.5 && y <= h - 0.5) {
        return 0.0;
    }
    let x = x.clamp(0.0, w - 1.0);
    let y = y.clamp(0.0, h - 1.0);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let (xi, yi) = (x0 as i64, y0 as i64);
    let p00 = pixel_or_zero(img, c, yi, xi);
    let p01 = pixel_or_zero(img, c, yi, xi + 1);
    let p10 = pixel_or_zero(img, c, yi + 1, xi);
    let p11 = pixel_or_zero(img, c, yi + 1, xi + 1);
    let top = p00 * (1.0 - fx) + p01 * fx;
    let bottom = p10 * (1.0 - fx) + p11 * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear sample of every channel at `(x, y)`.
pub fn bilinear_sample(img: &ImageGrid, x: f64, y: f64) -> Vec<f32> {
    (0..img.channels)
        .map(|c| bilinear_sample_channel(img, c, x, y) as f32)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolarMode {
    Polar,
    LogPolar,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarConfig {
    pub mode: PolarMode,
    /// Angular resolution (rows).
    pub out_height: usize,
    /// Radial resolution (columns).
    pub out_width: usize,
    /// Radius of the bounding circle, in pixels.
    pub rho_max: f64,
}

impl PolarConfig {
    /// Output the same size as the input, bounding circle inscribed in it.
    pub fn for_image(mode: PolarMode, height: usize, width: usize) -> Self {
        PolarConfig {
            mode,
            out_height: height,
            out_width: width,
            rho_max: height.min(width) as f64 / 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_height == 0 || self.out_width == 0 {
            return Err(Error::Config(format!(
                "polar output must be at least 1x1, got {}x{}",
                self.out_height, self.out_width
            )));
        }
        if !(self.rho_max > 0.0 && self.rho_max.is_finite()) {
            return Err(Error::Config(format!(
                "rho_max must be > 0, got {}",
                self.rho_max
            )));
        }
        Ok(())
    }

    /// Sampling radius of output column `col`.
    ///
    /// Polar columns are evenly spaced over `(0, rho_max)`. Log-polar
    /// columns follow `(rho_max + 1)^t - 1` with `t = (col + 0.5) / out_width`,
    /// which is 0 at the left edge, `rho_max` at the right edge, and avoids
    /// the logarithm's singularity at the origin.
    pub fn radius(&self, col: usize) -> f64 {
        let t = (col as f64 + 0.5) / self.out_width as f64;
        match self.mode {
            PolarMode::Polar => self.rho_max * t,
            PolarMode::LogPolar => (self.rho_max + 1.0).powf(t) - 1.0,
        }
    }

    /// Angle sampled by angle index `r` (counted from the bottom row).
    pub fn angle(&self, r: usize) -> f64 {
        2.0 * PI * r as f64 / self.out_height as f64
    }

    /// Stored row for angle index `r`.
    pub fn row_of_angle_index(&self, r: usize) -> usize {
        self.out_height - 1 - r
    }
}

/// Resamples `img` onto the (log-)polar grid described by `cfg`.
pub fn to_polar(img: &ImageGrid, cfg: &PolarConfig) -> Result<ImageGrid> {
    cfg.validate()?;
    let (cx, cy) = img.center();
    let radii: Vec<f64> = (0..cfg.out_width).map(|c| cfg.radius(c)).collect();
    let mut out = ImageGrid::zeros(img.channels, cfg.out_height, cfg.out_width);
    for r in 0..cfg.out_height {
        let (sin, cos) = cfg.angle(r).sin_cos();
        let row = cfg.row_of_angle_index(r);
        for (col, &rho) in radii.iter().enumerate() {
            let x = cx + rho * cos;
            let y = cy - rho * sin;
            for c in 0..img.channels {
                out.set(c, row, col, bilinear_sample_channel(img, c, x, y) as f32);
            }
        }
    }
    Ok(out)
}

/// Rotates about the image center; output pixel `p` samples the input at
/// `p` rotated by `-angle`. Samples outside the source read as 0.
pub fn rotate_image(img: &ImageGrid, angle: f64) -> ImageGrid {
    if angle == 0.0 {
        return img.clone();
    }
    let (cx, cy) = img.center();
    let (sin, cos) = angle.sin_cos();
    let mut out = ImageGrid::zeros(img.channels, img.height, img.width);
    for y in 0..img.height {
        let dy = y as f64 - cy;
        for x in 0..img.width {
            let dx = x as f64 - cx;
            let sx = cx + cos * dx + sin * dy;
            let sy = cy - sin * dx + cos * dy;
            for c in 0..img.channels {
                out.set(c, y, x, bilinear_sample_channel(img, c, sx, sy) as f32);
            }
        }
    }
    out
}

/// Shifts by whole pixels (`dx` right, `dy` down); vacated pixels are 0.
pub fn translate_image(img: &ImageGrid, dx: i64, dy: i64) -> ImageGrid {
    let mut out = ImageGrid::zeros(img.channels, img.height, img.width);
    let (h, w) = (img.height as i64, img.width as i64);
    for c in 0..img.channels {
        for y in 0..h {
            let sy = y - dy;
            if sy < 0 || sy >= h {
                continue;
            }
            for x in 0..w {
                let sx = x - dx;
                if sx >= 0 && sx < w {
                    out.set(
                        c,
                        y as usize,
                        x as usize,
                        img.get(c, sy as usize, sx as usize),
                    );
                }
            }
        }
    }
    out
}

/// Bilinear resize with pixel-center alignment and edge clamping.
pub fn resize_bilinear(img: &ImageGrid, height: usize, width: usize) -> ImageGrid {
    let sy = img.height as f64 / height as f64;
    let sx = img.width as f64 / width as f64;
    let max_x = (img.width - 1) as f64;
    let max_y = (img.height - 1) as f64;
    ImageGrid::from_fn(img.channels, height, width, |c, y, x| {
        let src_x = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
        let src_y = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        bilinear_sample_channel(img, c, src_x, src_y) as f32
    })
}
