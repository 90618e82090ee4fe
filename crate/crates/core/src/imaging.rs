//! Grayscale images, summed-area tables and rectangle brightness statistics.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle in pixel coordinates. `x`, `y` is the top-left
/// corner; the rectangle covers columns `x..x + w` and rows `y..y + h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }

    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn fits_in(&self, width: usize, height: usize) -> bool {
        self.w >= 1 && self.h >= 1 && self.right() <= width && self.bottom() <= height
    }

    pub fn translate(&self, dx: usize, dy: usize) -> Rect {
        Rect::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{} {}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Single-channel 8-bit image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} pixels supplied for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0, "empty image");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    pub fn bounds(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    pub fn crop(&self, r: Rect) -> Result<GrayImage> {
        check_rect(r, self.width, self.height)?;
        let mut pixels = Vec::with_capacity(r.area());
        for y in r.y..r.bottom() {
            let row = y * self.width;
            pixels.extend_from_slice(&self.pixels[row + r.x..row + r.right()]);
        }
        GrayImage::new(r.w, r.h, pixels)
    }

    /// Copies `patch` into this image with its top-left corner at (x, y),
    /// clipping whatever falls outside.
    pub fn paste(&mut self, patch: &GrayImage, x: usize, y: usize) {
        for py in 0..patch.height {
            let ty = y + py;
            if ty >= self.height {
                break;
            }
            for px in 0..patch.width {
                let tx = x + px;
                if tx >= self.width {
                    break;
                }
                self.set(tx, ty, patch.get(px, py));
            }
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }
}

/// Converts interleaved 1-, 3- or 4-channel 8-bit data to grayscale.
///
/// Colour inputs use the integer luminance weights 77/150/29 (sum 256), so
/// the conversion is exact and platform-independent; alpha is ignored.
pub fn to_grayscale(width: usize, height: usize, channels: usize, data: &[u8]) -> Result<GrayImage> {
    if !matches!(channels, 1 | 3 | 4) {
        return Err(Error::UnsupportedChannels(channels));
    }
    if data.len() != width * height * channels {
        return Err(Error::InvalidImage(format!(
            "{} bytes supplied for {width}x{height}x{channels}",
            data.len()
        )));
    }
    let pixels = if channels == 1 {
        data.to_vec()
    } else {
        data.chunks_exact(channels)
            .map(|px| luminance(px[0], px[1], px[2]))
            .collect()
    };
    GrayImage::new(width, height, pixels)
}

#[inline]
fn luminance(r: u8, g: u8, b: u8) -> u8 {
    ((77 * r as u32 + 150 * g as u32 + 29 * b as u32 + 128) >> 8) as u8
}

/// Decodes a raster file and converts it to grayscale.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(buf) => to_grayscale(width, height, 1, buf.as_raw()),
        image::DynamicImage::ImageRgba8(buf) => to_grayscale(width, height, 4, buf.as_raw()),
        other => to_grayscale(width, height, 3, other.to_rgb8().as_raw()),
    }
}

/// Writes an image; the format follows the file extension.
pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
        .expect("pixel count matches dimensions");
    buf.save(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })
}

/// Bilinear resampling of the region `src` of `img` to `out_w` x `out_h`.
///
/// Pixel centres are aligned, so a same-size resample reproduces the crop
/// exactly and an exact 2:1 reduction averages 2x2 blocks.
pub fn resample_bilinear(img: &GrayImage, src: Rect, out_w: usize, out_h: usize) -> Result<GrayImage> {
    check_rect(src, img.width, img.height)?;
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidImage("empty resample target".into()));
    }
    if src.w == out_w && src.h == out_h {
        return img.crop(src);
    }
    let sx = src.w as f64 / out_w as f64;
    let sy = src.h as f64 / out_h as f64;
    let coord = |d: usize, scale: f64, len: usize| -> (usize, usize, f64) {
        let c = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = c.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, c - i0 as f64)
    };
    let xs: Vec<_> = (0..out_w).map(|d| coord(d, sx, src.w)).collect();
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for oy in 0..out_h {
        let (y0, y1, fy) = coord(oy, sy, src.h);
        for &(x0, x1, fx) in &xs {
            let p = |x: usize, y: usize| img.get(src.x + x, src.y + y) as f64;
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bot = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            let v = top * (1.0 - fy) + bot * fy;
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    GrayImage::new(out_w, out_h, pixels)
}

pub(crate) fn check_rect(r: Rect, width: usize, height: usize) -> Result<()> {
    if r.fits_in(width, height) {
        Ok(())
    } else {
        Err(Error::OutOfBounds {
            rect: r,
            width,
            height,
        })
    }
}

/// Summed-area table with a zero guard row and column.
///
/// `at(x, y)` is the sum of all values with column < x and row < y.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<i64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        Self::build(img.width, img.height, |i| img.pixels[i] as i64)
    }

    /// Builds a table over arbitrary integer samples (row-major). Used where
    /// values outside the 8-bit range are needed, e.g. affine-transformed
    /// images.
    pub fn from_values(width: usize, height: usize, values: &[i64]) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{} values supplied for a {width}x{height} grid",
                values.len()
            )));
        }
        Ok(Self::build(width, height, |i| values[i]))
    }

    fn build(width: usize, height: usize, value: impl Fn(usize) -> i64) -> Self {
        let stride = width + 1;
        let mut table = vec![0i64; stride * (height + 1)];
        for y in 0..height {
            let mut row_sum = 0i64;
            for x in 0..width {
                row_sum += value(y * width + x);
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        IntegralImage {
            width,
            height,
            table,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> i64 {
        self.table[y * (self.width + 1) + x]
    }

    /// Sum over columns `x0..x1`, rows `y0..y1`. Bounds are not checked
    /// beyond the table's own indexing.
    #[inline]
    pub fn sum_span(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> i64 {
        self.at(x1, y1) - self.at(x0, y1) - self.at(x1, y0) + self.at(x0, y0)
    }

    pub fn rect_sum(&self, r: Rect) -> Result<i64> {
        check_rect(r, self.width, self.height)?;
        Ok(self.sum_span(r.x, r.y, r.right(), r.bottom()))
    }
}

/// Mean brightness of a rectangle.
pub fn region_mean(ii: &IntegralImage, r: Rect) -> Result<f64> {
    Ok(ii.rect_sum(r)? as f64 / r.area() as f64)
}

/// Boundaries of the 3x3 cell partition along one axis: the first two
/// cells are `len / 3` long and the last absorbs the remainder.
#[inline]
pub fn thirds(start: usize, len: usize) -> [usize; 4] {
    let c = len / 3;
    [start, start + c, start + 2 * c, start + len]
}

/// Pixel sums of the nine cells, indexed `3 * row + col`.
#[inline]
pub(crate) fn cell_sums(ii: &IntegralImage, xs: &[usize; 4], ys: &[usize; 4]) -> [i64; 9] {
    let mut out = [0i64; 9];
    for row in 0..3 {
        for col in 0..3 {
            out[3 * row + col] = ii.sum_span(xs[col], ys[row], xs[col + 1], ys[row + 1]);
        }
    }
    out
}

#[inline]
pub(crate) fn cell_areas(xs: &[usize; 4], ys: &[usize; 4]) -> [i64; 9] {
    let mut out = [0i64; 9];
    for row in 0..3 {
        for col in 0..3 {
            out[3 * row + col] = ((xs[col + 1] - xs[col]) * (ys[row + 1] - ys[row])) as i64;
        }
    }
    out
}

pub(crate) fn check_cells(ii: &IntegralImage, r: Rect) -> Result<()> {
    check_rect(r, ii.width, ii.height)?;
    if r.w < 3 || r.h < 3 {
        return Err(Error::UndersizedRect(r));
    }
    Ok(())
}

/// Mean brightness of each of the nine cells of `r`, indexed `3 * row + col`.
/// Each mean uses the cell's own pixel count.
pub fn subregion_means(ii: &IntegralImage, r: Rect) -> Result<[f64; 9]> {
    check_cells(ii, r)?;
    let xs = thirds(r.x, r.w);
    let ys = thirds(r.y, r.h);
    let sums = cell_sums(ii, &xs, &ys);
    let areas = cell_areas(&xs, &ys);
    let mut out = [0.0; 9];
    for n in 0..9 {
        out[n] = sums[n] as f64 / areas[n] as f64;
    }
    Ok(out)
}
