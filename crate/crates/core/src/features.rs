//! Feature families evaluated on rectangles of an integral image.
//!
//! * **Census** (`cs`): the rectangle is split into a 3x3 grid of cells and
//!   each cell mean is compared with the mean of the whole rectangle. Bit
//!   `n = 3 * row + col` is set when the cell mean is at least the rectangle
//!   mean, giving a code in `0..512`. Because the rectangle can have any size
//!   and position inside the detector aperture, this is a non-local binary
//!   pattern rather than a pixel-neighbourhood one.
//! * **LBP** (`lbp`): the same grid, but the eight outer cells are compared
//!   with the centre cell, clockwise from the top-left, giving `0..256`.
//! * **Haar** (`haar`): signed difference of pixel sums over the white and
//!   black regions of one of five templates.
//!
//! All comparisons are done on integer sums (`sum_a * area_b >= sum_b *
//! area_a`), so codes are exact and independent of floating point rounding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{cell_areas, cell_sums, check_cells, check_rect, thirds, IntegralImage, Rect};

/// Number of distinct census codes.
pub const CENSUS_CODES: usize = 512;
/// Number of distinct LBP codes.
pub const LBP_CODES: usize = 256;

/// Outer cells of the 3x3 grid, clockwise from the top-left.
const LBP_RING: [usize; 8] = [0, 1, 2, 5, 8, 7, 6, 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureFamily {
    Cs,
    Lbp,
    Haar,
}

impl FeatureFamily {
    pub const ALL: [FeatureFamily; 3] = [FeatureFamily::Cs, FeatureFamily::Lbp, FeatureFamily::Haar];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureFamily::Cs => "cs",
            FeatureFamily::Lbp => "lbp",
            FeatureFamily::Haar => "haar",
        }
    }
}

impl fmt::Display for FeatureFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cs" | "census" => Ok(FeatureFamily::Cs),
            "lbp" => Ok(FeatureFamily::Lbp),
            "haar" => Ok(FeatureFamily::Haar),
            other => Err(Error::Config(format!("unknown feature family '{other}'"))),
        }
    }
}

/// The five canonical Haar layouts. White regions count positively.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HaarTemplate {
    /// Top half white, bottom half black.
    EdgeHorizontal,
    /// Left half white, right half black.
    EdgeVertical,
    /// Three horizontal bands: white, black, white.
    LineHorizontal,
    /// Three vertical stripes: white, black, white.
    LineVertical,
    /// 2x2 checkerboard, top-left and bottom-right white.
    Diagonal,
}

impl HaarTemplate {
    pub const ALL: [HaarTemplate; 5] = [
        HaarTemplate::EdgeHorizontal,
        HaarTemplate::EdgeVertical,
        HaarTemplate::LineHorizontal,
        HaarTemplate::LineVertical,
        HaarTemplate::Diagonal,
    ];

    /// Number of equal parts along (x, y).
    pub fn splits(&self) -> (usize, usize) {
        match self {
            HaarTemplate::EdgeHorizontal => (1, 2),
            HaarTemplate::EdgeVertical => (2, 1),
            HaarTemplate::LineHorizontal => (1, 3),
            HaarTemplate::LineVertical => (3, 1),
            HaarTemplate::Diagonal => (2, 2),
        }
    }

    /// White and black regions have equal area, so a constant offset cancels.
    pub fn is_balanced(&self) -> bool {
        !matches!(self, HaarTemplate::LineHorizontal | HaarTemplate::LineVertical)
    }

    #[inline]
    fn is_white(&self, col: usize, row: usize) -> bool {
        match self {
            HaarTemplate::EdgeHorizontal => row == 0,
            HaarTemplate::EdgeVertical => col == 0,
            HaarTemplate::LineHorizontal => row != 1,
            HaarTemplate::LineVertical => col != 1,
            HaarTemplate::Diagonal => col == row,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            HaarTemplate::EdgeHorizontal => "edge-horizontal",
            HaarTemplate::EdgeVertical => "edge-vertical",
            HaarTemplate::LineHorizontal => "line-horizontal",
            HaarTemplate::LineVertical => "line-vertical",
            HaarTemplate::Diagonal => "diagonal",
        }
    }
}

impl fmt::Display for HaarTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Census,
    Lbp,
    Haar(HaarTemplate),
}

impl FeatureKind {
    pub fn family(&self) -> FeatureFamily {
        match self {
            FeatureKind::Census => FeatureFamily::Cs,
            FeatureKind::Lbp => FeatureFamily::Lbp,
            FeatureKind::Haar(_) => FeatureFamily::Haar,
        }
    }
}

/// Detector window size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Aperture {
    pub width: usize,
    pub height: usize,
}

impl Aperture {
    /// Number-plate detector aperture.
    pub const NUMBER: Aperture = Aperture::new(54, 18);
    /// Digit detector aperture.
    pub const DIGIT: Aperture = Aperture::new(12, 24);
    /// Narrower aperture for the digit "1".
    pub const DIGIT_ONE: Aperture = Aperture::new(8, 24);

    pub const fn new(width: usize, height: usize) -> Self {
        Aperture { width, height }
    }

    /// Window covered by the aperture scaled by `scale` at (x, y).
    pub fn window(&self, x: usize, y: usize, scale: f64) -> Rect {
        Rect::new(x, y, scale_coord(self.width, scale), scale_coord(self.height, scale))
    }
}

impl fmt::Display for Aperture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl FromStr for Aperture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("aperture must look like WxH, got '{s}'"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Aperture::new(width, height))
    }
}

/// Scales an aperture-local coordinate, rounding half up.
#[inline]
pub fn scale_coord(v: usize, scale: f64) -> usize {
    if scale == 1.0 {
        v
    } else {
        (v as f64 * scale + 0.5).floor() as usize
    }
}

/// Placement of a scaled aperture on an image: top-left corner and scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub x: usize,
    pub y: usize,
    pub scale: f64,
}

impl Window {
    pub const fn at(x: usize, y: usize) -> Self {
        Window { x, y, scale: 1.0 }
    }

    pub const fn scaled(x: usize, y: usize, scale: f64) -> Self {
        Window { x, y, scale }
    }

    #[inline]
    fn map(&self, v: usize, origin: usize) -> usize {
        origin + scale_coord(v, self.scale)
    }

    #[inline]
    fn map_x(&self, bounds: [usize; 4]) -> [usize; 4] {
        bounds.map(|v| self.map(v, self.x))
    }

    #[inline]
    fn map_y(&self, bounds: [usize; 4]) -> [usize; 4] {
        bounds.map(|v| self.map(v, self.y))
    }
}

/// A feature rectangle in aperture-local coordinates plus its family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FeatureDescriptor {
    pub kind: FeatureKind,
    pub rect: Rect,
}

impl FeatureDescriptor {
    pub fn new(kind: FeatureKind, rect: Rect) -> Self {
        FeatureDescriptor { kind, rect }
    }

    /// Checks the geometry against an aperture.
    pub fn validate(&self, aperture: Aperture) -> Result<()> {
        check_rect(self.rect, aperture.width, aperture.height)?;
        match self.kind {
            FeatureKind::Census | FeatureKind::Lbp if self.rect.w < 3 || self.rect.h < 3 => {
                Err(Error::UndersizedRect(self.rect))
            }
            FeatureKind::Haar(t) => {
                let (sx, sy) = t.splits();
                if self.rect.w % sx != 0 || self.rect.h % sy != 0 {
                    Err(Error::IncompatibleTemplate {
                        rect: self.rect,
                        template: t,
                    })
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Integer code of a census or LBP feature inside `win`. The caller
    /// guarantees the window lies within the image.
    #[inline]
    pub fn code_at(&self, ii: &IntegralImage, win: Window) -> u16 {
        let xs = win.map_x(thirds(self.rect.x, self.rect.w));
        let ys = win.map_y(thirds(self.rect.y, self.rect.h));
        match self.kind {
            FeatureKind::Census => census_from_bounds(ii, &xs, &ys),
            FeatureKind::Lbp => lbp_from_bounds(ii, &xs, &ys),
            FeatureKind::Haar(_) => panic!("haar features have no integer code"),
        }
    }

    /// Mean-brightness contrast of a Haar feature inside `win`: mean over
    /// the white region minus mean over the black region. Unlike the raw
    /// sum difference this does not grow with the window scale.
    #[inline]
    pub fn contrast_at(&self, ii: &IntegralImage, win: Window) -> f64 {
        let FeatureKind::Haar(t) = self.kind else {
            panic!("contrast is only defined for haar features");
        };
        let (xs, ys) = haar_bounds(self.rect, t, win);
        let (white, black) = haar_sums(ii, t, &xs, &ys);
        let area_white = white.1 as f64;
        let area_black = black.1 as f64;
        white.0 as f64 / area_white - black.0 as f64 / area_black
    }
}

impl fmt::Display for FeatureDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FeatureKind::Census => write!(f, "cs{}", self.rect),
            FeatureKind::Lbp => write!(f, "lbp{}", self.rect),
            FeatureKind::Haar(t) => write!(f, "haar:{t}{}", self.rect),
        }
    }
}

#[inline]
fn census_from_bounds(ii: &IntegralImage, xs: &[usize; 4], ys: &[usize; 4]) -> u16 {
    let sums = cell_sums(ii, xs, ys);
    let areas = cell_areas(xs, ys);
    let total: i64 = sums.iter().sum();
    let total_area = ((xs[3] - xs[0]) * (ys[3] - ys[0])) as i64;
    let mut code = 0u16;
    for n in 0..9 {
        // cell mean >= rect mean, cross-multiplied
        if sums[n] * total_area >= total * areas[n] {
            code |= 1 << n;
        }
    }
    code
}

#[inline]
fn lbp_from_bounds(ii: &IntegralImage, xs: &[usize; 4], ys: &[usize; 4]) -> u16 {
    let sums = cell_sums(ii, xs, ys);
    let areas = cell_areas(xs, ys);
    let mut code = 0u16;
    for (k, &n) in LBP_RING.iter().enumerate() {
        if sums[n] * areas[4] >= sums[4] * areas[n] {
            code |= 1 << k;
        }
    }
    code
}

/// Census code of `r` (nine bits, cell 0 in the least significant bit).
pub fn census_code(ii: &IntegralImage, r: Rect) -> Result<u16> {
    check_cells(ii, r)?;
    Ok(census_from_bounds(ii, &thirds(r.x, r.w), &thirds(r.y, r.h)))
}

/// Non-local LBP code of `r` (eight bits, outer cells clockwise from the
/// top-left, first cell in the least significant bit).
pub fn lbp_code(ii: &IntegralImage, r: Rect) -> Result<u16> {
    check_cells(ii, r)?;
    Ok(lbp_from_bounds(ii, &thirds(r.x, r.w), &thirds(r.y, r.h)))
}

fn split_bounds(start: usize, len: usize, parts: usize) -> [usize; 4] {
    let step = len / parts;
    let mut b = [start + len; 4];
    for (i, v) in b.iter_mut().enumerate().take(parts) {
        *v = start + i * step;
    }
    b
}

#[inline]
fn haar_bounds(r: Rect, t: HaarTemplate, win: Window) -> ([usize; 4], [usize; 4]) {
    let (sx, sy) = t.splits();
    (
        win.map_x(split_bounds(r.x, r.w, sx)),
        win.map_y(split_bounds(r.y, r.h, sy)),
    )
}

/// (sum, area) over the white and black regions.
#[inline]
fn haar_sums(ii: &IntegralImage, t: HaarTemplate, xs: &[usize; 4], ys: &[usize; 4]) -> ((i64, i64), (i64, i64)) {
    let (sx, sy) = t.splits();
    let mut white = (0i64, 0i64);
    let mut black = (0i64, 0i64);
    for row in 0..sy {
        for col in 0..sx {
            let s = ii.sum_span(xs[col], ys[row], xs[col + 1], ys[row + 1]);
            let a = ((xs[col + 1] - xs[col]) * (ys[row + 1] - ys[row])) as i64;
            let acc = if t.is_white(col, row) { &mut white } else { &mut black };
            acc.0 += s;
            acc.1 += a;
        }
    }
    (white, black)
}

/// Sum over the white region minus sum over the black region.
pub fn haar_response(ii: &IntegralImage, r: Rect, template: HaarTemplate) -> Result<i64> {
    check_rect(r, ii.width(), ii.height())?;
    let (sx, sy) = template.splits();
    if r.w % sx != 0 || r.h % sy != 0 {
        return Err(Error::IncompatibleTemplate { rect: r, template });
    }
    let (xs, ys) = haar_bounds(r, template, Window::at(0, 0));
    let (white, black) = haar_sums(ii, template, &xs, &ys);
    Ok(white.0 - black.0)
}

/// Position/size lattice used to enumerate features inside an aperture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Lattice {
    pub stride: usize,
    pub min_size: usize,
    pub size_step: usize,
}

impl Default for Lattice {
    fn default() -> Self {
        Lattice {
            stride: 1,
            min_size: 3,
            size_step: 3,
        }
    }
}

/// Enumerates every feature of `family` that fits `aperture` on `lattice`.
///
/// Census and LBP rectangles take widths and heights `min_size,
/// min_size + size_step, ...`. Haar rectangles take multiples of the
/// template's split count along split axes and the census sizes along
/// unsplit axes. Positions step by `stride`. The order is deterministic:
/// template, height, width, y, x.
pub fn enumerate_features(aperture: Aperture, family: FeatureFamily, lattice: Lattice) -> Result<Vec<FeatureDescriptor>> {
    if lattice.stride == 0 || lattice.size_step == 0 {
        return Err(Error::Config("stride and size step must be at least 1".into()));
    }
    if family != FeatureFamily::Haar && lattice.min_size < 3 {
        return Err(Error::Config("census and lbp features need min_size >= 3".into()));
    }
    if lattice.min_size == 0 {
        return Err(Error::Config("min_size must be at least 1".into()));
    }
    let lattice_sizes = |limit: usize| -> Vec<usize> {
        (lattice.min_size..=limit).step_by(lattice.size_step).collect()
    };
    let split_sizes = |parts: usize, limit: usize| -> Vec<usize> {
        (parts..=limit).step_by(parts).collect()
    };

    let kinds: Vec<FeatureKind> = match family {
        FeatureFamily::Cs => vec![FeatureKind::Census],
        FeatureFamily::Lbp => vec![FeatureKind::Lbp],
        FeatureFamily::Haar => HaarTemplate::ALL.iter().map(|&t| FeatureKind::Haar(t)).collect(),
    };
    let mut out = Vec::new();
    for kind in kinds {
        let (widths, heights) = match kind {
            FeatureKind::Haar(t) => {
                let (sx, sy) = t.splits();
                let w = if sx > 1 { split_sizes(sx, aperture.width) } else { lattice_sizes(aperture.width) };
                let h = if sy > 1 { split_sizes(sy, aperture.height) } else { lattice_sizes(aperture.height) };
                (w, h)
            }
            _ => (lattice_sizes(aperture.width), lattice_sizes(aperture.height)),
        };
        for &h in &heights {
            for &w in &widths {
                for y in (0..=aperture.height - h).step_by(lattice.stride) {
                    for x in (0..=aperture.width - w).step_by(lattice.stride) {
                        out.push(FeatureDescriptor::new(kind, Rect::new(x, y, w, h)));
                    }
                }
            }
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "aperture {aperture} admits no {family} feature with min_size {}",
            lattice.min_size
        )));
    }
    Ok(out)
}

/// Sliding-window lattice over a frame: a scale pyramid starting at
/// `min_scale` and growing by `scale_step`, and at each scale top-left
/// corners on a grid of `stride` pixels (scaled with the window).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanGrid {
    pub stride: usize,
    pub scale_step: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for ScanGrid {
    fn default() -> Self {
        ScanGrid {
            stride: 2,
            scale_step: 1.25,
            min_scale: 1.0,
            max_scale: 16.0,
        }
    }
}

impl ScanGrid {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if !(self.scale_step > 1.0) || !self.scale_step.is_finite() {
            return Err(Error::Config("scale_step must be > 1".into()));
        }
        if !(self.min_scale >= 1.0) || !(self.max_scale >= self.min_scale) || !self.max_scale.is_finite() {
            return Err(Error::Config("need 1 <= min_scale <= max_scale".into()));
        }
        Ok(())
    }

    /// Scales whose scaled aperture fits a `width` x `height` frame.
    pub fn scales(&self, aperture: Aperture, width: usize, height: usize) -> Vec<f64> {
        let mut out = Vec::new();
        for k in 0.. {
            let s = self.min_scale * self.scale_step.powi(k);
            if s > self.max_scale * (1.0 + 1e-12) {
                break;
            }
            let r = aperture.window(0, 0, s);
            if r.w > width || r.h > height {
                break;
            }
            out.push(s);
        }
        out
    }

    /// Lattice step at `scale`.
    pub fn step(&self, scale: f64) -> usize {
        scale_coord(self.stride, scale).max(1)
    }

    /// Column (or row) positions of windows of extent `extent` along an
    /// axis of length `len`.
    pub fn positions(&self, scale: f64, extent: usize, len: usize) -> impl Iterator<Item = usize> {
        let last = len.checked_sub(extent);
        (0..last.map_or(0, |l| l + 1)).step_by(self.step(scale))
    }

    /// Every lattice window at `scale`, row by row.
    pub fn windows(&self, aperture: Aperture, width: usize, height: usize, scale: f64) -> Vec<Rect> {
        let proto = aperture.window(0, 0, scale);
        let xs: Vec<usize> = self.positions(scale, proto.w, width).collect();
        self.positions(scale, proto.h, height)
            .flat_map(|y| xs.iter().map(move |&x| Rect::new(x, y, proto.w, proto.h)))
            .collect()
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    //! Pixel-loop reference implementations, independent of the integral
    //! image and of the cross-multiplied comparisons above.

    use crate::imaging::{GrayImage, Rect};

    pub fn cell_ranges(start: usize, len: usize) -> [(usize, usize); 3] {
        let c = len / 3;
        [(start, start + c), (start + c, start + 2 * c), (start + 2 * c, start + len)]
    }

    pub fn mean(img: &GrayImage, x0: usize, x1: usize, y0: usize, y1: usize) -> f64 {
        let mut s = 0u64;
        for y in y0..y1 {
            for x in x0..x1 {
                s += img.get(x, y) as u64;
            }
        }
        s as f64 / ((x1 - x0) * (y1 - y0)) as f64
    }

    pub fn cell_means(img: &GrayImage, r: Rect) -> [f64; 9] {
        let cols = cell_ranges(r.x, r.w);
        let rows = cell_ranges(r.y, r.h);
        let mut out = [0.0; 9];
        for (ri, &(y0, y1)) in rows.iter().enumerate() {
            for (ci, &(x0, x1)) in cols.iter().enumerate() {
                out[ri * 3 + ci] = mean(img, x0, x1, y0, y1);
            }
        }
        out
    }

    /// Means are compared as exact rationals via u128 cross products to avoid
    /// false mismatches on ties.
    fn ge(img: &GrayImage, a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
        let sum = |(x0, x1, y0, y1): (usize, usize, usize, usize)| {
            let mut s = 0u128;
            for y in y0..y1 {
                for x in x0..x1 {
                    s += img.get(x, y) as u128;
                }
            }
            (s, ((x1 - x0) * (y1 - y0)) as u128)
        };
        let (sa, aa) = sum(a);
        let (sb, ab) = sum(b);
        sa * ab >= sb * aa
    }

    fn cells(r: Rect) -> Vec<(usize, usize, usize, usize)> {
        let cols = cell_ranges(r.x, r.w);
        let rows = cell_ranges(r.y, r.h);
        let mut v = Vec::new();
        for &(y0, y1) in &rows {
            for &(x0, x1) in &cols {
                v.push((x0, x1, y0, y1));
            }
        }
        v
    }

    pub fn census(img: &GrayImage, r: Rect) -> u16 {
        let whole = (r.x, r.right(), r.y, r.bottom());
        let mut bits = [0u16; 9];
        for (n, c) in cells(r).into_iter().enumerate() {
            bits[n] = ge(img, c, whole) as u16;
        }
        bits.iter().enumerate().map(|(n, b)| b << n).sum()
    }

    pub fn lbp(img: &GrayImage, r: Rect) -> u16 {
        let c = cells(r);
        // clockwise from top-left as (row, col)
        let ring = [(0, 0), (0, 1), (0, 2), (1, 2), (2, 2), (2, 1), (2, 0), (1, 0)];
        let mut code = 0u16;
        for (k, (row, col)) in ring.into_iter().enumerate() {
            if ge(img, c[row * 3 + col], c[4]) {
                code |= 1 << k;
            }
        }
        code
    }

    pub fn haar(img: &GrayImage, r: Rect, t: super::HaarTemplate) -> i64 {
        let mut resp = 0i64;
        for y in r.y..r.bottom() {
            for x in r.x..r.right() {
                let (sx, sy) = t.splits();
                let col = (x - r.x) / (r.w / sx);
                let row = (y - r.y) / (r.h / sy);
                let v = img.get(x, y) as i64;
                if t.is_white(col, row) {
                    resp += v;
                } else {
                    resp -= v;
                }
            }
        }
        resp
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::GrayImage;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_rect(rng: &mut impl Rng, w: usize, h: usize, min: usize) -> Rect {
        let rw = rng.random_range(min..=w);
        let rh = rng.random_range(min..=h);
        Rect::new(rng.random_range(0..=w - rw), rng.random_range(0..=h - rh), rw, rh)
    }

    #[test]
    fn subregion_means_match_pixel_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let img = GrayImage::from_fn(20, 16, |_, _| rng.random());
            let ii = IntegralImage::new(&img);
            let r = random_rect(&mut rng, 20, 16, 3);
            let got = crate::imaging::subregion_means(&ii, r).unwrap();
            let want = oracle::cell_means(&img, r);
            for (g, w) in got.iter().zip(want) {
                assert!((g - w).abs() < 1e-9, "{r}");
            }
        }
    }

    #[test]
    fn census_constant_image_sets_all_bits() {
        let ii = IntegralImage::new(&GrayImage::filled(10, 10, 77));
        assert_eq!(census_code(&ii, Rect::new(1, 2, 7, 5)).unwrap(), 511);
        assert_eq!(lbp_code(&ii, Rect::new(1, 2, 7, 5)).unwrap(), 255);
    }

    #[test]
    fn census_dark_centre() {
        let img = GrayImage::new(3, 3, vec![9, 9, 9, 9, 0, 9, 9, 9, 9]).unwrap();
        let ii = IntegralImage::new(&img);
        assert_eq!(census_code(&ii, img.bounds()).unwrap(), 495);
        assert_eq!(oracle::census(&img, img.bounds()), 495);
        assert_eq!(lbp_code(&ii, img.bounds()).unwrap(), 255);
        assert_eq!(oracle::lbp(&img, img.bounds()), 255);
    }

    #[test]
    fn lbp_bit_order_is_clockwise() {
        // only the right-middle cell is bright -> ring position 3
        let mut img = GrayImage::filled(3, 3, 0);
        img.set(1, 1, 5);
        img.set(2, 1, 9);
        let ii = IntegralImage::new(&img);
        assert_eq!(lbp_code(&ii, img.bounds()).unwrap(), 1 << 3);
        // census: bit 5 (row 1, col 2) and the centre (bit 4, 5 >= 14/9)
        assert_eq!(census_code(&ii, img.bounds()).unwrap(), (1 << 5) | (1 << 4));
    }

    #[test]
    fn codes_match_oracle_on_random_rects() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..40 {
            let (w, h) = (rng.random_range(3..30), rng.random_range(3..30));
            // coarse levels create ties
            let levels = rng.random_range(2..=256u32);
            let img = GrayImage::from_fn(w, h, |_, _| (rng.random_range(0..levels) * 255 / (levels - 1)) as u8);
            let ii = IntegralImage::new(&img);
            for _ in 0..50 {
                let r = random_rect(&mut rng, w, h, 3);
                let cs = census_code(&ii, r).unwrap();
                let lbp = lbp_code(&ii, r).unwrap();
                assert!(cs < 512 && lbp < 256);
                assert_eq!(cs, oracle::census(&img, r), "census {r}");
                assert_eq!(lbp, oracle::lbp(&img, r), "lbp {r}");
            }
        }
    }

    #[test]
    fn undersized_rects_rejected() {
        let ii = IntegralImage::new(&GrayImage::filled(5, 5, 1));
        assert!(matches!(census_code(&ii, Rect::new(0, 0, 2, 5)), Err(Error::UndersizedRect(_))));
        assert!(matches!(lbp_code(&ii, Rect::new(0, 0, 5, 2)), Err(Error::UndersizedRect(_))));
        assert!(matches!(census_code(&ii, Rect::new(3, 0, 3, 3)), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn haar_constant_image_cancels() {
        let ii = IntegralImage::new(&GrayImage::filled(12, 12, 100));
        assert_eq!(haar_response(&ii, Rect::new(0, 0, 6, 4), HaarTemplate::EdgeHorizontal).unwrap(), 0);
        assert_eq!(haar_response(&ii, Rect::new(2, 2, 4, 4), HaarTemplate::Diagonal).unwrap(), 0);
    }

    #[test]
    fn haar_step_edge() {
        let img = GrayImage::from_fn(8, 6, |x, _| if x < 4 { 255 } else { 0 });
        let ii = IntegralImage::new(&img);
        let r = img.bounds();
        assert_eq!(haar_response(&ii, r, HaarTemplate::EdgeVertical).unwrap(), 255 * 48 / 2);
        assert_eq!(haar_response(&ii, r, HaarTemplate::EdgeHorizontal).unwrap(), 0);
    }

    #[test]
    fn haar_rejects_indivisible_rects() {
        let ii = IntegralImage::new(&GrayImage::filled(9, 9, 1));
        assert!(matches!(
            haar_response(&ii, Rect::new(0, 0, 5, 4), HaarTemplate::EdgeVertical),
            Err(Error::IncompatibleTemplate { .. })
        ));
        assert!(haar_response(&ii, Rect::new(0, 0, 4, 4), HaarTemplate::LineVertical).is_err());
    }

    #[test]
    fn haar_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let img = GrayImage::from_fn(24, 24, |_, _| rng.random());
        let ii = IntegralImage::new(&img);
        for t in HaarTemplate::ALL {
            let (sx, sy) = t.splits();
            for _ in 0..100 {
                let w = sx * rng.random_range(1..=24 / sx);
                let h = sy * rng.random_range(1..=24 / sy);
                let r = Rect::new(rng.random_range(0..=24 - w), rng.random_range(0..=24 - h), w, h);
                assert_eq!(haar_response(&ii, r, t).unwrap(), oracle::haar(&img, r, t));
            }
        }
    }

    #[test]
    fn haar_contrast_is_mean_difference() {
        let img = GrayImage::from_fn(6, 6, |x, _| if x < 2 { 200 } else if x < 4 { 50 } else { 100 });
        let ii = IntegralImage::new(&img);
        let f = FeatureDescriptor::new(FeatureKind::Haar(HaarTemplate::LineVertical), img.bounds());
        assert!((f.contrast_at(&ii, Window::at(0, 0)) - (150.0 - 50.0)).abs() < 1e-12);
    }

    #[test]
    fn enumerate_small_apertures() {
        let one = enumerate_features(Aperture::new(3, 3), FeatureFamily::Cs, Lattice::default()).unwrap();
        assert_eq!(one, vec![FeatureDescriptor::new(FeatureKind::Census, Rect::new(0, 0, 3, 3))]);

        let lat = Lattice { stride: 1, min_size: 3, size_step: 1 };
        let three = enumerate_features(Aperture::new(4, 3), FeatureFamily::Cs, lat).unwrap();
        let rects: Vec<Rect> = three.iter().map(|f| f.rect).collect();
        assert_eq!(rects, vec![Rect::new(0, 0, 3, 3), Rect::new(1, 0, 3, 3), Rect::new(0, 0, 4, 3)]);

        assert!(enumerate_features(Aperture::new(2, 8), FeatureFamily::Cs, Lattice::default()).is_err());
        let bad = Lattice { min_size: 2, ..Lattice::default() };
        assert!(enumerate_features(Aperture::new(8, 8), FeatureFamily::Lbp, bad).is_err());
    }

    #[test]
    fn enumerate_digit_aperture_matches_nested_loops() {
        let ap = Aperture::DIGIT;
        for lat in [Lattice::default(), Lattice { stride: 2, min_size: 3, size_step: 1 }] {
            let got = enumerate_features(ap, FeatureFamily::Cs, lat).unwrap();
            let mut want = 0;
            for h in 1..=ap.height {
                for w in 1..=ap.width {
                    if w < lat.min_size || h < lat.min_size {
                        continue;
                    }
                    if (w - lat.min_size) % lat.size_step != 0 || (h - lat.min_size) % lat.size_step != 0 {
                        continue;
                    }
                    for y in 0..ap.height {
                        for x in 0..ap.width {
                            if x % lat.stride == 0 && y % lat.stride == 0 && x + w <= ap.width && y + h <= ap.height {
                                want += 1;
                            }
                        }
                    }
                }
            }
            assert_eq!(got.len(), want);
            let mut dedup = got.clone();
            dedup.sort();
            dedup.dedup();
            assert_eq!(dedup.len(), got.len());
            assert!(got.iter().all(|f| f.validate(ap).is_ok()));
        }
        assert_eq!(enumerate_features(ap, FeatureFamily::Cs, Lattice::default()).unwrap().len(), 2024);
    }

    #[test]
    fn haar_enumeration_respects_divisibility() {
        let feats = enumerate_features(Aperture::DIGIT, FeatureFamily::Haar, Lattice::default()).unwrap();
        assert!(feats.iter().all(|f| f.validate(Aperture::DIGIT).is_ok()));
        for t in HaarTemplate::ALL {
            assert!(feats.iter().any(|f| f.kind == FeatureKind::Haar(t)));
        }
    }

    #[test]
    fn scaled_window_at_unit_scale_matches_rect_code() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let img = GrayImage::from_fn(40, 40, |_, _| rng.random());
        let ii = IntegralImage::new(&img);
        let f = FeatureDescriptor::new(FeatureKind::Census, Rect::new(2, 3, 7, 5));
        assert_eq!(f.code_at(&ii, Window::at(5, 6)), census_code(&ii, f.rect.translate(5, 6)).unwrap());
        // scale 2 doubles every cell boundary
        let s = f.code_at(&ii, Window::scaled(1, 1, 2.0));
        let xs = thirds(2, 7).map(|v| 1 + 2 * v);
        let ys = thirds(3, 5).map(|v| 1 + 2 * v);
        assert_eq!(s, census_from_bounds(&ii, &xs, &ys));
    }

    #[test]
    fn aperture_parse() {
        assert_eq!("54x18".parse::<Aperture>().unwrap(), Aperture::NUMBER);
        assert!("54".parse::<Aperture>().is_err());
        assert!("0x4".parse::<Aperture>().is_err());
        assert_eq!(Aperture::DIGIT.window(3, 4, 1.5), Rect::new(3, 4, 18, 36));
    }
}
