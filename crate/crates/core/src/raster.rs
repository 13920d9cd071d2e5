//! Heatmap construction and decoding.
//!
//! PoGs are mapped into a small H x W grid (default 72 x 128) by scaling
//! the screen pixel extent, quantized to the nearest cell. A per-sample
//! map is a peak-normalized isotropic Gaussian stamped at that cell; a
//! history map plots every valid point, joins consecutive points (in
//! random visit order) with digital line segments, then blurs with the
//! same fixed-variance Gaussian and renormalizes the peak to 1.

use alloc::vec;
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::geometry::{PoG, ScreenSpec};
use crate::math;
use crate::rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Heatmap raster dimensions and the Gaussian sigma, in grid cells.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct HeatmapSpec {
    pub h: usize,
    pub w: usize,
    pub sigma: f64,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        Self { h: 72, w: 128, sigma: 1.5 }
    }
}

impl HeatmapSpec {
    /// Continuous grid coordinates (col, row) of a PoG.
    pub fn grid_coords(&self, p: &PoG, s: &ScreenSpec) -> (f64, f64) {
        let px = p.to_px(s);
        (
            px.x * self.w as f64 / s.width_px as f64,
            px.y * self.h as f64 / s.height_px as f64,
        )
    }

    /// Nearest grid cell (col, row) of a PoG; may be out of bounds.
    pub fn grid_cell(&self, p: &PoG, s: &ScreenSpec) -> (i64, i64) {
        let (gx, gy) = self.grid_coords(p, s);
        (math::round(gx) as i64, math::round(gy) as i64)
    }

    /// Maps a grid cell back to screen cm (inverse of the lattice map).
    pub fn cell_to_cm(&self, col: usize, row: usize, s: &ScreenSpec) -> PoG {
        PoG::px(
            col as f64 * s.width_px as f64 / self.w as f64,
            row as f64 * s.height_px as f64 / self.h as f64,
        )
        .to_cm(s)
    }

    /// One-cell pitch expressed in cm, per axis.
    pub fn cell_pitch_cm(&self, s: &ScreenSpec) -> (f64, f64) {
        (s.width_cm / self.w as f64, s.height_cm / self.h as f64)
    }
}

/// H x W grid of values in [0, 1], row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Heatmap {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Heatmap {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { h, w, data: vec![0.0; h * w] }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.w + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.w + col] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn peak(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// Position of the maximum, (row, col); ties break to the smallest
    /// (row, col) lexicographically, i.e. the first in row-major order.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0usize;
        for (i, v) in self.data.iter().enumerate() {
            if *v > self.data[best] {
                best = i;
            }
        }
        (best / self.w, best % self.w)
    }

    pub fn is_constant(&self) -> bool {
        self.data.windows(2).all(|w| w[0] == w[1])
    }

    fn normalize_peak(&mut self) {
        let peak = self.peak();
        if peak > 0.0 {
            for v in &mut self.data {
                *v /= peak;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterError {
    /// Decode over an all-equal map has no meaningful argmax.
    DegenerateHeatmap,
}

impl core::fmt::Display for RasterError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::DegenerateHeatmap => f.write_str("heatmap is constant; nothing to decode"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for RasterError {}

// Gaussian tails are stamped out to this many sigmas; beyond that the
// contribution underflows well past any tolerance used here.
const KERNEL_RADIUS_SIGMAS: f64 = 6.0;

fn kernel_radius(sigma: f64) -> i64 {
    math::ceil(KERNEL_RADIUS_SIGMAS * sigma) as i64
}

/// Rasterizes a single PoG: a peak-normalized Gaussian centered at the
/// point's nearest grid cell. Points mapping outside the grid leave the
/// (near-)zero tail only; far-away points produce an all-zero map.
pub fn rasterize_point(p: &PoG, s: &ScreenSpec, hspec: &HeatmapSpec) -> Heatmap {
    let mut map = Heatmap::zeros(hspec.h, hspec.w);
    let (cx, cy) = hspec.grid_cell(p, s);
    stamp_gaussian(&mut map, cx, cy, hspec.sigma);
    map
}

fn stamp_gaussian(map: &mut Heatmap, cx: i64, cy: i64, sigma: f64) {
    let r = kernel_radius(sigma);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let row_lo = (cy - r).max(0);
    let row_hi = (cy + r).min(map.h as i64 - 1);
    let col_lo = (cx - r).max(0);
    let col_hi = (cx + r).min(map.w as i64 - 1);
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            let dx = (col - cx) as f64;
            let dy = (row - cy) as f64;
            let v = math::exp(-(dx * dx + dy * dy) * inv);
            let cell = map.get(row as usize, col as usize);
            if v > cell {
                map.set(row as usize, col as usize, v);
            }
        }
    }
}

/// True iff cell `c`'s center lies within half a cell of the segment
/// between cell centers `a` and `b`. Exact in integer arithmetic; with
/// integer endpoints the distance can never equal 1/2 exactly, so there
/// are no boundary ties.
pub fn cell_on_segment(c: (i64, i64), a: (i64, i64), b: (i64, i64)) -> bool {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let (ex, ey) = (c.0 - a.0, c.1 - a.1);
    let len2 = dx * dx + dy * dy;
    if len2 == 0 {
        return c == a;
    }
    let t = ex * dx + ey * dy;
    if t <= 0 {
        return c == a;
    }
    if t >= len2 {
        return c == b;
    }
    let cross = dx * ey - dy * ex;
    4 * cross * cross <= len2
}

fn plot_cell(map: &mut Heatmap, cell: (i64, i64)) {
    if cell.0 >= 0 && cell.0 < map.w as i64 && cell.1 >= 0 && cell.1 < map.h as i64 {
        map.set(cell.1 as usize, cell.0 as usize, 1.0);
    }
}

/// Sets to 1 every in-grid cell whose center lies within half a cell of
/// the segment between cell centers `a` and `b` (a digital line of unit
/// width). Scans along the major axis with a two-to-three candidate
/// window per step; membership itself is the exact integer test.
fn draw_segment(map: &mut Heatmap, a: (i64, i64), b: (i64, i64)) {
    plot_cell(map, a);
    plot_cell(map, b);
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    if dx == 0 && dy == 0 {
        return;
    }
    if dx.abs() >= dy.abs() {
        let (from, to) = if a.0 <= b.0 { (a, b) } else { (b, a) };
        let slope = (to.1 - from.1) as f64 / (to.0 - from.0) as f64;
        let x_lo = from.0.max(0);
        let x_hi = to.0.min(map.w as i64 - 1);
        for x in x_lo..=x_hi {
            let ideal = from.1 as f64 + (x - from.0) as f64 * slope;
            let y_lo = (math::floor(ideal) as i64 - 1).max(0);
            let y_hi = (math::ceil(ideal) as i64 + 1).min(map.h as i64 - 1);
            for y in y_lo..=y_hi {
                if cell_on_segment((x, y), a, b) {
                    map.set(y as usize, x as usize, 1.0);
                }
            }
        }
    } else {
        let (from, to) = if a.1 <= b.1 { (a, b) } else { (b, a) };
        let slope = (to.0 - from.0) as f64 / (to.1 - from.1) as f64;
        let y_lo = from.1.max(0);
        let y_hi = to.1.min(map.h as i64 - 1);
        for y in y_lo..=y_hi {
            let ideal = from.0 as f64 + (y - from.1) as f64 * slope;
            let x_lo = (math::floor(ideal) as i64 - 1).max(0);
            let x_hi = (math::ceil(ideal) as i64 + 1).min(map.w as i64 - 1);
            for x in x_lo..=x_hi {
                if cell_on_segment((x, y), a, b) {
                    map.set(y as usize, x as usize, 1.0);
                }
            }
        }
    }
}

/// The binary pre-blur history map: valid points plotted in a random
/// visit order with the trajectory segment between each consecutive
/// pair drawn at value 1. Invalid points never contribute; an empty
/// valid set yields a zero map.
pub fn rasterize_history_binary<R: RngCore + ?Sized>(
    points: &[(PoG, bool)],
    s: &ScreenSpec,
    hspec: &HeatmapSpec,
    rng_handle: &mut R,
) -> Heatmap {
    let mut map = Heatmap::zeros(hspec.h, hspec.w);
    let mut cells: Vec<(i64, i64)> = points
        .iter()
        .filter(|(_, b)| *b)
        .map(|(p, _)| hspec.grid_cell(p, s))
        .collect();
    if cells.is_empty() {
        return map;
    }
    rng::shuffle(rng_handle, &mut cells);
    plot_cell(&mut map, cells[0]);
    for pair in cells.windows(2) {
        draw_segment(&mut map, pair[0], pair[1]);
    }
    map
}

/// Full history heatmap: the binary trajectory map blurred with the
/// fixed-variance Gaussian and peak-renormalized to 1.
pub fn rasterize_history<R: RngCore + ?Sized>(
    points: &[(PoG, bool)],
    s: &ScreenSpec,
    hspec: &HeatmapSpec,
    rng_handle: &mut R,
) -> Heatmap {
    let binary = rasterize_history_binary(points, s, hspec, rng_handle);
    let mut blurred = gaussian_blur(&binary, hspec.sigma);
    blurred.normalize_peak();
    blurred
}

/// Convolves with a truncated peak-normalized Gaussian, separably.
/// Stamping a lone cell therefore reproduces [`rasterize_point`]'s
/// kernel exactly.
pub fn gaussian_blur(map: &Heatmap, sigma: f64) -> Heatmap {
    let r = kernel_radius(sigma);
    let inv = 1.0 / (2.0 * sigma * sigma);
    let taps: Vec<f64> = (-r..=r).map(|d| math::exp(-((d * d) as f64) * inv)).collect();

    let (h, w) = (map.h, map.w);
    // horizontal pass
    let mut tmp = Heatmap::zeros(h, w);
    for row in 0..h {
        for col in 0..w {
            let v = map.get(row, col);
            if v == 0.0 {
                continue;
            }
            let lo = (col as i64 - r).max(0);
            let hi = (col as i64 + r).min(w as i64 - 1);
            for c in lo..=hi {
                let tap = taps[(c - col as i64 + r) as usize];
                let cur = tmp.get(row, c as usize);
                tmp.set(row, c as usize, cur + v * tap);
            }
        }
    }
    // vertical pass
    let mut out = Heatmap::zeros(h, w);
    for col in 0..w {
        for row in 0..h {
            let v = tmp.get(row, col);
            if v == 0.0 {
                continue;
            }
            let lo = (row as i64 - r).max(0);
            let hi = (row as i64 + r).min(h as i64 - 1);
            for rr in lo..=hi {
                let tap = taps[(rr - row as i64 + r) as usize];
                let cur = out.get(rr as usize, col);
                out.set(rr as usize, col, cur + v * tap);
            }
        }
    }
    out
}

/// Decodes a heatmap to a PoG in cm: the argmax cell (softmax is
/// monotone, so the raw argmax is the softmax argmax) mapped back
/// through the grid -> px -> cm chain. Ties break to the smallest
/// (row, col).
pub fn decode(h: &Heatmap, s: &ScreenSpec, hspec: &HeatmapSpec) -> Result<PoG, RasterError> {
    if h.is_constant() {
        return Err(RasterError::DegenerateHeatmap);
    }
    let (row, col) = h.argmax();
    Ok(hspec.cell_to_cm(col, row, s))
}

/// [`decode`] with sub-cell refinement: the argmax cell is shifted by
/// the intensity centroid of its 3x3 neighborhood. Cuts the grid
/// quantization error of plain argmax by several times on smooth
/// (blurred) maps while agreeing with it on which cell peaks.
pub fn decode_subcell(h: &Heatmap, s: &ScreenSpec, hspec: &HeatmapSpec) -> Result<PoG, RasterError> {
    if h.is_constant() {
        return Err(RasterError::DegenerateHeatmap);
    }
    let (row, col) = h.argmax();
    let mut wsum = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for r in row.saturating_sub(1)..=(row + 1).min(h.h - 1) {
        for c in col.saturating_sub(1)..=(col + 1).min(h.w - 1) {
            let v = h.get(r, c);
            wsum += v;
            dx += v * (c as f64 - col as f64);
            dy += v * (r as f64 - row as f64);
        }
    }
    if wsum <= 0.0 {
        return Ok(hspec.cell_to_cm(col, row, s));
    }
    let (px, py) = hspec.cell_pitch_cm(s);
    let base = hspec.cell_to_cm(col, row, s);
    Ok(PoG::cm(base.x + px * dx / wsum, base.y + py * dy / wsum))
}
