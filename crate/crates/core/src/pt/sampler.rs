//! Affine grid generation and bilinear sampling over normalized
//! [-1, 1]^2 coordinates, with the analytic gradient to the affine
//! parameters.
//!
//! The grid is align-corners style: column j maps to 2j/(W-1) - 1. For
//! each output cell the affine gives the source location; values are
//! read bilinearly with zero padding outside the input.

use crate::affine::AffineParams;
use crate::math;
use crate::raster::Heatmap;

use super::net::Tensor;

#[inline]
fn norm_coord(i: usize, n: usize) -> f64 {
    debug_assert!(n >= 2);
    2.0 * i as f64 / (n - 1) as f64 - 1.0
}

#[inline]
fn to_pixel(v: f64, n: usize) -> f64 {
    (v + 1.0) * (n - 1) as f64 / 2.0
}

#[inline]
fn read(input: &Tensor, c: usize, y: i64, x: i64) -> f64 {
    if y < 0 || x < 0 || y >= input.h as i64 || x >= input.w as i64 {
        0.0
    } else {
        input.get(c, y as usize, x as usize)
    }
}

/// Bilinear value of channel `c` at fractional pixel (fx, fy); zero
/// outside the input.
#[inline]
fn bilinear(input: &Tensor, c: usize, fx: f64, fy: f64) -> f64 {
    let x0 = math::floor(fx) as i64;
    let y0 = math::floor(fy) as i64;
    let wx = fx - x0 as f64;
    let wy = fy - y0 as f64;
    let v00 = read(input, c, y0, x0);
    let v01 = read(input, c, y0, x0 + 1);
    let v10 = read(input, c, y0 + 1, x0);
    let v11 = read(input, c, y0 + 1, x0 + 1);
    (1.0 - wy) * ((1.0 - wx) * v00 + wx * v01) + wy * ((1.0 - wx) * v10 + wx * v11)
}

/// Warps every channel of `input` by `theta` (normalized-coordinate
/// affine). Bit-exact identity for the identity theta; the generic
/// path would otherwise smear single ulps of bilinear round-off over
/// the lattice.
pub fn warp_tensor(input: &Tensor, theta: &AffineParams) -> Tensor {
    if *theta == AffineParams::identity() {
        return input.clone();
    }
    let mut out = Tensor::zeros(input.c, input.h, input.w);
    for oy in 0..input.h {
        let yn = norm_coord(oy, input.h);
        for ox in 0..input.w {
            let xn = norm_coord(ox, input.w);
            let (xs, ys) = theta.apply(xn, yn);
            let fx = to_pixel(xs, input.w);
            let fy = to_pixel(ys, input.h);
            for c in 0..input.c {
                out.set(c, oy, ox, bilinear(input, c, fx, fy));
            }
        }
    }
    out
}

/// Single-channel convenience wrapper around [`warp_tensor`].
pub fn warp(input: &Heatmap, theta: &AffineParams) -> Heatmap {
    let t = Tensor::from_channels(&[input]);
    let mut out = Heatmap::zeros(input.h(), input.w());
    out.data_mut().copy_from_slice(&warp_tensor(&t, theta).data);
    out
}

/// Accumulates dL/dtheta for a warp of channel `c`, given dL/d(output
/// cell) over the warped channel. Gradients are exact in the interior
/// of bilinear cells (the sampler is piecewise linear in the source
/// location).
pub(crate) fn accumulate_theta_grad(
    input: &Tensor,
    c: usize,
    theta: &AffineParams,
    grad_out: &Heatmap,
    grad_theta: &mut [f64; 6],
) {
    for oy in 0..input.h {
        let yn = norm_coord(oy, input.h);
        for ox in 0..input.w {
            let g = grad_out.get(oy, ox);
            if g == 0.0 {
                continue;
            }
            let xn = norm_coord(ox, input.w);
            let (xs, ys) = theta.apply(xn, yn);
            let fx = to_pixel(xs, input.w);
            let fy = to_pixel(ys, input.h);
            let x0 = math::floor(fx) as i64;
            let y0 = math::floor(fy) as i64;
            let wx = fx - x0 as f64;
            let wy = fy - y0 as f64;
            let v00 = read(input, c, y0, x0);
            let v01 = read(input, c, y0, x0 + 1);
            let v10 = read(input, c, y0 + 1, x0);
            let v11 = read(input, c, y0 + 1, x0 + 1);
            let dval_dfx = (1.0 - wy) * (v01 - v00) + wy * (v11 - v10);
            let dval_dfy = (1.0 - wx) * (v10 - v00) + wx * (v11 - v01);
            let gx = g * dval_dfx * (input.w - 1) as f64 / 2.0;
            let gy = g * dval_dfy * (input.h - 1) as f64 / 2.0;
            grad_theta[0] += gx * xn;
            grad_theta[1] += gx * yn;
            grad_theta[2] += gx;
            grad_theta[3] += gy * xn;
            grad_theta[4] += gy * yn;
            grad_theta[5] += gy;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PoG, ScreenSpec};
    use crate::raster::{rasterize_point, HeatmapSpec};

    #[test]
    fn identity_warp_is_exact() {
        let hs = HeatmapSpec { h: 24, w: 32, sigma: 1.5 };
        let map = rasterize_point(&PoG::cm(20.0, 12.0), &ScreenSpec::eve_default(), &hs);
        let out = warp(&map, &AffineParams::identity());
        assert_eq!(out.data(), map.data());
    }

    #[test]
    fn one_cell_translation_matches_shift_oracle() {
        // theta translating by exactly one cell in x: tx = 2/(W-1)
        let (h, w) = (16usize, 20usize);
        let mut map = Heatmap::zeros(h, w);
        for row in 0..h {
            for col in 0..w {
                map.set(row, col, ((row * 7 + col * 3) % 11) as f64 / 11.0);
            }
        }
        let tx = 2.0 / (w - 1) as f64;
        let theta = AffineParams::translation(tx, 0.0);
        let out = warp(&map, &theta);
        // shift oracle: out[y][x] = in[y][x+1], last column zero-filled
        for row in 0..h {
            for col in 0..w {
                let expect = if col + 1 < w { map.get(row, col + 1) } else { 0.0 };
                assert!(
                    (out.get(row, col) - expect).abs() < 1e-12,
                    "({row},{col}): {} vs {expect}",
                    out.get(row, col)
                );
            }
        }
    }

    #[test]
    fn zero_scale_reads_center_everywhere() {
        let (h, w) = (17usize, 21usize); // odd dims: exact center cell
        let mut map = Heatmap::zeros(h, w);
        for row in 0..h {
            for col in 0..w {
                map.set(row, col, ((row * 5 + col) % 13) as f64 / 13.0);
            }
        }
        let theta = AffineParams::scale(0.0, 0.0);
        let out = warp(&map, &theta);
        let center = map.get(h / 2, w / 2);
        for &v in out.data() {
            assert!((v - center).abs() < 1e-12);
        }
    }
}
