//! 2x3 affine parameters and the affine+noise augmentation generator
//! used to synthesize person-specific distortions.

use alloc::vec::Vec;

use rand_core::RngCore;

use crate::geometry::{PoG, ScreenSpec, Unit};
use crate::math;
use crate::rng;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// A 2x3 affine matrix `[a b tx; c d ty]` acting on 2D points:
/// `(x, y) -> (a x + b y + tx, c x + d y + ty)`.
///
/// The coordinate space the matrix acts on is owned by the caller: the
/// augmentation generator and the simulator use screen pixel space, the
/// spatial-transformer sampler uses normalized `[-1, 1]^2` coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AffineParams {
    pub m: [[f64; 3]; 2],
}

impl AffineParams {
    pub fn identity() -> Self {
        Self { m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]] }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self { m: [[1.0, 0.0, tx], [0.0, 1.0, ty]] }
    }

    pub fn scale(sx: f64, sy: f64) -> Self {
        Self { m: [[sx, 0.0, 0.0], [0.0, sy, 0.0]] }
    }

    pub fn rotation(radians: f64) -> Self {
        let (s, c) = (math::sin(radians), math::cos(radians));
        Self { m: [[c, -s, 0.0], [s, c, 0.0]] }
    }

    pub fn shear(kx: f64, ky: f64) -> Self {
        Self { m: [[1.0, kx, 0.0], [ky, 1.0, 0.0]] }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y + self.m[0][2],
            self.m[1][0] * x + self.m[1][1] * y + self.m[1][2],
        )
    }

    /// `self . other`: applies `other` first.
    pub fn compose(&self, other: &AffineParams) -> AffineParams {
        let a = &self.m;
        let b = &other.m;
        let mut m = [[0.0; 3]; 2];
        for r in 0..2 {
            for c in 0..2 {
                m[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c];
            }
            m[r][2] = a[r][0] * b[0][2] + a[r][1] * b[1][2] + a[r][2];
        }
        AffineParams { m }
    }

    /// Inverse transform; `None` when the linear part is singular.
    pub fn inverse(&self) -> Option<AffineParams> {
        let [[a, b, tx], [c, d, ty]] = self.m;
        let det = a * d - b * c;
        if math::abs(det) < 1e-12 {
            return None;
        }
        let (ia, ib, ic, id) = (d / det, -b / det, -c / det, a / det);
        Some(AffineParams {
            m: [[ia, ib, -(ia * tx + ib * ty)], [ic, id, -(ic * tx + id * ty)]],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().flatten().all(|v| v.is_finite())
    }

    /// Recenters the transform so it acts about `(cx, cy)` instead of
    /// the origin: `T(c) . self . T(-c)`.
    pub fn about(&self, cx: f64, cy: f64) -> AffineParams {
        AffineParams::translation(cx, cy)
            .compose(self)
            .compose(&AffineParams::translation(-cx, -cy))
    }
}

impl Default for AffineParams {
    fn default() -> Self {
        Self::identity()
    }
}

/// Per-sample 2-vector pixel displacement added after the shared affine.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NoiseParams {
    pub dx_px: f64,
    pub dy_px: f64,
}

/// Ranges the augmentation generator samples from. All knobs are
/// configurable; translation is a fraction of the screen dimensions and
/// the noise sigma a fraction of the screen diagonal, both in px.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct AugmentConfig {
    pub scale_min: f64,
    pub scale_max: f64,
    pub rotation_max_deg: f64,
    pub shear_max: f64,
    pub translation_max_frac: f64,
    pub noise_sigma_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scale_min: 0.7,
            scale_max: 1.3,
            rotation_max_deg: 15.0,
            shear_max: 0.2,
            translation_max_frac: 0.2,
            noise_sigma_frac: 0.02,
        }
    }
}

impl AugmentConfig {
    /// Collapses every range to the identity / zero draw.
    pub fn identity() -> Self {
        Self {
            scale_min: 1.0,
            scale_max: 1.0,
            rotation_max_deg: 0.0,
            shear_max: 0.0,
            translation_max_frac: 0.0,
            noise_sigma_frac: 0.0,
        }
    }

    pub fn noise_sigma_px(&self, s: &ScreenSpec) -> f64 {
        self.noise_sigma_frac * s.diagonal_px()
    }
}

/// Draws one affine from the configured ranges, in screen pixel space.
///
/// Scale, rotation and shear act about the screen center so that a
/// collapsed config yields the exact identity; the translation is added
/// in absolute pixels.
pub fn sample_affine<R: RngCore + ?Sized>(rng: &mut R, cfg: &AugmentConfig, s: &ScreenSpec) -> AffineParams {
    let sx = rng::uniform(rng, cfg.scale_min, cfg.scale_max);
    let sy = rng::uniform(rng, cfg.scale_min, cfg.scale_max);
    let rot_max = cfg.rotation_max_deg.to_radians();
    let rot = rng::uniform(rng, -rot_max, rot_max);
    let kx = rng::uniform(rng, -cfg.shear_max, cfg.shear_max);
    let ky = rng::uniform(rng, -cfg.shear_max, cfg.shear_max);
    let tx = rng::uniform(rng, -cfg.translation_max_frac, cfg.translation_max_frac) * s.width_px as f64;
    let ty = rng::uniform(rng, -cfg.translation_max_frac, cfg.translation_max_frac) * s.height_px as f64;

    let linear = AffineParams::rotation(rot)
        .compose(&AffineParams::shear(kx, ky))
        .compose(&AffineParams::scale(sx, sy));
    let center = s.center_cm().to_px(s);
    AffineParams::translation(tx, ty).compose(&linear.about(center.x, center.y))
}

/// Draws one per-sample noise displacement (zero-mean isotropic
/// Gaussian in px).
pub fn sample_noise<R: RngCore + ?Sized>(rng: &mut R, cfg: &AugmentConfig, s: &ScreenSpec) -> NoiseParams {
    let sigma = cfg.noise_sigma_px(s);
    if sigma == 0.0 {
        return NoiseParams::default();
    }
    NoiseParams {
        dx_px: rng::normal(rng, 0.0, sigma),
        dy_px: rng::normal(rng, 0.0, sigma),
    }
}

/// Applies one shared affine plus per-point noise to a pixel-space
/// point stream. `noise` is either empty (no noise) or one entry per
/// point.
pub fn apply_affine_points(points: &[PoG], a: &AffineParams, noise: &[NoiseParams]) -> Vec<PoG> {
    debug_assert!(noise.is_empty() || noise.len() == points.len());
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            debug_assert_eq!(p.unit, Unit::Px);
            let (x, y) = a.apply(p.x, p.y);
            let n = noise.get(i).copied().unwrap_or_default();
            PoG::px(x + n.dx_px, y + n.dy_px)
        })
        .collect()
}
