//! Screen/ray coordinate system: cm <-> px conversions, ray-plane
//! intersection, eye averaging and the angular error metric.
//!
//! Conventions: the screen is the `z = 0` plane with the origin at the
//! top-left corner, `x` rightward and `y` downward (both in cm); `z < 0`
//! is in front of the screen (toward the viewer). Upstream systems must
//! express gaze origins in this frame.

use crate::math;

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

/// Physical screen plane (cm) plus its pixel raster; the coordinate
/// bridge for every conversion.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ScreenSpec {
    pub width_cm: f64,
    pub height_cm: f64,
    pub width_px: u32,
    pub height_px: u32,
}

impl ScreenSpec {
    pub fn new(width_cm: f64, height_cm: f64, width_px: u32, height_px: u32) -> Result<Self, GeometryError> {
        if !(width_cm > 0.0 && height_cm > 0.0) || !width_cm.is_finite() || !height_cm.is_finite() {
            return Err(GeometryError::InvalidScreen);
        }
        if width_px == 0 || height_px == 0 {
            return Err(GeometryError::InvalidScreen);
        }
        Ok(Self { width_cm, height_cm, width_px, height_px })
    }

    /// EVE-style screen: 55.3 cm x 31.1 cm at 1920x1080.
    pub fn eve_default() -> Self {
        Self { width_cm: 55.3, height_cm: 31.1, width_px: 1920, height_px: 1080 }
    }

    /// Screen center in cm.
    pub fn center_cm(&self) -> PoG {
        PoG::cm(self.width_cm / 2.0, self.height_cm / 2.0)
    }

    pub fn diagonal_px(&self) -> f64 {
        math::hypot(self.width_px as f64, self.height_px as f64)
    }

    pub fn contains_cm(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_cm).contains(&x) && (0.0..=self.height_cm).contains(&y)
    }
}

impl Default for ScreenSpec {
    fn default() -> Self {
        Self::eve_default()
    }
}

/// Unit tag of a [`PoG`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub enum Unit {
    Cm,
    Px,
}

/// A point of gaze on the screen plane, tagged with its unit.
///
/// Off-screen values are legal; they feed the validity module.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct PoG {
    pub x: f64,
    pub y: f64,
    pub unit: Unit,
}

impl PoG {
    pub fn cm(x: f64, y: f64) -> Self {
        Self { x, y, unit: Unit::Cm }
    }

    pub fn px(x: f64, y: f64) -> Self {
        Self { x, y, unit: Unit::Px }
    }

    /// Linear bijection to pixel coordinates; identity if already px.
    pub fn to_px(self, s: &ScreenSpec) -> PoG {
        match self.unit {
            Unit::Px => self,
            Unit::Cm => PoG::px(
                self.x * s.width_px as f64 / s.width_cm,
                self.y * s.height_px as f64 / s.height_cm,
            ),
        }
    }

    /// Linear bijection to cm; identity if already cm.
    pub fn to_cm(self, s: &ScreenSpec) -> PoG {
        match self.unit {
            Unit::Cm => self,
            Unit::Px => PoG::cm(
                self.x * s.width_cm / s.width_px as f64,
                self.y * s.height_cm / s.height_px as f64,
            ),
        }
    }

    pub fn distance(&self, other: &PoG) -> f64 {
        debug_assert_eq!(self.unit, other.unit);
        math::hypot(self.x - other.x, self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// A unit-norm 3D gaze direction. The constructor normalizes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeDirection {
    d: [f64; 3],
}

impl GazeDirection {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self, GeometryError> {
        let n = math::sqrt(x * x + y * y + z * z);
        if !n.is_finite() || n == 0.0 {
            return Err(GeometryError::ZeroDirection);
        }
        Ok(Self { d: [x / n, y / n, z / n] })
    }

    pub fn as_array(&self) -> [f64; 3] {
        self.d
    }

    pub fn dot(&self, other: &GazeDirection) -> f64 {
        self.d[0] * other.d[0] + self.d[1] * other.d[1] + self.d[2] * other.d[2]
    }
}

/// A 3D gaze-ray origin in the screen coordinate frame (cm).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeOrigin {
    pub o: [f64; 3],
}

impl GazeOrigin {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { o: [x, y, z] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryError {
    /// Ray direction parallel to the screen plane (|d.z| < 1e-12).
    RayParallel,
    /// Ray hits the plane behind the origin (t <= 0).
    RayBackward,
    /// Eye averaging over mixed cm/px values.
    UnitMismatch,
    /// PoG-to-direction with the target coincident with the origin.
    DegenerateRay,
    /// Zero-length direction vector.
    ZeroDirection,
    /// Non-positive screen dimensions.
    InvalidScreen,
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        let msg = match self {
            Self::RayParallel => "gaze ray is parallel to the screen plane",
            Self::RayBackward => "gaze ray points away from the screen plane",
            Self::UnitMismatch => "PoG unit mismatch (cm vs px)",
            Self::DegenerateRay => "PoG coincides with the gaze origin",
            Self::ZeroDirection => "gaze direction has zero norm",
            Self::InvalidScreen => "screen dimensions must be positive",
        };
        f.write_str(msg)
    }
}

#[cfg(feature = "std")]
impl std::error::Error for GeometryError {}

const PARALLEL_EPS: f64 = 1e-12;

/// Intersects the gaze ray `o + t*d` with the screen plane `z = 0`.
///
/// The result may lie outside the screen extent; off-screen PoGs are
/// legal and handled downstream by the validity module.
pub fn direction_to_pog(d: &GazeDirection, o: &GazeOrigin, _s: &ScreenSpec) -> Result<PoG, GeometryError> {
    let dz = d.as_array()[2];
    if math::abs(dz) < PARALLEL_EPS {
        return Err(GeometryError::RayParallel);
    }
    let t = -o.o[2] / dz;
    if t <= 0.0 {
        return Err(GeometryError::RayBackward);
    }
    let da = d.as_array();
    Ok(PoG::cm(o.o[0] + t * da[0], o.o[1] + t * da[1]))
}

/// Unit vector from the origin to a point on the screen plane; inverse
/// of [`direction_to_pog`].
pub fn pog_to_direction(p: &PoG, o: &GazeOrigin) -> Result<GazeDirection, GeometryError> {
    debug_assert_eq!(p.unit, Unit::Cm);
    let v = [p.x - o.o[0], p.y - o.o[1], -o.o[2]];
    GazeDirection::new(v[0], v[1], v[2]).map_err(|_| GeometryError::DegenerateRay)
}

/// Componentwise mean of the two eyes' PoGs. Units must match.
pub fn average_eyes(p_l: &PoG, p_r: &PoG) -> Result<PoG, GeometryError> {
    if p_l.unit != p_r.unit {
        return Err(GeometryError::UnitMismatch);
    }
    Ok(PoG { x: (p_l.x + p_r.x) / 2.0, y: (p_l.y + p_r.y) / 2.0, unit: p_l.unit })
}

/// Angular error in degrees between two unit directions. Computed as
/// atan2(|d1 x d2|, d1 . d2), which stays fully precise near 0 and 180
/// degrees where the arccos form loses half the mantissa.
pub fn angular_error(d1: &GazeDirection, d2: &GazeDirection) -> f64 {
    let a = d1.as_array();
    let b = d2.as_array();
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cross_norm = math::sqrt(cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]);
    math::atan2(cross_norm, d1.dot(d2)) * 180.0 / core::f64::consts::PI
}
