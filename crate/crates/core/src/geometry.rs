//! Homogeneous 2D coordinate-system transforms.
//!
//! Matrices act on column points `(x, y, 1)` and compose right-to-left, so
//! `compose(a, b)` first applies `b` and then `a`. All extents are measured in
//! unit lengths (the distance between adjacent pixel samples) unless a name
//! says `_px`.

use std::fmt;
use std::ops::Mul;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Determinants below this magnitude are treated as singular.
const SINGULAR_EPS: f64 = 1e-12;

/// Image extent in pixel counts. The unit-length extent is one less.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlaneSize {
    width_px: u32,
    height_px: u32,
}

impl PlaneSize {
    /// Both axes need at least two samples; a single-pixel axis has zero extent.
    pub fn new(width_px: u32, height_px: u32) -> Result<Self> {
        if width_px < 2 || height_px < 2 {
            return Err(Error::invalid(format!(
                "plane must be at least 2x2 pixels, got {width_px}x{height_px}"
            )));
        }
        Ok(Self {
            width_px,
            height_px,
        })
    }

    pub fn width_px(&self) -> u32 {
        self.width_px
    }

    pub fn height_px(&self) -> u32 {
        self.height_px
    }

    pub fn width_units(&self) -> f64 {
        f64::from(self.width_px - 1)
    }

    pub fn height_units(&self) -> f64 {
        f64::from(self.height_px - 1)
    }

    pub fn len(&self) -> usize {
        self.width_px as usize * self.height_px as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// True when `p` lies in the closed rectangle `[0, w] x [0, h]`.
    pub fn contains(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= self.width_units() && p.y <= self.height_units()
    }
}

impl fmt::Display for PlaneSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width_px, self.height_px)
    }
}

/// Region of interest given by its center and extent in source units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl Roi {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        let roi = Self { cx, cy, w, h };
        roi.validate()?;
        Ok(roi)
    }

    /// The ROI covering a whole plane.
    pub fn full(size: PlaneSize) -> Self {
        let (w, h) = (size.width_units(), size.height_units());
        Self {
            cx: 0.5 * w,
            cy: 0.5 * h,
            w,
            h,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(Error::invalid("roi center must be finite"));
        }
        if !(self.w > 0.0 && self.h > 0.0 && self.w.is_finite() && self.h.is_finite()) {
            return Err(Error::invalid(format!(
                "roi extent must be positive, got {} x {}",
                self.w, self.h
            )));
        }
        Ok(())
    }

    pub fn top_left(&self) -> Point {
        Point::new(self.cx - 0.5 * self.w, self.cy - 0.5 * self.h)
    }

    pub fn contains(&self, p: Point) -> bool {
        let tl = self.top_left();
        p.x >= tl.x && p.y >= tl.y && p.x <= tl.x + self.w && p.y <= tl.y + self.h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }

    /// Largest per-axis difference.
    pub fn max_abs_diff(self, other: Point) -> f64 {
        (self.x - other.x).abs().max((self.y - other.y).abs())
    }
}

/// Affine transform stored as the top two rows of a 3x3 homogeneous matrix;
/// the bottom row is `(0, 0, 1)` by construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2D {
    rows: [[f64; 3]; 2],
}

impl Default for Transform2D {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform2D {
    pub const IDENTITY: Transform2D = Transform2D {
        rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
    };

    /// Builds a transform from its top two rows, rejecting singular or
    /// non-finite matrices.
    pub fn from_rows(rows: [[f64; 3]; 2]) -> Result<Self> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("transform entries must be finite"));
        }
        let t = Self { rows };
        let det = t.det();
        if det.abs() < SINGULAR_EPS {
            return Err(Error::SingularTransform { det });
        }
        Ok(t)
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Self {
            rows: [[1.0, 0.0, tx], [0.0, 1.0, ty]],
        }
    }

    pub fn rows(&self) -> [[f64; 3]; 2] {
        self.rows
    }

    pub fn matrix(&self) -> [[f64; 3]; 3] {
        [self.rows[0], self.rows[1], [0.0, 0.0, 1.0]]
    }

    /// Determinant of the linear 2x2 block.
    pub fn det(&self) -> f64 {
        let [[a, b, _], [d, e, _]] = self.rows;
        a * e - b * d
    }

    pub fn translation_part(&self) -> (f64, f64) {
        (self.rows[0][2], self.rows[1][2])
    }

    pub fn apply(&self, p: Point) -> Point {
        let [[a, b, c], [d, e, f]] = self.rows;
        Point::new(a * p.x + b * p.y + c, d * p.x + e * p.y + f)
    }

    pub fn invert(&self) -> Result<Self> {
        let det = self.det();
        if det.abs() < SINGULAR_EPS || !det.is_finite() {
            return Err(Error::SingularTransform { det });
        }
        let [[a, b, c], [d, e, f]] = self.rows;
        Ok(Self {
            rows: [
                [e / det, -b / det, (b * f - e * c) / det],
                [-d / det, a / det, (d * c - a * f) / det],
            ],
        })
    }

    /// Largest absolute entry-wise difference between two matrices.
    pub fn max_abs_diff(&self, other: &Transform2D) -> f64 {
        self.rows
            .iter()
            .flatten()
            .zip(other.rows.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for Transform2D {
    type Output = Transform2D;

    fn mul(self, rhs: Transform2D) -> Transform2D {
        compose(&self, &rhs)
    }
}

impl Mul<Point> for Transform2D {
    type Output = Point;

    fn mul(self, rhs: Point) -> Point {
        self.apply(rhs)
    }
}

/// Matrix product `outer * inner`: applies `inner` first.
pub fn compose(outer: &Transform2D, inner: &Transform2D) -> Transform2D {
    let [[a, b, c], [d, e, f]] = outer.rows;
    let [[p, q, r], [s, t, u]] = inner.rows;
    Transform2D {
        rows: [
            [a * p + b * s, a * q + b * t, a * r + b * u + c],
            [d * p + e * s, d * q + e * t, d * r + e * u + f],
        ],
    }
}

/// Moves the origin to the top-left corner of `roi`.
pub fn t_crop(roi: &Roi) -> Transform2D {
    Transform2D::translation(-roi.cx + 0.5 * roi.w, -roi.cy + 0.5 * roi.h)
}

/// Rescales an extent of `src_w x src_h` units onto `dst_w x dst_h` units,
/// keeping the origin fixed.
pub fn t_resize(src_w: f64, src_h: f64, dst_w: f64, dst_h: f64) -> Result<Transform2D> {
    for (name, v) in [
        ("src_w", src_w),
        ("src_h", src_h),
        ("dst_w", dst_w),
        ("dst_h", dst_h),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(format!(
                "resize extent {name} must be positive, got {v}"
            )));
        }
    }
    Ok(Transform2D {
        rows: [[dst_w / src_w, 0.0, 0.0], [0.0, dst_h / src_h, 0.0]],
    })
}

/// Rotation by `theta` radians about `center`.
///
/// Quarter turns are snapped so that `cos`/`sin` are exactly 0 or +-1 and
/// integer grids map onto integer grids.
pub fn t_rotate(theta: f64, center: Point) -> Transform2D {
    let (mut sin, mut cos) = theta.sin_cos();
    for v in [&mut sin, &mut cos] {
        if v.abs() < 1e-15 {
            *v = 0.0;
        }
    }
    let (bx, by) = (center.x, center.y);
    Transform2D {
        rows: [
            [cos, -sin, -bx * cos + by * sin + bx],
            [sin, cos, -bx * sin - by * cos + by],
        ],
    }
}

/// Mirror about `x = width / 2`.
pub fn t_flip(width: f64) -> Transform2D {
    Transform2D {
        rows: [[-1.0, 0.0, width], [0.0, 1.0, 0.0]],
    }
}
