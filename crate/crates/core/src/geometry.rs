//! Axis-aligned box arithmetic: IoU, centers, the vertex angle between
//! three points, and the center-to-border distance ratio used by the work
//! terms of the Coulomb loss.
//!
//! Every function here is pure. Boxes are validated once at construction,
//! so none of the operations need degeneracy branches of their own.

use std::fmt;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned rectangle in corner form.
///
/// Invariant: all corners finite, `x2 > x1`, `y2 > y1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T = f64> {
    x1: T,
    y1: T,
    x2: T,
    y2: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point<T = f64> {
    pub x: T,
    pub y: T,
}

impl<T: Scalar> Point<T> {
    pub fn new(x: T, y: T) -> Self {
        Self { x, y }
    }

    pub fn dist(&self, other: &Self) -> T {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl<T: Scalar> BBox<T> {
    pub fn new(x1: T, y1: T, x2: T, y2: T) -> Result<Self> {
        let finite = x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite();
        if !finite || x2 <= x1 || y2 <= y1 {
            return Err(Error::InvalidBox {
                x1: x1.as_f64(),
                y1: y1.as_f64(),
                x2: x2.as_f64(),
                y2: y2.as_f64(),
            });
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn from_array(c: [T; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }

    pub fn from_center_size(cx: T, cy: T, w: T, h: T) -> Result<Self> {
        let hw = w * T::half();
        let hh = h * T::half();
        Self::new(cx - hw, cy - hh, cx + hw, cy + hh)
    }

    #[inline]
    pub fn x1(&self) -> T {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> T {
        self.y1
    }
    #[inline]
    pub fn x2(&self) -> T {
        self.x2
    }
    #[inline]
    pub fn y2(&self) -> T {
        self.y2
    }

    #[inline]
    pub fn to_array(&self) -> [T; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    #[inline]
    pub fn width(&self) -> T {
        self.x2 - self.x1
    }

    #[inline]
    pub fn height(&self) -> T {
        self.y2 - self.y1
    }

    #[inline]
    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> Point<T> {
        center(self)
    }

    /// Overlap rectangle, or `None` when the boxes merely touch or are disjoint.
    pub fn intersection(&self, other: &Self) -> Option<Self> {
        Self::new(
            self.x1.max(other.x1),
            self.y1.max(other.y1),
            self.x2.min(other.x2),
            self.y2.min(other.y2),
        )
        .ok()
    }

    /// True when `other` lies inside `self` (closed).
    pub fn contains(&self, other: &Self) -> bool {
        other.x1 >= self.x1 && other.y1 >= self.y1 && other.x2 <= self.x2 && other.y2 <= self.y2
    }

    pub fn contains_point(&self, p: Point<T>) -> bool {
        p.x >= self.x1 && p.x <= self.x2 && p.y >= self.y1 && p.y <= self.y2
    }

    pub fn translated(&self, dx: T, dy: T) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    /// Uniform scaling about the origin.
    pub fn scaled(&self, k: T) -> Result<Self> {
        Self::new(self.x1 * k, self.y1 * k, self.x2 * k, self.y2 * k)
    }

    pub fn cast<U: Scalar>(&self) -> Result<BBox<U>> {
        BBox::new(
            U::lit(self.x1.as_f64()),
            U::lit(self.y1.as_f64()),
            U::lit(self.x2.as_f64()),
            U::lit(self.y2.as_f64()),
        )
    }
}

impl<T: Scalar> fmt::Display for BBox<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

pub fn iou<T: Scalar>(a: &BBox<T>, b: &BBox<T>) -> T {
    let iw = a.x2.min(b.x2) - a.x1.max(b.x1);
    let ih = a.y2.min(b.y2) - a.y1.max(b.y1);
    if iw <= T::zero() || ih <= T::zero() {
        return T::zero();
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).min(T::one())
}

/// IoU together with its partial derivatives with respect to the corners of
/// `p`; `g` is held constant. At a `min`/`max` switch the derivative of the
/// branch where `p`'s own edge is inside `g` is used.
pub fn iou_with_grad<T: Scalar>(g: &BBox<T>, p: &BBox<T>) -> (T, [T; 4]) {
    let zero = T::zero();
    let ix1 = g.x1.max(p.x1);
    let iy1 = g.y1.max(p.y1);
    let ix2 = g.x2.min(p.x2);
    let iy2 = g.y2.min(p.y2);
    let iw = ix2 - ix1;
    let ih = iy2 - iy1;
    if iw <= zero || ih <= zero {
        return (zero, [zero; 4]);
    }
    let inter = iw * ih;
    let union = g.area() + p.area() - inter;
    let value = inter / union;

    let d_inter = [
        if p.x1 > g.x1 { -ih } else { zero },
        if p.y1 > g.y1 { -iw } else { zero },
        if p.x2 < g.x2 { ih } else { zero },
        if p.y2 < g.y2 { iw } else { zero },
    ];
    let pw = p.width();
    let ph = p.height();
    let d_area = [-ph, -pw, ph, pw];

    let u2 = union * union;
    let mut grad = [zero; 4];
    for k in 0..4 {
        // d(I/U) with dU = dA_p - dI
        grad[k] = (d_inter[k] * (union + inter) - inter * d_area[k]) / u2;
    }
    (value.min(T::one()), grad)
}

pub fn center<T: Scalar>(b: &BBox<T>) -> Point<T> {
    Point::new((b.x1 + b.x2) * T::half(), (b.y1 + b.y2) * T::half())
}

/// Cosine of the angle at vertex `b` in the triangle `a`-`b`-`c`, from the
/// law of cosines. A zero-length side yields 1.
pub fn cos_angle_at<T: Scalar>(b: Point<T>, a: Point<T>, c: Point<T>) -> T {
    let ba = b.dist(&a);
    let bc = b.dist(&c);
    if ba == T::zero() || bc == T::zero() {
        return T::one();
    }
    let ac = a.dist(&c);
    let cos = (ba * ba + bc * bc - ac * ac) / (T::two() * ba * bc);
    cos.max(-T::one()).min(T::one())
}

/// `cos_angle_at` with its gradient with respect to the free point `a`.
///
/// Uses the equivalent dot-product form `u·v / (|u||v|)`, `u = a - b`,
/// `v = c - b`, which is better conditioned for differentiation.
pub fn cos_angle_with_grad<T: Scalar>(b: Point<T>, a: Point<T>, c: Point<T>) -> (T, [T; 2]) {
    let (ux, uy) = (a.x - b.x, a.y - b.y);
    let (vx, vy) = (c.x - b.x, c.y - b.y);
    let nu = ux.hypot(uy);
    let nv = vx.hypot(vy);
    if nu == T::zero() || nv == T::zero() {
        return (T::one(), [T::zero(); 2]);
    }
    let dot = ux * vx + uy * vy;
    let raw = dot / (nu * nv);
    if raw >= T::one() || raw <= -T::one() {
        return (raw.max(-T::one()).min(T::one()), [T::zero(); 2]);
    }
    let nu3 = nu * nu * nu;
    let gx = vx / (nu * nv) - dot * ux / (nu3 * nv);
    let gy = vy / (nu * nv) - dot * uy / (nu3 * nv);
    (raw, [gx, gy])
}

/// One axis factor of `border_distance`: `1 - min(d_lo, d_hi) / (extent / 2)`
/// clamped to `[0, 1]`, plus its derivative with respect to the coordinate.
fn border_factor<T: Scalar>(c: T, lo: T, hi: T) -> (T, T) {
    let half = (hi - lo) * T::half();
    let d_lo = (c - lo).abs();
    let d_hi = (hi - c).abs();
    let (m, dm) = if d_lo <= d_hi {
        (d_lo, if c >= lo { T::one() } else { -T::one() })
    } else {
        (d_hi, if c <= hi { -T::one() } else { T::one() })
    };
    let f = T::one() - m / half;
    if f <= T::zero() {
        (T::zero(), T::zero())
    } else if f >= T::one() {
        (T::one(), T::zero())
    } else {
        (f, -dm / half)
    }
}

/// Normalized distance of `p`'s center from `g`'s center: 0 at the center,
/// 1 on a corner, `sqrt(f_x * f_y)` in between, where each axis factor is
/// `1 - min(dist to near border) / (half side)` clamped to `[0, 1]`.
pub fn border_distance<T: Scalar>(g: &BBox<T>, p: &BBox<T>) -> T {
    let c = center(p);
    let (fx, _) = border_factor(c.x, g.x1, g.x2);
    let (fy, _) = border_factor(c.y, g.y1, g.y2);
    (fx * fy).sqrt()
}

/// `border_distance` and its gradient with respect to the corners of `p`.
/// The gradient is zero wherever the value is zero.
pub fn border_distance_with_grad<T: Scalar>(g: &BBox<T>, p: &BBox<T>) -> (T, [T; 4]) {
    let c = center(p);
    let (fx, dfx) = border_factor(c.x, g.x1, g.x2);
    let (fy, dfy) = border_factor(c.y, g.y1, g.y2);
    let s = (fx * fy).sqrt();
    if s == T::zero() {
        return (s, [T::zero(); 4]);
    }
    let ds_dcx = dfx * fy / (T::two() * s);
    let ds_dcy = fx * dfy / (T::two() * s);
    // each corner moves the center by half its displacement
    let gx = ds_dcx * T::half();
    let gy = ds_dcy * T::half();
    (s, [gx, gy, gx, gy])
}

/// Whether `p`'s center lies inside `g`, boundary included.
pub fn contains_center<T: Scalar>(g: &BBox<T>, p: &BBox<T>) -> bool {
    g.contains_point(center(p))
}
