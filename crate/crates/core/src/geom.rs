//! Planar geometry: points, poses, oriented rectangles, and the queries the
//! simulator, predicates and auxiliary signals are built from.
//!
//! Rectangles carry two half-extents: `half_w` along the local x axis and
//! `half_l` along the local y axis. Domains attach meaning to the distinction
//! (a stick's long side is its `l`), so neither is required to be the larger.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

/// Tolerance used for every geometric equality or containment test.
pub const EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at angle `theta`.
    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Counter-clockwise rotation by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub position: Vec2,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(position: Vec2, theta: f64) -> Self {
        Pose2 {
            position,
            theta: normalize_angle(theta),
        }
    }
}

/// Expresses world point `p` in the coordinate frame located at `frame`.
pub fn to_frame(p: Vec2, frame: &Pose2) -> Vec2 {
    (p - frame.position).rotate(-frame.theta)
}

/// Inverse of [`to_frame`]: maps a point given in `frame` back to the world.
pub fn from_frame(p: Vec2, frame: &Pose2) -> Vec2 {
    frame.position + p.rotate(frame.theta)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedRect {
    pub center: Vec2,
    pub half_w: f64,
    pub half_l: f64,
    pub theta: f64,
}

impl OrientedRect {
    pub fn new(center: Vec2, half_w: f64, half_l: f64, theta: f64) -> Self {
        debug_assert!(half_w > 0.0 && half_l > 0.0, "rectangle extents must be positive");
        OrientedRect {
            center,
            half_w,
            half_l,
            theta: normalize_angle(theta),
        }
    }

    /// Axis-aligned rectangle spanning `min`..`max`.
    pub fn from_bounds(min: Vec2, max: Vec2) -> Self {
        OrientedRect::new(
            (min + max) * 0.5,
            (max.x - min.x) * 0.5,
            (max.y - min.y) * 0.5,
            0.0,
        )
    }

    pub fn pose(&self) -> Pose2 {
        Pose2 {
            position: self.center,
            theta: self.theta,
        }
    }

    pub fn area(&self) -> f64 {
        4.0 * self.half_w * self.half_l
    }

    /// Unit vectors of the local x (width) and y (length) axes.
    pub fn axes(&self) -> (Vec2, Vec2) {
        let ux = Vec2::from_angle(self.theta);
        (ux, Vec2::new(-ux.y, ux.x))
    }

    pub fn to_local(&self, p: Vec2) -> Vec2 {
        to_frame(p, &self.pose())
    }

    pub fn to_world(&self, p: Vec2) -> Vec2 {
        from_frame(p, &self.pose())
    }

    /// Corners in counter-clockwise order starting at local (−w, −l).
    pub fn corners(&self) -> [Vec2; 4] {
        let (w, l) = (self.half_w, self.half_l);
        [
            self.to_world(Vec2::new(-w, -l)),
            self.to_world(Vec2::new(w, -l)),
            self.to_world(Vec2::new(w, l)),
            self.to_world(Vec2::new(-w, l)),
        ]
    }

    /// Half-length of the rectangle's projection onto unit axis `u`.
    fn projected_radius(&self, u: Vec2) -> f64 {
        let (ax, ay) = self.axes();
        self.half_w * u.dot(ax).abs() + self.half_l * u.dot(ay).abs()
    }

    /// True when `other` lies entirely inside `self` (boundaries may touch).
    pub fn contains_rect(&self, other: &OrientedRect) -> bool {
        other.corners().iter().all(|&c| point_in_rect(c, self))
    }

    pub fn is_finite(&self) -> bool {
        self.center.is_finite()
            && self.half_w.is_finite()
            && self.half_l.is_finite()
            && self.theta.is_finite()
    }
}

/// Inside-or-on-boundary membership test.
pub fn point_in_rect(p: Vec2, r: &OrientedRect) -> bool {
    let q = r.to_local(p);
    q.x.abs() <= r.half_w + EPS && q.y.abs() <= r.half_l + EPS
}

/// Separating-axis test on interiors; rectangles that only share boundary
/// points do not overlap.
pub fn rects_overlap(a: &OrientedRect, b: &OrientedRect) -> bool {
    let d = b.center - a.center;
    let (a0, a1) = a.axes();
    let (b0, b1) = b.axes();
    for u in [a0, a1, b0, b1] {
        let gap = d.dot(u).abs();
        if gap >= a.projected_radius(u) + b.projected_radius(u) - EPS {
            return false;
        }
    }
    true
}

/// Closest point of `r` to `p` and the distance to it. Points inside the
/// rectangle are their own nearest point at distance zero.
pub fn nearest_point_on_rect(p: Vec2, r: &OrientedRect) -> (Vec2, f64) {
    if point_in_rect(p, r) {
        return (p, 0.0);
    }
    let q = r.to_local(p);
    let clamped = Vec2::new(q.x.clamp(-r.half_w, r.half_w), q.y.clamp(-r.half_l, r.half_l));
    let point = r.to_world(clamped);
    (point, p.distance(point))
}

/// Closest point on the boundary of `r`, for points inside or outside.
pub fn nearest_boundary_point(p: Vec2, r: &OrientedRect) -> (Vec2, f64) {
    let q = r.to_local(p);
    let inside = q.x.abs() <= r.half_w && q.y.abs() <= r.half_l;
    if !inside {
        let clamped = Vec2::new(q.x.clamp(-r.half_w, r.half_w), q.y.clamp(-r.half_l, r.half_l));
        let point = r.to_world(clamped);
        return (point, p.distance(point));
    }
    let dx = r.half_w - q.x.abs();
    let dy = r.half_l - q.y.abs();
    let local = if dx <= dy {
        Vec2::new(r.half_w.copysign(q.x), q.y)
    } else {
        Vec2::new(q.x, r.half_l.copysign(q.y))
    };
    (r.to_world(local), dx.min(dy))
}

/// Closest point of segment `a`–`b` to `p`.
pub fn nearest_point_on_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let ab = b - a;
    let len2 = ab.dot(ab);
    let t = if len2 <= 0.0 {
        0.0
    } else {
        ((p - a).dot(ab) / len2).clamp(0.0, 1.0)
    };
    let point = a + ab * t;
    (point, p.distance(point))
}

/// Parameter interval `[t0, t1]` ⊆ [0, 1] of segment `a`–`b` lying inside
/// the closed rectangle, or `None` when the segment misses it.
pub fn clip_segment(a: Vec2, b: Vec2, r: &OrientedRect) -> Option<(f64, f64)> {
    let la = r.to_local(a);
    let lb = r.to_local(b);
    let d = lb - la;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for (p0, dp, lim) in [(la.x, d.x, r.half_w), (la.y, d.y, r.half_l)] {
        if dp.abs() < 1e-15 {
            if p0.abs() > lim {
                return None;
            }
            continue;
        }
        let mut ta = (-lim - p0) / dp;
        let mut tb = (lim - p0) / dp;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 > t1 {
            return None;
        }
    }
    Some((t0, t1))
}

/// True when the segment passes through the interior of `r` (grazing an
/// edge or a corner does not count).
pub fn segment_crosses_rect(a: Vec2, b: Vec2, r: &OrientedRect) -> bool {
    let shrunk = OrientedRect {
        half_w: r.half_w - 1e-7,
        half_l: r.half_l - 1e-7,
        ..*r
    };
    if shrunk.half_w <= 0.0 || shrunk.half_l <= 0.0 {
        return false;
    }
    match clip_segment(a, b, &shrunk) {
        Some((t0, t1)) => (t1 - t0) * a.distance(b) > 1e-9 || point_in_rect(a, &shrunk),
        None => false,
    }
}

/// True when an open disc overlaps the rectangle's interior.
pub fn disc_overlaps_rect(center: Vec2, radius: f64, r: &OrientedRect) -> bool {
    nearest_point_on_rect(center, r).1 < radius - EPS
}

/// True when the disc lies within the closed rectangle.
pub fn disc_inside_rect(center: Vec2, radius: f64, r: &OrientedRect) -> bool {
    let q = r.to_local(center);
    q.x.abs() <= r.half_w - radius + EPS && q.y.abs() <= r.half_l - radius + EPS
}
