//! Small planar primitives shared by the mesh, assembly and point location.

use serde::{Deserialize, Serialize};

/// A point in the plane, in domain units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn midpoint(a: Point, b: Point) -> Point {
        Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y))
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Twice the signed area of triangle `(a, b, c)`.
///
/// Positive when the vertices are in counter-clockwise order.
pub fn signed_area2(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Barycentric coordinates of `p` with respect to triangle `(a, b, c)`.
///
/// The triangle must have positive orientation; the coordinates sum to one
/// and are proportional to the signed sub-areas opposite each vertex.
pub fn barycentric(p: Point, a: Point, b: Point, c: Point) -> [f64; 3] {
    let total = signed_area2(a, b, c);
    [
        signed_area2(p, b, c) / total,
        signed_area2(a, p, c) / total,
        signed_area2(a, b, p) / total,
    ]
}

/// Axis-aligned rectangle, used for bounding boxes and sampling regions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Rect {
    pub fn new(x_lo: f64, x_hi: f64, y_lo: f64, y_hi: f64) -> Self {
        Rect {
            x_lo,
            x_hi,
            y_lo,
            y_hi,
        }
    }

    pub fn unit() -> Self {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> f64 {
        self.y_hi - self.y_lo
    }

    pub fn center(&self) -> Point {
        Point::new(0.5 * (self.x_lo + self.x_hi), 0.5 * (self.y_lo + self.y_hi))
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p.x >= self.x_lo - tol
            && p.x <= self.x_hi + tol
            && p.y >= self.y_lo - tol
            && p.y <= self.y_hi + tol
    }

    pub fn is_valid(&self) -> bool {
        self.x_lo < self.x_hi && self.y_lo < self.y_hi
    }
}
