//! Planar primitives shared by the mesh, reshape and composite stages.
//!
//! Coordinates are image pixels: `x` grows to the right, `y` grows downward,
//! and integer coordinates sit on pixel centers.

use std::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self - other).norm()
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn cross(self, other: Point) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn dot(self, other: Point) -> f64 {
        self.x * other.x + self.y * other.y
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, rhs: f64) -> Point {
        Point::new(self.x * rhs, self.y * rhs)
    }
}

/// Half the cross product of `b - a` and `c - a`.
///
/// Positive for the winding every mesh triangle is normalized to.
pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * (b - a).cross(c - a)
}

pub fn centroid(a: Point, b: Point, c: Point) -> Point {
    Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
}

/// Shoelace area of a closed polygon, same sign convention as [`signed_area`].
pub fn polygon_signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * acc
}

/// Convex hull by Andrew's monotone chain, positively wound, collinear
/// boundary points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && signed_area(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && signed_area(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Even-odd point-in-polygon test. Points exactly on the boundary may land on
/// either side; callers that care use [`distance_to_polygon`].
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn distance_to_segment(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.distance(a);
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.distance(a + ab * t)
}

/// Euclidean distance from `p` to the polygon boundary.
pub fn distance_to_polygon(p: Point, poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| distance_to_segment(p, poly[i], poly[(i + 1) % n]))
        .fold(f64::INFINITY, f64::min)
}

/// Row-major 2x3 affine map: `x' = m[0] x + m[1] y + m[2]`, `y' = m[3] x + m[4] y + m[5]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine(pub [f64; 6]);

impl Affine {
    pub const IDENTITY: Affine = Affine([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);

    /// The unique affine map sending `src[i]` to `dst[i]` for all three corners.
    pub fn from_triangles(src: [Point; 3], dst: [Point; 3]) -> Result<Affine> {
        let [a, b, c] = src;
        let det = (b - a).cross(c - a);
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Geometry(format!(
                "degenerate source triangle {a:?} {b:?} {c:?}"
            )));
        }
        if signed_area(dst[0], dst[1], dst[2]) == 0.0 {
            return Err(Error::Geometry(format!(
                "degenerate target triangle {:?} {:?} {:?}",
                dst[0], dst[1], dst[2]
            )));
        }
        // Solve in the frame of `a`: d(p) = dst[0] + L (p - a), with L the
        // linear part fixed by the edge vectors.
        let (e1, e2) = (b - a, c - a);
        let (f1, f2) = (dst[1] - dst[0], dst[2] - dst[0]);
        let inv = 1.0 / det;
        // Inverse of [[e1.x, e2.x], [e1.y, e2.y]].
        let (i00, i01, i10, i11) = (e2.y * inv, -e2.x * inv, -e1.y * inv, e1.x * inv);
        let l00 = f1.x * i00 + f2.x * i10;
        let l01 = f1.x * i01 + f2.x * i11;
        let l10 = f1.y * i00 + f2.y * i10;
        let l11 = f1.y * i01 + f2.y * i11;
        let tx = dst[0].x - l00 * a.x - l01 * a.y;
        let ty = dst[0].y - l10 * a.x - l11 * a.y;
        Ok(Affine([l00, l01, tx, l10, l11, ty]))
    }

    pub fn apply(&self, p: Point) -> Point {
        let m = &self.0;
        Point::new(m[0] * p.x + m[1] * p.y + m[2], m[3] * p.x + m[4] * p.y + m[5])
    }

    pub fn inverse(&self) -> Result<Affine> {
        let m = &self.0;
        let det = m[0] * m[4] - m[1] * m[3];
        if det == 0.0 || !det.is_finite() {
            return Err(Error::Geometry("singular affine map".into()));
        }
        let inv = 1.0 / det;
        let (a, b, c, d) = (m[4] * inv, -m[1] * inv, -m[3] * inv, m[0] * inv);
        Ok(Affine([
            a,
            b,
            -(a * m[2] + b * m[5]),
            c,
            d,
            -(c * m[2] + d * m[5]),
        ]))
    }
}
