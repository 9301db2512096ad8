//! Road reference path and the Cartesian/Frenet mappings.
//!
//! The path is a polyline. Inside segment `i` the frame normal is blended
//! linearly between the unit normals at its two vertices, so the normal
//! field is continuous along the path and [`ReferencePath::to_frenet`] is
//! the exact inverse of [`ReferencePath::to_cartesian`] inside the corridor
//! where the blended normals do not cross.
//!
//! `d` is positive to the left of the direction of travel.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrenetError {
    #[error("reference path needs at least 2 points, got {0}")]
    TooFewPoints(usize),
    #[error("reference path points {0} and {1} coincide")]
    RepeatedPoint(usize, usize),
    #[error("reference path reverses direction at vertex {0}")]
    Cusp(usize),
    #[error("reference path coordinate is not finite")]
    NonFinite,
    #[error("projection is ambiguous: arc lengths {0} and {1} are equally close")]
    AmbiguousProjection(f64, f64),
    #[error("position is outside the path range (s = {0})")]
    OutOfRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Position and velocity along (`s`) and across (`d`) the reference path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FrenetState {
    pub s: f64,
    pub d: f64,
    pub s_dot: f64,
    pub d_dot: f64,
}

impl FrenetState {
    pub const fn new(s: f64, d: f64, s_dot: f64, d_dot: f64) -> Self {
        Self { s, d, s_dot, d_dot }
    }

    pub fn is_finite(&self) -> bool {
        self.s.is_finite() && self.d.is_finite() && self.s_dot.is_finite() && self.d_dot.is_finite()
    }

    /// Re-expresses `self` in a frame whose origin is the ego position.
    pub fn shift_to_ego(&self, ego: &FrenetState) -> FrenetState {
        FrenetState {
            s: self.s - ego.s,
            d: self.d - ego.d,
            ..*self
        }
    }

    /// Inverse of [`FrenetState::shift_to_ego`].
    pub fn unshift_from_ego(&self, ego: &FrenetState) -> FrenetState {
        FrenetState {
            s: self.s + ego.s,
            d: self.d + ego.d,
            ..*self
        }
    }
}

const PARAM_TOL: f64 = 1e-12;
const TIE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct ReferencePath {
    points: Vec<Point>,
    cum_arclen: Vec<f64>,
    /// Unit left normal at every vertex.
    normals: Vec<Point>,
}

impl TryFrom<Vec<Point>> for ReferencePath {
    type Error = FrenetError;

    fn try_from(points: Vec<Point>) -> Result<Self, Self::Error> {
        Self::new(points)
    }
}

impl From<ReferencePath> for Vec<Point> {
    fn from(path: ReferencePath) -> Self {
        path.points
    }
}

fn left_normal(a: Point, b: Point) -> Point {
    let len = a.distance(b);
    Point::new(-(b.y - a.y) / len, (b.x - a.x) / len)
}

#[inline]
fn cross(ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    ax * by - ay * bx
}

impl ReferencePath {
    pub fn new(points: Vec<Point>) -> Result<Self, FrenetError> {
        if points.len() < 2 {
            return Err(FrenetError::TooFewPoints(points.len()));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(FrenetError::NonFinite);
        }
        let mut cum_arclen = Vec::with_capacity(points.len());
        cum_arclen.push(0.0);
        for (i, w) in points.windows(2).enumerate() {
            let len = w[0].distance(w[1]);
            if len == 0.0 {
                return Err(FrenetError::RepeatedPoint(i, i + 1));
            }
            cum_arclen.push(cum_arclen[i] + len);
        }

        let seg_normals: Vec<Point> = points.windows(2).map(|w| left_normal(w[0], w[1])).collect();
        let mut normals = Vec::with_capacity(points.len());
        normals.push(seg_normals[0]);
        for i in 1..points.len() - 1 {
            let (a, b) = (seg_normals[i - 1], seg_normals[i]);
            let (x, y) = (a.x + b.x, a.y + b.y);
            let n = x.hypot(y);
            if n < 1e-9 {
                return Err(FrenetError::Cusp(i));
            }
            normals.push(Point::new(x / n, y / n));
        }
        normals.push(*seg_normals.last().unwrap());

        Ok(Self {
            points,
            cum_arclen,
            normals,
        })
    }

    /// Straight path from `start` heading along `heading` (radians).
    pub fn straight(start: Point, heading: f64, length: f64) -> Result<Self, FrenetError> {
        let end = Point::new(
            start.x + length * heading.cos(),
            start.y + length * heading.sin(),
        );
        Self::new(vec![start, end])
    }

    /// Circular arc of `radius` centred at the origin from `start_angle`
    /// sweeping `sweep` radians (counter-clockwise when positive), split into
    /// `segments` chords.
    pub fn arc(radius: f64, start_angle: f64, sweep: f64, segments: usize) -> Result<Self, FrenetError> {
        let pts = (0..=segments)
            .map(|i| {
                let a = start_angle + sweep * i as f64 / segments as f64;
                Point::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        Self::new(pts)
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn cum_arclen(&self) -> &[f64] {
        &self.cum_arclen
    }

    pub fn length(&self) -> f64 {
        *self.cum_arclen.last().unwrap()
    }

    fn segment_count(&self) -> usize {
        self.points.len() - 1
    }

    /// Blended (unnormalised) normal inside segment `i` at parameter `u`.
    fn blended_normal(&self, i: usize, u: f64) -> Point {
        let (a, b) = (self.normals[i], self.normals[i + 1]);
        Point::new(a.x + u * (b.x - a.x), a.y + u * (b.y - a.y))
    }

    /// Frenet coordinates `(s, d)` of the Cartesian point `p`.
    pub fn to_frenet(&self, p: Point) -> Result<(f64, f64), FrenetError> {
        // (segment, s, d)
        let mut best: Option<(usize, f64, f64)> = None;
        let mut ambiguous: Option<(f64, f64)> = None;
        let mut before_start = false;

        for i in 0..self.segment_count() {
            let (a, b) = (self.points[i], self.points[i + 1]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let (wx, wy) = (p.x - a.x, p.y - a.y);
            let n0 = self.normals[i];
            let (mx, my) = (self.normals[i + 1].x - n0.x, self.normals[i + 1].y - n0.y);

            // cross(w - u*delta, n0 + u*m) = 0
            let qa = -cross(dx, dy, mx, my);
            let qb = cross(wx, wy, mx, my) - cross(dx, dy, n0.x, n0.y);
            let qc = cross(wx, wy, n0.x, n0.y);
            let roots = solve_quadratic(qa, qb, qc);

            for u in roots.into_iter().flatten() {
                if u < -PARAM_TOL {
                    if i == 0 {
                        before_start = true;
                    }
                    continue;
                }
                if u > 1.0 + PARAM_TOL {
                    continue;
                }
                let u = u.clamp(0.0, 1.0);
                let n = self.blended_normal(i, u);
                let (rx, ry) = (wx - u * dx, wy - u * dy);
                let d = (rx * n.x + ry * n.y) / n.x.hypot(n.y);
                let s = self.cum_arclen[i] + u * (self.cum_arclen[i + 1] - self.cum_arclen[i]);
                match best {
                    None => best = Some((i, s, d)),
                    Some((bi, bs, bd)) => {
                        let gap = d.abs() - bd.abs();
                        if gap < -TIE_TOL {
                            best = Some((i, s, d));
                            ambiguous = None;
                        } else if gap <= TIE_TOL {
                            let same_place = (s - bs).abs() <= TIE_TOL;
                            let adjacent = i.abs_diff(bi) <= 1;
                            if !same_place && !adjacent {
                                ambiguous = Some((bs.min(s), bs.max(s)));
                            }
                            if s < bs {
                                best = Some((i, s, d));
                            }
                        }
                    }
                }
            }
        }

        if let Some((s0, s1)) = ambiguous {
            return Err(FrenetError::AmbiguousProjection(s0, s1));
        }
        match best {
            Some((_, s, d)) => Ok((s, d)),
            None if before_start => Err(FrenetError::OutOfRange(f64::NEG_INFINITY)),
            None => Err(FrenetError::OutOfRange(f64::INFINITY)),
        }
    }

    /// Cartesian point at arc length `s` displaced `d` along the frame normal.
    pub fn to_cartesian(&self, s: f64, d: f64) -> Result<Point, FrenetError> {
        if !(0.0..=self.length()).contains(&s) {
            return Err(FrenetError::OutOfRange(s));
        }
        let i = match self
            .cum_arclen
            .binary_search_by(|c| c.partial_cmp(&s).unwrap())
        {
            Ok(i) => i.min(self.segment_count() - 1),
            Err(i) => i - 1,
        };
        let seg_len = self.cum_arclen[i + 1] - self.cum_arclen[i];
        let u = (s - self.cum_arclen[i]) / seg_len;
        let (a, b) = (self.points[i], self.points[i + 1]);
        let n = self.blended_normal(i, u);
        let norm = n.x.hypot(n.y);
        Ok(Point::new(
            a.x + u * (b.x - a.x) + d * n.x / norm,
            a.y + u * (b.y - a.y) + d * n.y / norm,
        ))
    }
}

/// Real roots of `a u^2 + b u + c = 0`, degrading to the linear case.
fn solve_quadratic(a: f64, b: f64, c: f64) -> [Option<f64>; 2] {
    let scale = a.abs().max(b.abs()).max(c.abs()).max(f64::MIN_POSITIVE);
    if a.abs() <= 1e-14 * scale {
        if b == 0.0 {
            return [None, None];
        }
        return [Some(-c / b), None];
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return [None, None];
    }
    // Numerically stable pair.
    let q = -0.5 * (b + b.signum() * disc.sqrt());
    let r1 = q / a;
    let r2 = if q != 0.0 { c / q } else { -b / (2.0 * a) };
    [Some(r1), Some(r2)]
}
