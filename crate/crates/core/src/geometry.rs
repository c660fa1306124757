//! Pixel-plane primitives shared by every stage of the pipeline.
//!
//! Coordinates are continuous pixels in the camera frame (subpixel tracker
//! output is kept as is). Time is in seconds from the start of the recording.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Out-of-frame tolerance, as a fraction of each image dimension.
pub const DEFAULT_MARGIN: f64 = 0.1;

/// The resolution at which every default pixel threshold is stated.
pub const REFERENCE_RESOLUTION: Resolution = Resolution {
    width: 640,
    height: 360,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Point::new(x, y)
    }
}

impl From<[f64; 2]> for Point {
    fn from([x, y]: [f64; 2]) -> Self {
        Point::new(x, y)
    }
}

impl From<TrackPoint> for Point {
    fn from(p: TrackPoint) -> Self {
        p.position()
    }
}

/// Euclidean distance in the pixel plane.
pub fn euclidean(a: Point, b: Point) -> f64 {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    (dx * dx + dy * dy).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackPoint {
    pub x: f64,
    pub y: f64,
    pub t: f64,
}

impl TrackPoint {
    pub fn new(x: f64, y: f64, t: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Validation(format!(
                "non-finite coordinate ({x}, {y})"
            )));
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::Validation(format!(
                "time must be finite and non-negative, got {t}"
            )));
        }
        Ok(TrackPoint { x, y, t })
    }

    pub fn position(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TrajId(pub u64);

impl fmt::Display for TrajId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// One tracked cyclist: a non-empty sequence of points, strictly increasing
/// in time.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    id: TrajId,
    points: Vec<TrackPoint>,
}

impl Trajectory {
    pub fn new(id: TrajId, points: Vec<TrackPoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Validation(format!("trajectory {id} has no points")));
        }
        for w in points.windows(2) {
            if w[1].t <= w[0].t {
                return Err(Error::Validation(format!(
                    "trajectory {id}: times not strictly increasing ({} then {})",
                    w[0].t, w[1].t
                )));
            }
        }
        Ok(Trajectory { id, points })
    }

    pub fn id(&self) -> TrajId {
        self.id
    }

    pub fn points(&self) -> &[TrackPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> TrackPoint {
        self.points[0]
    }

    pub fn last(&self) -> TrackPoint {
        self.points[self.points.len() - 1]
    }

    pub fn positions(&self) -> impl Iterator<Item = Point> + '_ {
        self.points.iter().map(TrackPoint::position)
    }

    /// Time on screen: first to last observation.
    pub fn duration(&self) -> f64 {
        self.last().t - self.first().t
    }

    pub fn path_length(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| euclidean(w[0].position(), w[1].position()))
            .sum()
    }

    pub fn max_time_gap(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| w[1].t - w[0].t)
            .fold(0.0, f64::max)
    }

    pub(crate) fn map_positions(&self, f: impl Fn(Point) -> Point) -> Trajectory {
        let points = self
            .points
            .iter()
            .map(|p| {
                let q = f(p.position());
                TrackPoint {
                    x: q.x,
                    y: q.y,
                    t: p.t,
                }
            })
            .collect();
        Trajectory {
            id: self.id,
            points,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "(u32, u32)", into = "(u32, u32)")]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
}

impl Resolution {
    pub const fn new(width: u32, height: u32) -> Self {
        Resolution { width, height }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "resolution must be positive, got {self}"
            )));
        }
        Ok(())
    }

    /// Independent x/y factors that map coordinates at `self` onto `target`.
    pub fn scale_to(&self, target: Resolution) -> (f64, f64) {
        (
            f64::from(target.width) / f64::from(self.width),
            f64::from(target.height) / f64::from(self.height),
        )
    }

    /// Factor applied to thresholds stated at 640x360: the mean of the
    /// x and y scale factors.
    pub fn reference_scale(&self) -> f64 {
        let (fx, fy) = REFERENCE_RESOLUTION.scale_to(*self);
        0.5 * (fx + fy)
    }

    pub fn is_isotropic_to(&self, other: Resolution) -> bool {
        let (fx, fy) = self.scale_to(other);
        (fx - fy).abs() <= 1e-12 * fx.max(fy)
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl From<(u32, u32)> for Resolution {
    fn from((width, height): (u32, u32)) -> Self {
        Resolution { width, height }
    }
}

impl From<Resolution> for (u32, u32) {
    fn from(r: Resolution) -> Self {
        (r.width, r.height)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectorySet {
    trajectories: Vec<Trajectory>,
    resolution: Resolution,
}

impl TrajectorySet {
    pub fn new(trajectories: Vec<Trajectory>, resolution: Resolution) -> Result<Self> {
        Self::with_margin(trajectories, resolution, DEFAULT_MARGIN)
    }

    /// Builds a set, rejecting duplicate ids and points further than
    /// `margin * dimension` outside the frame.
    pub fn with_margin(
        trajectories: Vec<Trajectory>,
        resolution: Resolution,
        margin: f64,
    ) -> Result<Self> {
        resolution.validate()?;
        let mut seen = HashSet::with_capacity(trajectories.len());
        let (w, h) = (f64::from(resolution.width), f64::from(resolution.height));
        let (mx, my) = (margin * w, margin * h);
        for traj in &trajectories {
            if !seen.insert(traj.id) {
                return Err(Error::Validation(format!(
                    "duplicate trajectory id {}",
                    traj.id
                )));
            }
            for p in &traj.points {
                if p.x < -mx || p.x > w + mx || p.y < -my || p.y > h + my {
                    return Err(Error::Validation(format!(
                        "trajectory {}: point ({}, {}) lies outside the {resolution} frame",
                        traj.id, p.x, p.y
                    )));
                }
            }
        }
        Ok(TrajectorySet {
            trajectories,
            resolution,
        })
    }

    pub(crate) fn from_parts_unchecked(
        trajectories: Vec<Trajectory>,
        resolution: Resolution,
    ) -> Self {
        TrajectorySet {
            trajectories,
            resolution,
        }
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn get(&self, id: TrajId) -> Option<&Trajectory> {
        self.trajectories.iter().find(|t| t.id == id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trajectory> {
        self.trajectories.iter()
    }
}

/// An open piecewise-linear curve with at least two vertices and no
/// zero-length segments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Polyline {
    vertices: Vec<Point>,
}

impl Polyline {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Validation(format!(
                "polyline needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::Validation(format!(
                "polyline vertex ({}, {}) is not finite",
                p.x, p.y
            )));
        }
        if let Some(i) = vertices.windows(2).position(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!(
                "polyline has repeated consecutive vertex at index {}",
                i + 1
            )));
        }
        Ok(Polyline { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn first(&self) -> Point {
        self.vertices[0]
    }

    pub fn last(&self) -> Point {
        self.vertices[self.vertices.len() - 1]
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn arc_length(&self) -> f64 {
        arc_length(self)
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<Polyline> {
        Polyline::new(self.vertices.iter().copied().map(f).collect())
    }
}

impl TryFrom<Vec<[f64; 2]>> for Polyline {
    type Error = Error;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        Polyline::new(v.into_iter().map(Point::from).collect())
    }
}

impl From<Polyline> for Vec<[f64; 2]> {
    fn from(p: Polyline) -> Self {
        p.vertices.iter().map(|v| [v.x, v.y]).collect()
    }
}

pub fn arc_length(p: &Polyline) -> f64 {
    p.segments().map(|(a, b)| euclidean(a, b)).sum()
}

/// Distance from `q` to the closed segment `[a, b]`.
pub fn point_to_segment(q: Point, a: Point, b: Point) -> f64 {
    let (vx, vy) = (b.x - a.x, b.y - a.y);
    let len2 = vx * vx + vy * vy;
    if len2 == 0.0 {
        return euclidean(q, a);
    }
    let s = (((q.x - a.x) * vx + (q.y - a.y) * vy) / len2).clamp(0.0, 1.0);
    euclidean(q, Point::new(a.x + s * vx, a.y + s * vy))
}

pub fn point_to_polyline(q: Point, p: &Polyline) -> f64 {
    p.segments()
        .map(|(a, b)| point_to_segment(q, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// A simple polygon stored as an open ring (the closing vertex is implicit).
#[derive(Clone, Debug, PartialEq)]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    /// Builds a polygon from an open ring of at least three vertices.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::Validation(format!(
                "polygon needs at least 3 distinct vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("polygon vertex is not finite".into()));
        }
        let poly = Polygon { vertices };
        if !poly.is_simple() {
            return Err(Error::Validation("polygon is self-intersecting".into()));
        }
        Ok(poly)
    }

    /// Builds a polygon from a closed ring whose last vertex repeats the first.
    pub fn from_closed_ring(ring: Vec<Point>) -> Result<Self> {
        match (ring.first(), ring.last()) {
            (Some(a), Some(b)) if ring.len() >= 2 && a == b => {
                let mut open = ring;
                open.pop();
                Polygon::new(open)
            }
            _ => Err(Error::Validation("polygon ring is not closed".into())),
        }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn closed_ring(&self) -> Vec<Point> {
        let mut ring = self.vertices.clone();
        ring.push(self.vertices[0]);
        ring
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        let edges: Vec<_> = self.edges().collect();
        if edges.iter().any(|(a, b)| a == b) {
            return false;
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if adjacent {
                    // Adjacent edges share one vertex; they may only overlap there.
                    let (shared, other_i, other_j) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    if orientation(other_i, shared, other_j) == 0.0
                        && dot(sub(other_i, shared), sub(other_j, shared)) > 0.0
                    {
                        return false;
                    }
                } else if segments_intersect(a, b, c, d) {
                    return false;
                }
            }
        }
        true
    }

    /// Point-in-polygon by ray casting. Points on the boundary are outside.
    pub fn contains_strict(&self, q: Point) -> bool {
        if self.edges().any(|(a, b)| on_segment(q, a, b)) {
            return false;
        }
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > q.y) != (b.y > q.y) {
                let x_cross = a.x + (q.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if q.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Result<Polygon> {
        Polygon::new(self.vertices.iter().copied().map(f).collect())
    }
}

fn sub(a: Point, b: Point) -> Point {
    Point::new(a.x - b.x, a.y - b.y)
}

fn dot(a: Point, b: Point) -> f64 {
    a.x * b.x + a.y * b.y
}

fn orientation(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(q: Point, a: Point, b: Point) -> bool {
    orientation(a, b, q) == 0.0
        && q.x >= a.x.min(b.x)
        && q.x <= a.x.max(b.x)
        && q.y >= a.y.min(b.y)
        && q.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, touching included.
fn segments_intersect(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    on_segment(c, a, b) || on_segment(d, a, b) || on_segment(a, c, d) || on_segment(b, c, d)
}
