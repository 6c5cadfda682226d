//! Planar geometry: poses, trajectories, drivable-area polygons and the
//! trajectory distances every other module is built on.

use alloc::vec::Vec;
use core::f64::consts::{PI, TAU};
use core::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::math;

/// Default spacing for continuous on-road checks; equals the raster resolution.
pub const DEFAULT_SAMPLE_STEP: f64 = 0.25;

/// Points closer than this to a polygon edge count as on the boundary.
const BOUNDARY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn norm(self) -> f64 {
        math::hypot(self.x, self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Point2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn cross(self, other: Point2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Rotates counter-clockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Point2 {
        let (s, c) = (math::sin(angle), math::cos(angle));
        Point2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % TAU;
    if a <= -PI {
        a += TAU;
    } else if a > PI {
        a -= TAU;
    }
    a
}

/// Planar pose; yaw is counter-clockwise from +x and kept in (−π, π].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Pose2 { x, y, yaw: normalize_angle(yaw) }
    }

    pub fn position(&self) -> Point2 {
        Point2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    /// Maps a point expressed in this pose's frame into the global frame.
    pub fn to_global(&self, p: Point2) -> Point2 {
        p.rotate(self.yaw) + self.position()
    }

    /// Maps a global point into this pose's frame.
    pub fn to_local(&self, p: Point2) -> Point2 {
        (p - self.position()).rotate(-self.yaw)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Frame {
    Global,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToAgent,
    ToGlobal,
}

/// Ordered, uniformly timed 2-D waypoints in a tagged frame.
///
/// Waypoints start one `dt` after the reference time; the current position
/// is not part of the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<Point2>,
    dt: f64,
    frame: Frame,
}

impl Trajectory {
    pub fn new(points: Vec<Point2>, dt: f64, frame: Frame) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("trajectory points"));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument("trajectory dt must be positive and finite"));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("trajectory points"));
        }
        Ok(Trajectory { points, dt, frame })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    /// Length of the polyline through the waypoints, optionally starting at `origin`.
    pub fn path_length(&self, origin: Option<Point2>) -> f64 {
        let lead = origin.map_or(0.0, |o| o.distance(self.points[0]));
        lead + self.points.windows(2).map(|w| w[0].distance(w[1])).sum::<f64>()
    }

    fn check_compatible(&self, other: &Trajectory) -> Result<()> {
        if self.frame != other.frame {
            return Err(Error::FrameMismatch { expected: self.frame, found: other.frame });
        }
        if self.points.len() != other.points.len() {
            return Err(Error::LengthMismatch {
                expected: self.points.len(),
                found: other.points.len(),
            });
        }
        Ok(())
    }
}

/// Rigid transform between the agent frame anchored at `pose` and the global frame.
pub fn transform_to_frame(traj: &Trajectory, pose: &Pose2, direction: Direction) -> Result<Trajectory> {
    let (from, to) = match direction {
        Direction::ToAgent => (Frame::Global, Frame::Agent),
        Direction::ToGlobal => (Frame::Agent, Frame::Global),
    };
    if traj.frame != from {
        return Err(Error::FrameMismatch { expected: from, found: traj.frame });
    }
    if !pose.is_finite() {
        return Err(Error::NonFinite("pose"));
    }
    let points = traj
        .points
        .iter()
        .map(|&p| match direction {
            Direction::ToAgent => pose.to_local(p),
            Direction::ToGlobal => pose.to_global(p),
        })
        .collect();
    Ok(Trajectory { points, dt: traj.dt, frame: to })
}

pub(crate) fn mean_l2_points(a: &[Point2], b: &[Point2]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(p, q)| p.distance(*q)).sum();
    sum / a.len() as f64
}

pub(crate) fn max_l2_points(a: &[Point2], b: &[Point2]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p.distance(*q)).fold(0.0, f64::max)
}

/// Mean point-wise Euclidean distance.
pub fn mean_l2(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(mean_l2_points(&a.points, &b.points))
}

/// Largest point-wise Euclidean distance.
pub fn max_l2(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(max_l2_points(&a.points, &b.points))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct BBox {
    min: Point2,
    max: Point2,
}

impl BBox {
    fn of(ring: &[Point2]) -> BBox {
        let mut min = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in ring {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        BBox { min, max }
    }

    fn contains(&self, p: Point2) -> bool {
        let t = BOUNDARY_TOLERANCE;
        p.x >= self.min.x - t && p.x <= self.max.x + t && p.y >= self.min.y - t && p.y <= self.max.y + t
    }
}

/// Twice the signed area; positive for counter-clockwise rings.
pub fn signed_area2(ring: &[Point2]) -> f64 {
    let n = ring.len();
    (0..n).map(|i| ring[i].cross(ring[(i + 1) % n])).sum()
}

fn orient(a: Point2, b: Point2, c: Point2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(p: Point2, a: Point2, b: Point2) -> bool {
    let ab = b - a;
    let len = ab.norm();
    if len == 0.0 {
        return p.distance(a) <= BOUNDARY_TOLERANCE;
    }
    if math::abs(ab.cross(p - a)) / len > BOUNDARY_TOLERANCE {
        return false;
    }
    let t = ab.dot(p - a);
    t >= -BOUNDARY_TOLERANCE * len && t <= len * len + BOUNDARY_TOLERANCE * len
}

fn segments_intersect(a: Point2, b: Point2, c: Point2, d: Point2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(a, c, d))
        || (d2 == 0.0 && on_segment(b, c, d))
        || (d3 == 0.0 && on_segment(c, a, b))
        || (d4 == 0.0 && on_segment(d, a, b))
}

/// Drops repeated consecutive vertices and an explicit closing vertex.
fn clean_ring(ring: &[Point2]) -> Vec<Point2> {
    let mut out: Vec<Point2> = Vec::with_capacity(ring.len());
    for &p in ring {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

fn ring_is_simple(ring: &[Point2]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in (i + 1)..n {
            let (c, d) = (ring[j], ring[(j + 1) % n]);
            if j == i + 1 {
                // edges share b == c; they must not fold back onto each other
                if on_segment(d, a, b) || on_segment(a, c, d) {
                    return false;
                }
            } else if i == 0 && j == n - 1 {
                // edges share a == d
                if on_segment(c, a, b) || on_segment(b, c, d) {
                    return false;
                }
            } else if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn validate_ring(ring: &[Point2], ccw: bool) -> Result<Vec<Point2>> {
    let mut ring = clean_ring(ring);
    if ring.len() < 3 {
        return Err(Error::InvalidPolygon("ring needs at least 3 distinct vertices"));
    }
    if ring.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("polygon ring"));
    }
    if !ring_is_simple(&ring) {
        return Err(Error::InvalidPolygon("ring self-intersects"));
    }
    let area = signed_area2(&ring);
    if area == 0.0 {
        return Err(Error::InvalidPolygon("ring has zero area"));
    }
    if (area > 0.0) != ccw {
        ring.reverse();
    }
    Ok(ring)
}

/// Even-odd ray cast; boundary handling is the caller's job.
fn ring_crossings_odd(ring: &[Point2], p: Point2) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn ring_boundary_contains(ring: &[Point2], p: Point2) -> bool {
    let n = ring.len();
    (0..n).any(|i| on_segment(p, ring[i], ring[(i + 1) % n]))
}

/// Simple polygon with optional holes. Outer ring is stored CCW, holes CW.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    outer: Vec<Point2>,
    holes: Vec<Vec<Point2>>,
    bbox: BBox,
}

impl Polygon {
    /// Validates the rings and fixes their orientation. Self-intersecting
    /// rings are rejected, not repaired.
    pub fn new(outer: Vec<Point2>, holes: Vec<Vec<Point2>>) -> Result<Self> {
        let outer = validate_ring(&outer, true)?;
        let holes = holes.iter().map(|h| validate_ring(h, false)).collect::<Result<Vec<_>>>()?;
        let bbox = BBox::of(&outer);
        Ok(Polygon { outer, holes, bbox })
    }

    pub fn outer(&self) -> &[Point2] {
        &self.outer
    }

    pub fn holes(&self) -> &[Vec<Point2>] {
        &self.holes
    }

    /// Boundary points (outer or hole edges) count as inside.
    pub fn contains(&self, p: Point2) -> bool {
        if !self.bbox.contains(p) {
            return false;
        }
        if ring_boundary_contains(&self.outer, p) {
            return true;
        }
        if !ring_crossings_odd(&self.outer, p) {
            return false;
        }
        for hole in &self.holes {
            if ring_boundary_contains(hole, p) {
                return true;
            }
            if ring_crossings_odd(hole, p) {
                return false;
            }
        }
        true
    }
}

/// Union of polygons describing the drivable area.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolygonSet {
    polygons: Vec<Polygon>,
}

impl PolygonSet {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        PolygonSet { polygons }
    }

    pub fn empty() -> Self {
        PolygonSet::default()
    }

    pub fn polygons(&self) -> &[Polygon] {
        &self.polygons
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn contains(&self, p: Point2) -> bool {
        self.polygons.iter().any(|poly| poly.contains(p))
    }
}

pub fn point_in_polygons(p: Point2, area: &PolygonSet) -> bool {
    area.contains(p)
}

/// True iff every waypoint and every point sampled along the connecting
/// segments at spacing ≤ `sample_step` lies inside `area`.
pub fn trajectory_on_road(traj: &Trajectory, area: &PolygonSet, sample_step: f64) -> Result<bool> {
    if traj.frame != Frame::Global {
        return Err(Error::FrameMismatch { expected: Frame::Global, found: traj.frame });
    }
    if !(sample_step > 0.0 && sample_step.is_finite()) {
        return Err(Error::InvalidArgument("sample_step must be positive"));
    }
    Ok(points_on_road(&traj.points, area, sample_step))
}

pub(crate) fn points_on_road(points: &[Point2], area: &PolygonSet, sample_step: f64) -> bool {
    if !area.contains(points[0]) {
        return false;
    }
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let n = math::ceil(a.distance(b) / sample_step).max(1.0) as usize;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            if !area.contains(a + (b - a) * t) {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn unit_square() -> PolygonSet {
        let ring = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(0.0, 1.0),
        ];
        PolygonSet::new(vec![Polygon::new(ring, vec![]).unwrap()])
    }

    fn traj(points: &[(f64, f64)], frame: Frame) -> Trajectory {
        Trajectory::new(points.iter().map(|&(x, y)| Point2::new(x, y)).collect(), 0.5, frame).unwrap()
    }

    #[test]
    fn identity_pose_leaves_trajectory_unchanged() {
        let t = traj(&[(1.0, 2.0), (3.0, -4.0)], Frame::Agent);
        let g = transform_to_frame(&t, &Pose2::new(0.0, 0.0, 0.0), Direction::ToGlobal).unwrap();
        assert_eq!(g.points(), t.points());
        assert_eq!(g.frame(), Frame::Global);
    }

    #[test]
    fn pure_translation() {
        let t = traj(&[(0.0, 0.0)], Frame::Agent);
        let g = transform_to_frame(&t, &Pose2::new(1.0, 0.0, 0.0), Direction::ToGlobal).unwrap();
        assert_eq!(g.points()[0], Point2::new(1.0, 0.0));
    }

    #[test]
    fn quarter_turn_rotation() {
        let t = traj(&[(1.0, 0.0)], Frame::Agent);
        let g = transform_to_frame(&t, &Pose2::new(0.0, 0.0, PI / 2.0), Direction::ToGlobal).unwrap();
        assert!(g.points()[0].distance(Point2::new(0.0, 1.0)) < 1e-12);
    }

    #[test]
    fn transform_rejects_wrong_frame() {
        let t = traj(&[(1.0, 0.0)], Frame::Global);
        let err = transform_to_frame(&t, &Pose2::default(), Direction::ToGlobal).unwrap_err();
        assert_eq!(err, Error::FrameMismatch { expected: Frame::Agent, found: Frame::Global });
    }

    #[test]
    fn yaw_is_normalized() {
        assert!((Pose2::new(0.0, 0.0, 3.0 * PI).yaw - PI).abs() < 1e-12);
        assert_eq!(Pose2::new(0.0, 0.0, -PI).yaw, PI);
        assert!((normalize_angle(-3.0 * PI / 2.0) - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn unit_square_containment() {
        let sq = unit_square();
        assert!(point_in_polygons(Point2::new(0.5, 0.5), &sq));
        assert!(!point_in_polygons(Point2::new(2.0, 0.5), &sq));
        assert!(point_in_polygons(Point2::new(0.0, 0.5), &sq));
        assert!(point_in_polygons(Point2::new(1.0, 1.0), &sq));
        assert!(point_in_polygons(Point2::new(0.5, 1.0), &sq));
    }

    #[test]
    fn holes_subtract_but_their_boundary_counts() {
        let outer = vec![
            Point2::new(0.0, 0.0),
            Point2::new(4.0, 0.0),
            Point2::new(4.0, 4.0),
            Point2::new(0.0, 4.0),
        ];
        let hole = vec![
            Point2::new(1.0, 1.0),
            Point2::new(3.0, 1.0),
            Point2::new(3.0, 3.0),
            Point2::new(1.0, 3.0),
        ];
        let poly = Polygon::new(outer, vec![hole]).unwrap();
        assert!(signed_area2(poly.outer()) > 0.0);
        assert!(signed_area2(&poly.holes()[0]) < 0.0);
        assert!(poly.contains(Point2::new(0.5, 2.0)));
        assert!(!poly.contains(Point2::new(2.0, 2.0)));
        assert!(poly.contains(Point2::new(1.0, 2.0)));
    }

    #[test]
    fn polygon_validation() {
        let bowtie = vec![
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 1.0),
        ];
        assert_eq!(Polygon::new(bowtie, vec![]), Err(Error::InvalidPolygon("ring self-intersects")));
        let two = vec![Point2::new(0.0, 0.0), Point2::new(1.0, 1.0)];
        assert!(Polygon::new(two, vec![]).is_err());
        // closed ring with repeated first vertex and CW order is accepted and reoriented
        let cw = vec![
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
            Point2::new(0.0, 0.0),
        ];
        let p = Polygon::new(cw, vec![]).unwrap();
        assert_eq!(p.outer().len(), 4);
        assert!(signed_area2(p.outer()) > 0.0);
    }

    #[test]
    fn empty_area_contains_nothing() {
        assert!(!point_in_polygons(Point2::new(0.0, 0.0), &PolygonSet::empty()));
    }

    fn notched_corridor() -> PolygonSet {
        // 0..10 x 0..4 corridor with a notch cut down from the top edge to y=1
        // between x=4.9 and x=5.1.
        let ring = vec![
            Point2::new(0.0, 0.0),
            Point2::new(10.0, 0.0),
            Point2::new(10.0, 4.0),
            Point2::new(5.1, 4.0),
            Point2::new(5.1, 1.0),
            Point2::new(4.9, 1.0),
            Point2::new(4.9, 4.0),
            Point2::new(0.0, 4.0),
        ];
        PolygonSet::new(vec![Polygon::new(ring, vec![]).unwrap()])
    }

    #[test]
    fn on_road_checks() {
        let area = notched_corridor();
        let inside = traj(&[(1.0, 0.5), (3.0, 0.5), (9.0, 0.5)], Frame::Global);
        assert!(trajectory_on_road(&inside, &area, 0.25).unwrap());
        let one_out = traj(&[(1.0, 0.5), (3.0, 5.0), (9.0, 0.5)], Frame::Global);
        assert!(!trajectory_on_road(&one_out, &area, 0.25).unwrap());
    }

    #[test]
    fn segment_crossing_notch_is_off_road() {
        let area = notched_corridor();
        let crossing = traj(&[(1.0, 2.0), (9.0, 2.0)], Frame::Global);
        // dense-sampling oracle at 0.01 m
        let pts = crossing.points();
        let mut oracle = true;
        for i in 0..=800 {
            let p = pts[0] + (pts[1] - pts[0]) * (i as f64 / 800.0);
            oracle &= area.contains(p);
        }
        assert!(!oracle);
        assert!(!trajectory_on_road(&crossing, &area, 0.25).unwrap());
        // waypoints alone are inside
        assert!(area.contains(pts[0]) && area.contains(pts[1]));
    }

    #[test]
    fn on_road_contract() {
        let area = unit_square();
        let agent = traj(&[(0.5, 0.5)], Frame::Agent);
        assert!(trajectory_on_road(&agent, &area, 0.25).is_err());
        let g = traj(&[(0.5, 0.5)], Frame::Global);
        assert!(trajectory_on_road(&g, &area, 0.0).is_err());
        assert!(trajectory_on_road(&g, &area, 0.25).unwrap());
        assert_eq!(Trajectory::new(vec![], 0.5, Frame::Global), Err(Error::Empty("trajectory points")));
    }

    #[test]
    fn distance_examples() {
        let a = traj(&[(0.0, 0.0), (2.0, 0.0)], Frame::Agent);
        let b = traj(&[(0.0, 0.0), (0.0, 0.0)], Frame::Agent);
        assert_eq!(mean_l2(&a, &b).unwrap(), 1.0);
        assert_eq!(max_l2(&a, &b).unwrap(), 2.0);
        assert_eq!(mean_l2(&a, &a).unwrap(), 0.0);
        assert_eq!(max_l2(&a, &a).unwrap(), 0.0);
        let c = traj(&[(0.0, 1.0), (2.0, 1.0)], Frame::Agent);
        assert_eq!(mean_l2(&a, &c).unwrap(), 1.0);
        assert_eq!(max_l2(&a, &c).unwrap(), 1.0);
    }

    #[test]
    fn distance_contract() {
        let a = traj(&[(0.0, 0.0), (2.0, 0.0)], Frame::Agent);
        let short = traj(&[(0.0, 0.0)], Frame::Agent);
        assert_eq!(mean_l2(&a, &short), Err(Error::LengthMismatch { expected: 2, found: 1 }));
        let g = traj(&[(0.0, 0.0), (2.0, 0.0)], Frame::Global);
        assert!(max_l2(&a, &g).is_err());
    }
}
