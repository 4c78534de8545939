//! Planar sector geometry on a flat nautical-mile plane.
//!
//! `x` is east displacement and `y` north displacement, both in NM.
//! Bearings are degrees in `[0, 360)`, zero at north, clockwise.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simcore::FlightLevel;

/// Sanity bound on coordinates.
pub const MAX_COORD_NM: f64 = 10_000.0;

const ON_EDGE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Position2D {
    pub x: f64,
    pub y: f64,
}

impl Position2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.x.abs() <= MAX_COORD_NM
            && self.y.abs() <= MAX_COORD_NM
    }

    pub fn offset(&self, v: Vector2D, scale: f64) -> Position2D {
        Position2D::new(self.x + v.x * scale, self.y + v.y * scale)
    }

    pub fn sub(&self, other: &Position2D) -> Vector2D {
        Vector2D::new(self.x - other.x, self.y - other.y)
    }
}

/// A planar vector. Used for wind (kt, blowing-toward) and velocities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vector2D {
    pub x: f64,
    pub y: f64,
}

impl Vector2D {
    pub const ZERO: Vector2D = Vector2D { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector along a bearing.
    pub fn from_bearing(deg: f64) -> Self {
        let r = deg.to_radians();
        Self::new(r.sin(), r.cos())
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dot(&self, o: &Vector2D) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(&self, o: &Vector2D) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn scale(&self, s: f64) -> Vector2D {
        Vector2D::new(self.x * s, self.y * s)
    }

    pub fn add(&self, o: &Vector2D) -> Vector2D {
        Vector2D::new(self.x + o.x, self.y + o.y)
    }

    /// Bearing of this vector; `None` for the zero vector.
    pub fn bearing(&self) -> Option<f64> {
        if self.x == 0.0 && self.y == 0.0 {
            None
        } else {
            Some(normalize_bearing(self.x.atan2(self.y).to_degrees()))
        }
    }
}

/// Wrap any angle into `[0, 360)`.
pub fn normalize_bearing(deg: f64) -> f64 {
    let b = deg.rem_euclid(360.0);
    if b >= 360.0 {
        0.0
    } else {
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub name: String,
    pub pos: Position2D,
}

impl Waypoint {
    pub fn new(name: impl Into<String>, pos: Position2D) -> Result<Self> {
        let name = name.into();
        validate_waypoint_name(&name)?;
        if !pos.is_valid() {
            return Err(Error::InvalidValue(format!(
                "waypoint {name}: bad position"
            )));
        }
        Ok(Self { name, pos })
    }
}

pub fn validate_waypoint_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 5
        && name
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit());
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidValue(format!(
            "waypoint name {name:?} must be 1-5 uppercase letters or digits"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sector {
    pub boundary: Vec<Position2D>,
    pub floor: FlightLevel,
    pub ceiling: FlightLevel,
}

impl Sector {
    pub fn new(
        boundary: Vec<Position2D>,
        floor: FlightLevel,
        ceiling: FlightLevel,
    ) -> Result<Self> {
        let s = Self {
            boundary,
            floor,
            ceiling,
        };
        s.validate()?;
        Ok(s)
    }

    /// Axis-aligned square centred on the origin.
    pub fn square(half_width: f64, floor: FlightLevel, ceiling: FlightLevel) -> Result<Self> {
        let h = half_width;
        Self::new(
            vec![
                Position2D::new(-h, -h),
                Position2D::new(h, -h),
                Position2D::new(h, h),
                Position2D::new(-h, h),
            ],
            floor,
            ceiling,
        )
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.boundary.len();
        if n < 3 {
            return Err(Error::InvalidValue(
                "sector needs at least 3 vertices".into(),
            ));
        }
        if self.boundary.iter().any(|p| !p.is_valid()) {
            return Err(Error::InvalidValue("sector vertex not finite".into()));
        }
        if self.floor >= self.ceiling {
            return Err(Error::InvalidValue(
                "sector floor must be below ceiling".into(),
            ));
        }
        if !is_simple_polygon(&self.boundary) {
            return Err(Error::InvalidValue(
                "sector boundary self-intersects".into(),
            ));
        }
        Ok(())
    }

    pub fn contains_lateral(&self, p: Position2D) -> bool {
        point_in_polygon(&self.boundary, p)
    }

    pub fn centroid(&self) -> Position2D {
        let n = self.boundary.len() as f64;
        let (sx, sy) = self
            .boundary
            .iter()
            .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Position2D::new(sx / n, sy / n)
    }
}

/// An ordered list of waypoint names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub waypoints: Vec<String>,
}

impl Route {
    pub fn new(waypoints: Vec<String>) -> Result<Self> {
        if waypoints.len() < 2 {
            return Err(Error::InvalidValue(
                "route needs at least 2 waypoints".into(),
            ));
        }
        if waypoints.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidValue(
                "route repeats consecutive waypoints".into(),
            ));
        }
        Ok(Self { waypoints })
    }
}

/// Sector plus the named waypoints used by routes and clearances.
#[derive(Debug, Clone, PartialEq)]
pub struct Airspace {
    pub sector: Sector,
    waypoints: BTreeMap<String, Waypoint>,
}

impl Airspace {
    pub fn new(sector: Sector, waypoints: impl IntoIterator<Item = Waypoint>) -> Result<Self> {
        sector.validate()?;
        let mut map = BTreeMap::new();
        for wp in waypoints {
            validate_waypoint_name(&wp.name)?;
            if map.insert(wp.name.clone(), wp.clone()).is_some() {
                return Err(Error::InvalidValue(format!(
                    "duplicate waypoint {}",
                    wp.name
                )));
            }
        }
        Ok(Self {
            sector,
            waypoints: map,
        })
    }

    pub fn waypoint(&self, name: &str) -> Result<&Waypoint> {
        self.waypoints
            .get(name)
            .ok_or_else(|| Error::NotFound(format!("waypoint {name}")))
    }

    pub fn waypoints(&self) -> impl Iterator<Item = &Waypoint> {
        self.waypoints.values()
    }

    pub fn resolve(&self, route: &Route) -> Result<Vec<Waypoint>> {
        route
            .waypoints
            .iter()
            .map(|n| self.waypoint(n).cloned())
            .collect()
    }
}

pub fn horizontal_distance(a: Position2D, b: Position2D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Bearing of `b` seen from `a`.
pub fn track_between(a: Position2D, b: Position2D) -> Result<f64> {
    b.sub(&a)
        .bearing()
        .ok_or_else(|| Error::DegenerateGeometry("coincident points have no bearing".into()))
}

/// Sector containment; boundary points count as inside, vertical limits inclusive.
pub fn contains(sector: &Sector, p: Position2D, fl: f64) -> bool {
    fl >= sector.floor.value() as f64
        && fl <= sector.ceiling.value() as f64
        && sector.contains_lateral(p)
}

/// Smallest absolute angle between two bearings, in `[0, 180]`.
pub fn angular_difference(t1: f64, t2: f64) -> f64 {
    let d = (t1 - t2).abs() % 360.0;
    d.min(360.0 - d)
}

/// Signed turn from `from` to `to` in `(-180, 180]`; positive is clockwise.
pub fn signed_turn(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

fn point_in_polygon(poly: &[Position2D], p: Position2D) -> bool {
    let n = poly.len();
    // Boundary counts as inside.
    for i in 0..n {
        if distance_to_segment(p, poly[i], poly[(i + 1) % n]) <= ON_EDGE_EPS {
            return true;
        }
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
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

pub fn distance_to_segment(p: Position2D, a: Position2D, b: Position2D) -> f64 {
    let ab = b.sub(&a);
    let len2 = ab.dot(&ab);
    if len2 == 0.0 {
        return horizontal_distance(p, a);
    }
    let t = (p.sub(&a).dot(&ab) / len2).clamp(0.0, 1.0);
    horizontal_distance(p, a.offset(ab, t))
}

fn is_simple_polygon(poly: &[Position2D]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        if horizontal_distance(a1, a2) == 0.0 {
            return false;
        }
        for j in (i + 1)..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

fn orient(a: Position2D, b: Position2D, c: Position2D) -> f64 {
    b.sub(&a).cross(&c.sub(&a))
}

fn segments_intersect(p1: Position2D, p2: Position2D, q1: Position2D, q2: Position2D) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Position2D, b: Position2D, c: Position2D, d: f64| {
        d == 0.0
            && c.x >= a.x.min(b.x)
            && c.x <= a.x.max(b.x)
            && c.y >= a.y.min(b.y)
            && c.y <= a.y.max(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fl(v: u32) -> FlightLevel {
        FlightLevel::new(v).unwrap()
    }

    fn unit_square() -> Sector {
        Sector::new(
            vec![
                Position2D::new(0.0, 0.0),
                Position2D::new(1.0, 0.0),
                Position2D::new(1.0, 1.0),
                Position2D::new(0.0, 1.0),
            ],
            fl(150),
            fl(460),
        )
        .unwrap()
    }

    #[test]
    fn distance_examples() {
        let p = Position2D::new;
        assert_eq!(horizontal_distance(p(0.0, 0.0), p(3.0, 4.0)), 5.0);
        assert_eq!(horizontal_distance(p(1.0, 1.0), p(1.0, 1.0)), 0.0);
        assert_eq!(horizontal_distance(p(-2.0, 0.0), p(2.0, 0.0)), 4.0);
    }

    #[test]
    fn track_examples() {
        let p = Position2D::new;
        assert_eq!(track_between(p(0.0, 0.0), p(0.0, 10.0)).unwrap(), 0.0);
        assert!((track_between(p(0.0, 0.0), p(10.0, 0.0)).unwrap() - 90.0).abs() < 1e-12);
        assert!((track_between(p(0.0, 0.0), p(-5.0, -5.0)).unwrap() - 225.0).abs() < 1e-12);
        assert!(matches!(
            track_between(p(1.0, 1.0), p(1.0, 1.0)),
            Err(Error::DegenerateGeometry(_))
        ));
    }

    #[test]
    fn contains_examples() {
        let s = unit_square();
        assert!(contains(&s, Position2D::new(0.5, 0.5), 300.0));
        assert!(!contains(&s, Position2D::new(100.5, 0.5), 300.0));
        assert!(!contains(&s, Position2D::new(0.5, 0.5), 470.0));
        // boundary and vertical limits are inclusive
        assert!(contains(&s, Position2D::new(1.0, 0.5), 460.0));
        assert!(contains(&s, Position2D::new(0.0, 0.0), 150.0));
    }

    #[test]
    fn angular_difference_examples() {
        assert_eq!(angular_difference(350.0, 10.0), 20.0);
        assert_eq!(angular_difference(0.0, 180.0), 180.0);
        assert_eq!(angular_difference(90.0, 90.0), 0.0);
    }

    #[test]
    fn rejects_bad_sectors() {
        let bowtie = vec![
            Position2D::new(0.0, 0.0),
            Position2D::new(1.0, 1.0),
            Position2D::new(1.0, 0.0),
            Position2D::new(0.0, 1.0),
        ];
        assert!(Sector::new(bowtie, fl(100), fl(200)).is_err());
        assert!(Sector::square(10.0, fl(200), fl(200)).is_err());
        assert!(Sector::new(vec![Position2D::default(); 2], fl(100), fl(200)).is_err());
    }

    #[test]
    fn waypoint_names() {
        assert!(Waypoint::new("ABCDE", Position2D::default()).is_ok());
        assert!(Waypoint::new("", Position2D::default()).is_err());
        assert!(Waypoint::new("abc", Position2D::default()).is_err());
        assert!(Waypoint::new("ABCDEF", Position2D::default()).is_err());
    }

    #[test]
    fn route_rules() {
        assert!(Route::new(vec!["A".into()]).is_err());
        assert!(Route::new(vec!["A".into(), "A".into()]).is_err());
        assert!(Route::new(vec!["A".into(), "B".into()]).is_ok());
    }

    fn pos() -> impl Strategy<Value = Position2D> {
        (-500.0..500.0f64, -500.0..500.0f64).prop_map(|(x, y)| Position2D::new(x, y))
    }

    proptest! {
        #[test]
        fn triangle_inequality(a in pos(), b in pos(), c in pos()) {
            let ab = horizontal_distance(a, b);
            let bc = horizontal_distance(b, c);
            let ac = horizontal_distance(a, c);
            prop_assert!(ac <= ab + bc + 1e-9);
            prop_assert_eq!(ab, horizontal_distance(b, a));
        }

        #[test]
        fn reverse_track_differs_by_180(a in pos(), b in pos()) {
            prop_assume!(horizontal_distance(a, b) > 1e-6);
            let fwd = track_between(a, b).unwrap();
            let back = track_between(b, a).unwrap();
            prop_assert!((angular_difference(fwd, back) - 180.0).abs() < 1e-9);
        }

        #[test]
        fn contains_ignores_vertex_rotation(p in pos(), k in 0usize..5) {
            let poly = vec![
                Position2D::new(-100.0, -80.0),
                Position2D::new(120.0, -90.0),
                Position2D::new(150.0, 60.0),
                Position2D::new(10.0, 40.0),
                Position2D::new(-90.0, 110.0),
            ];
            let mut rotated = poly.clone();
            rotated.rotate_left(k);
            let s1 = Sector::new(poly, fl(100), fl(400)).unwrap();
            let s2 = Sector::new(rotated, fl(100), fl(400)).unwrap();
            prop_assert_eq!(contains(&s1, p, 200.0), contains(&s2, p, 200.0));
        }

        #[test]
        fn angular_difference_symmetric(a in 0.0..360.0f64, b in 0.0..360.0f64) {
            let d = angular_difference(a, b);
            prop_assert!((0.0..=180.0).contains(&d));
            prop_assert_eq!(d, angular_difference(b, a));
        }
    }
}
