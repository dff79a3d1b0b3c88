use serde::{Deserialize, Serialize};

use super::{polygon_moments, Point, Polygon};
use crate::error::{Error, Result};

/// A convex polygonal region with its moments cached.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct Domain {
    boundary: Polygon,
    area: f64,
    centroid: Point,
    second_moment: f64,
    diameter: f64,
    lower: Point,
    upper: Point,
    rectangle: bool,
}

#[derive(Serialize, Deserialize)]
struct DomainRepr {
    boundary: Vec<Point>,
}

impl TryFrom<DomainRepr> for Domain {
    type Error = Error;
    fn try_from(r: DomainRepr) -> Result<Self> {
        Domain::new(r.boundary)
    }
}

impl From<Domain> for DomainRepr {
    fn from(d: Domain) -> Self {
        DomainRepr {
            boundary: d.boundary.vertices().to_vec(),
        }
    }
}

impl Domain {
    /// Builds a domain from the vertices of a convex polygon in either
    /// orientation.
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidDomain("fewer than three vertices".into()));
        }
        if vertices.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("domain vertices"));
        }
        let boundary = Polygon::new(vertices);
        let v = boundary.vertices();
        let n = v.len();
        let scale = boundary.extent_sq();
        for k in 0..n {
            let turn = (v[(k + 1) % n] - v[k]).cross(v[(k + 2) % n] - v[(k + 1) % n]);
            if turn < -1e-12 * scale {
                return Err(Error::InvalidDomain(format!(
                    "not convex at vertex {}",
                    (k + 1) % n
                )));
            }
        }
        let m = polygon_moments(&boundary);
        let centroid = m
            .centroid
            .ok_or_else(|| Error::InvalidDomain("zero area".into()))?;
        let mut lower = v[0];
        let mut upper = v[0];
        for p in v {
            lower = Point::new(lower.x.min(p.x), lower.y.min(p.y));
            upper = Point::new(upper.x.max(p.x), upper.y.max(p.y));
        }
        let rectangle =
            n == 4 && (m.area - (upper.x - lower.x) * (upper.y - lower.y)).abs() <= 1e-12 * m.area;
        Ok(Domain {
            area: m.area,
            centroid,
            second_moment: m.second_moment,
            diameter: scale.sqrt(),
            boundary,
            lower,
            upper,
            rectangle,
        })
    }

    /// `[0, width] × [0, height]`.
    pub fn rectangle(width: f64, height: f64) -> Result<Self> {
        Self::rectangle_at(Point::ZERO, width, height)
    }

    pub fn rectangle_at(origin: Point, width: f64, height: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "rectangle needs positive extent, got {width} × {height}"
            )));
        }
        let p = Polygon::rectangle(origin.x, origin.y, origin.x + width, origin.y + height);
        Self::new(p.vertices().to_vec())
    }

    pub fn unit_square() -> Self {
        Self::rectangle(1.0, 1.0).expect("unit square is valid")
    }

    pub fn boundary(&self) -> &Polygon {
        &self.boundary
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn centroid(&self) -> Point {
        self.centroid
    }

    /// `∫_Ω |x|² dx`.
    pub fn second_moment(&self) -> f64 {
        self.second_moment
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Lower-left and upper-right corners of the bounding box.
    pub fn bounding_box(&self) -> (Point, Point) {
        (self.lower, self.upper)
    }

    /// Width of the bounding box along the wider axis.
    pub fn width(&self) -> f64 {
        (self.upper.x - self.lower.x).max(self.upper.y - self.lower.y)
    }

    /// Whether the domain is an axis-aligned rectangle.
    pub fn is_rectangle(&self) -> bool {
        self.rectangle
    }

    pub fn contains(&self, p: Point) -> bool {
        self.boundary.contains(p, 1e-12 * self.diameter)
    }

    /// Scale used for dimensionally consistent tolerances: `area · diam`.
    pub fn scale(&self) -> f64 {
        self.area * self.diameter
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_square_moments() {
        let d = Domain::unit_square();
        assert_eq!(d.area(), 1.0);
        assert_eq!(d.centroid(), Point::new(0.5, 0.5));
        assert!((d.second_moment() - 2.0 / 3.0).abs() < 1e-15);
        assert!((d.diameter() - 2f64.sqrt()).abs() < 1e-15);
        assert!(d.is_rectangle());
    }

    #[test]
    fn rejects_nonconvex() {
        let r = Domain::new(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(1.0, 0.5),
            Point::new(2.0, 2.0),
            Point::new(0.0, 2.0),
        ]);
        assert!(matches!(r, Err(Error::InvalidDomain(_))));
    }

    #[test]
    fn triangle_is_not_rectangle() {
        let d = Domain::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ])
        .unwrap();
        assert!(!d.is_rectangle());
        assert!((d.area() - 0.5).abs() < 1e-15);
        assert!(d.contains(Point::new(0.2, 0.2)));
        assert!(!d.contains(Point::new(0.8, 0.8)));
    }

    #[test]
    fn serde_roundtrip() {
        let d = Domain::rectangle(2.0, 3.0).unwrap();
        let s = serde_json::to_string(&d).unwrap();
        let back: Domain = serde_json::from_str(&s).unwrap();
        assert_eq!(d, back);
    }
}
