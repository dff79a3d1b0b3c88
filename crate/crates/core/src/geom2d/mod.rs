//! Planar convex-polygon arithmetic and Laguerre (power) diagrams.
//!
//! Cells are built by clipping the domain against the bisector half-planes of
//! every other seed. All moment computations use exact per-edge Green's
//! theorem formulas, so areas, centroids and quadratic moments of the cells
//! are exact up to floating-point rounding.

mod domain;
mod laguerre;
mod point;

pub use domain::Domain;
pub use laguerre::{
    build_laguerre, cell_transport_cost, diagram_symmetric_difference, Edge, LaguerreDiagram,
    SeedConfig, WeightVector,
};
pub use point::Point;

use serde::{Deserialize, Serialize};

/// Relative clipping tolerance; multiplied by the extent of the polygon being
/// clipped it gives the distance below which a vertex counts as on the line.
pub const CLIP_TOLERANCE: f64 = 1e-12;

/// A convex polygon with counterclockwise vertices. An empty vertex list is
/// the empty polygon.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polygon {
    vertices: Vec<Point>,
}

/// Area, centroid and `∫|x|² dx` of a polygon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Moments {
    pub area: f64,
    pub centroid: Option<Point>,
    pub second_moment: f64,
}

impl Polygon {
    /// Wraps a vertex list, reversing it if it is clockwise.
    pub fn new(mut vertices: Vec<Point>) -> Self {
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        Polygon { vertices }
    }

    pub fn empty() -> Self {
        Polygon::default()
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Polygon {
            vertices: vec![
                Point::new(x0, y0),
                Point::new(x1, y0),
                Point::new(x1, y1),
                Point::new(x0, y1),
            ],
        }
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    /// Shoelace area.
    pub fn area(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            signed_area(&self.vertices).max(0.0)
        }
    }

    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |k| (self.vertices[k], self.vertices[(k + 1) % n]))
    }

    /// Squared diameter of the vertex set, used to scale tolerances.
    pub fn extent_sq(&self) -> f64 {
        let mut best: f64 = 0.0;
        for (k, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[k + 1..] {
                best = best.max((*a - *b).norm_sq());
            }
        }
        best
    }

    pub fn translate(&self, by: Point) -> Polygon {
        Polygon {
            vertices: self.vertices.iter().map(|&v| v + by).collect(),
        }
    }

    /// True when `p` is inside or on the boundary, up to `tol` in distance.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        if self.is_empty() {
            return false;
        }
        self.edges().all(|(a, b)| {
            let e = b - a;
            let len = e.norm();
            len == 0.0 || e.cross(p - a) / len >= -tol
        })
    }

    /// Distance from an interior point to the boundary (negative outside).
    pub fn signed_boundary_distance(&self, p: Point) -> f64 {
        self.edges()
            .filter_map(|(a, b)| {
                let e = b - a;
                let len = e.norm();
                (len > 0.0).then(|| e.cross(p - a) / len)
            })
            .fold(f64::INFINITY, f64::min)
    }
}

fn signed_area(vertices: &[Point]) -> f64 {
    let n = vertices.len();
    if n < 3 {
        return 0.0;
    }
    let origin = vertices[0];
    let mut twice = 0.0;
    for k in 1..n - 1 {
        twice += (vertices[k] - origin).cross(vertices[k + 1] - origin);
    }
    0.5 * twice
}

/// Intersection of `poly` with the half-plane `{x : normal·x ≤ offset}`.
pub fn clip_halfplane(poly: &Polygon, normal: Point, offset: f64) -> Polygon {
    let labelled = LabelledPolygon::from_polygon(poly, 0);
    let tol = CLIP_TOLERANCE * poly.extent_sq().sqrt() * normal.norm();
    match labelled.clip(normal, offset, 0, tol) {
        Some(p) => p.into_polygon(),
        None => poly.clone(),
    }
}

/// Intersection of two convex polygons.
pub fn intersect_convex(a: &Polygon, b: &Polygon) -> Polygon {
    if a.is_empty() || b.is_empty() {
        return Polygon::empty();
    }
    let mut out = a.clone();
    for (p, q) in b.edges() {
        // interior of a ccw polygon lies to the left of each edge
        let e = q - p;
        let normal = Point::new(e.y, -e.x);
        out = clip_halfplane(&out, normal, normal.dot(p));
        if out.is_empty() {
            break;
        }
    }
    out
}

/// Exact area, centroid and second moment `∫|x|²` of a polygon.
pub fn polygon_moments(poly: &Polygon) -> Moments {
    if poly.is_empty() {
        return Moments {
            area: 0.0,
            centroid: None,
            second_moment: 0.0,
        };
    }
    // Integrate about the first vertex to limit cancellation, then shift.
    let r = poly.vertices[0];
    let (area, first, second) = raw_moments(poly, r);
    if area <= 0.0 {
        return Moments {
            area: 0.0,
            centroid: None,
            second_moment: 0.0,
        };
    }
    let centroid = r + first * (1.0 / area);
    let second_moment = second + 2.0 * r.dot(first) + r.norm_sq() * area;
    Moments {
        area,
        centroid: Some(centroid),
        second_moment,
    }
}

/// Returns `(∫1, ∫(x − r), ∫|x − r|²)` over the polygon.
pub(crate) fn raw_moments(poly: &Polygon, r: Point) -> (f64, Point, f64) {
    let mut a2 = 0.0;
    let mut mx = 0.0;
    let mut my = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (p, q) in poly.edges() {
        let p = p - r;
        let q = q - r;
        let c = p.cross(q);
        a2 += c;
        mx += (p.x + q.x) * c;
        my += (p.y + q.y) * c;
        sxx += (p.x * p.x + p.x * q.x + q.x * q.x) * c;
        syy += (p.y * p.y + p.y * q.y + q.y * q.y) * c;
    }
    (0.5 * a2, Point::new(mx / 6.0, my / 6.0), (sxx + syy) / 12.0)
}

/// Label for edges that come from the domain boundary.
pub(crate) const BOUNDARY: usize = usize::MAX;

/// Convex polygon whose edge `k` (from vertex `k` to `k + 1`) carries the
/// index of the half-plane that created it.
#[derive(Clone, Debug)]
pub(crate) struct LabelledPolygon {
    pub vertices: Vec<Point>,
    pub labels: Vec<usize>,
}

impl LabelledPolygon {
    pub fn from_polygon(poly: &Polygon, label: usize) -> Self {
        LabelledPolygon {
            vertices: poly.vertices.clone(),
            labels: vec![label; poly.vertices.len()],
        }
    }

    pub fn empty() -> Self {
        LabelledPolygon {
            vertices: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.len() < 3
    }

    /// Clips against `normal·x ≤ offset`; `None` means the polygon was left
    /// untouched.
    pub fn clip(&self, normal: Point, offset: f64, label: usize, tol: f64) -> Option<Self> {
        let n = self.vertices.len();
        if n < 3 {
            return None;
        }
        let mut hi = f64::NEG_INFINITY;
        let mut lo = f64::INFINITY;
        for v in &self.vertices {
            let d = normal.dot(*v) - offset;
            hi = hi.max(d);
            lo = lo.min(d);
        }
        if hi <= tol {
            return None;
        }
        if lo >= -tol {
            return Some(LabelledPolygon::empty());
        }
        let dist: Vec<f64> = self
            .vertices
            .iter()
            .map(|v| normal.dot(*v) - offset)
            .collect();
        let mut vertices = Vec::with_capacity(n + 1);
        let mut labels = Vec::with_capacity(n + 1);
        for k in 0..n {
            let kn = (k + 1) % n;
            let (p, q) = (self.vertices[k], self.vertices[kn]);
            let (dp, dq) = (dist[k], dist[kn]);
            let p_in = dp <= tol;
            let q_in = dq <= tol;
            if p_in {
                vertices.push(p);
                labels.push(self.labels[k]);
            }
            if p_in != q_in {
                let strictly_crosses = (dp < -tol && dq > tol) || (dp > tol && dq < -tol);
                if strictly_crosses {
                    let t = dp / (dp - dq);
                    let x = p + (q - p) * t;
                    vertices.push(x);
                    labels.push(if p_in { label } else { self.labels[k] });
                } else if p_in {
                    // p sits on the line and q is outside: the next kept edge
                    // runs along the cut
                    if let Some(l) = labels.last_mut() {
                        *l = label;
                    }
                }
            }
        }
        let mut out = LabelledPolygon { vertices, labels };
        out.dedup(tol / normal.norm());
        if out.is_empty() {
            return Some(LabelledPolygon::empty());
        }
        Some(out)
    }

    /// Removes consecutive vertices closer than `tol`.
    fn dedup(&mut self, tol: f64) {
        let tol_sq = tol * tol;
        let mut vertices: Vec<Point> = Vec::with_capacity(self.vertices.len());
        let mut labels: Vec<usize> = Vec::with_capacity(self.vertices.len());
        for (&v, &l) in self.vertices.iter().zip(&self.labels) {
            match vertices.last() {
                // the merged vertex keeps the label of the edge leaving it
                Some(&last) if (last - v).norm_sq() <= tol_sq => *labels.last_mut().unwrap() = l,
                _ => {
                    vertices.push(v);
                    labels.push(l);
                }
            }
        }
        while vertices.len() >= 2 && (vertices[0] - *vertices.last().unwrap()).norm_sq() <= tol_sq {
            // the dropped closing edge has zero length
            vertices.pop();
            labels.pop();
        }
        if signed_area(&vertices) <= 0.0 {
            vertices.clear();
            labels.clear();
        }
        self.vertices = vertices;
        self.labels = labels;
    }

    pub fn into_polygon(self) -> Polygon {
        if self.is_empty() {
            Polygon::empty()
        } else {
            Polygon {
                vertices: self.vertices,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square() -> Polygon {
        Polygon::rectangle(0.0, 0.0, 1.0, 1.0)
    }

    #[test]
    fn axis_aligned_cut() {
        let cut = clip_halfplane(&unit_square(), Point::new(1.0, 0.0), 0.5);
        assert_relative_eq!(cut.area(), 0.5, epsilon = 1e-15);
        let m = polygon_moments(&cut);
        let c = m.centroid.unwrap();
        assert_relative_eq!(c.x, 0.25, epsilon = 1e-15);
        assert_relative_eq!(c.y, 0.5, epsilon = 1e-15);
        for v in cut.vertices() {
            assert!(v.x <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn non_intersecting_halfplane_is_identity() {
        let sq = unit_square();
        assert_eq!(clip_halfplane(&sq, Point::new(1.0, 0.0), 2.0), sq);
    }

    #[test]
    fn diagonal_cut_gives_triangle() {
        let tri = clip_halfplane(&unit_square(), Point::new(1.0, 1.0), 0.5);
        assert_eq!(tri.len(), 3);
        assert_relative_eq!(tri.area(), 0.125, epsilon = 1e-15);
        for v in tri.vertices() {
            assert!((v.x + v.y - 0.5).abs() < 1e-12 || v.x + v.y < 0.5);
        }
    }

    #[test]
    fn cut_removing_everything() {
        let none = clip_halfplane(&unit_square(), Point::new(1.0, 0.0), -0.1);
        assert!(none.is_empty());
        assert_eq!(none.area(), 0.0);
    }

    #[test]
    fn cut_through_vertex() {
        // line x + y = 1 passes through (1,0) and (0,1)
        let tri = clip_halfplane(&unit_square(), Point::new(1.0, 1.0), 1.0);
        assert_relative_eq!(tri.area(), 0.5, epsilon = 1e-15);
        assert_eq!(tri.len(), 3);
    }

    #[test]
    fn unit_square_moments() {
        let m = polygon_moments(&unit_square());
        assert_relative_eq!(m.area, 1.0);
        assert_eq!(m.centroid, Some(Point::new(0.5, 0.5)));
        assert_relative_eq!(m.second_moment, 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn empty_moments() {
        let m = polygon_moments(&Polygon::empty());
        assert_eq!(m.area, 0.0);
        assert!(m.centroid.is_none());
        assert_eq!(m.second_moment, 0.0);
    }

    #[test]
    fn clockwise_input_is_reoriented() {
        let cw = Polygon::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
        ]);
        assert_relative_eq!(cw.area(), 1.0);
    }

    #[test]
    fn intersection_of_overlapping_squares() {
        let a = unit_square();
        let b = Polygon::rectangle(0.5, 0.25, 1.5, 2.0);
        assert_relative_eq!(intersect_convex(&a, &b).area(), 0.375, epsilon = 1e-14);
        let far = Polygon::rectangle(3.0, 3.0, 4.0, 4.0);
        assert!(intersect_convex(&a, &far).is_empty());
    }

    #[test]
    fn labels_track_the_cut() {
        let sq = LabelledPolygon::from_polygon(&unit_square(), BOUNDARY);
        let cut = sq.clip(Point::new(1.0, 0.0), 0.5, 7, 1e-12).unwrap();
        let on_cut: Vec<_> = cut
            .labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == 7)
            .collect();
        assert_eq!(on_cut.len(), 1);
        let k = on_cut[0].0;
        let a = cut.vertices[k];
        let b = cut.vertices[(k + 1) % cut.vertices.len()];
        assert_relative_eq!(a.x, 0.5);
        assert_relative_eq!(b.x, 0.5);
        assert_relative_eq!((a - b).norm(), 1.0);
    }

    #[test]
    fn boundary_distance() {
        let sq = unit_square();
        assert_relative_eq!(sq.signed_boundary_distance(Point::new(0.2, 0.5)), 0.2);
        assert!(sq.signed_boundary_distance(Point::new(-0.1, 0.5)) < 0.0);
        assert!(sq.contains(Point::new(1.0, 1.0), 1e-12));
        assert!(!sq.contains(Point::new(1.1, 1.0), 1e-12));
    }
}
