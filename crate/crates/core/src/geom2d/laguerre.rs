use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    intersect_convex, polygon_moments, raw_moments, Domain, LabelledPolygon, Point, Polygon,
    BOUNDARY, CLIP_TOLERANCE,
};
use crate::error::{Error, Result};

/// Ordered list of seed points.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedConfig(Vec<Point>);

impl SeedConfig {
    pub fn new(points: Vec<Point>) -> Self {
        SeedConfig(points)
    }

    /// Interprets `[x0, y0, x1, y1, …]`.
    pub fn from_flat(flat: &[f64]) -> Self {
        SeedConfig(
            flat.chunks_exact(2)
                .map(|c| Point::new(c[0], c[1]))
                .collect(),
        )
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.0.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn points(&self) -> &[Point] {
        &self.0
    }

    pub fn into_points(self) -> Vec<Point> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// First pair of exactly coincident seeds, if any.
    pub fn coincident_pair(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.0.len()).collect();
        order.sort_by(|&a, &b| {
            let (p, q) = (self.0[a], self.0[b]);
            p.x.total_cmp(&q.x)
                .then(p.y.total_cmp(&q.y))
                .then(a.cmp(&b))
        });
        order
            .windows(2)
            .find(|w| self.0[w[0]] == self.0[w[1]])
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }

    /// Membership in the set of distinct seed configurations.
    pub fn is_distinct(&self) -> bool {
        self.coincident_pair().is_none()
    }

    /// Smallest pairwise distance; infinite for fewer than two seeds.
    pub fn min_pairwise_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.0.iter().enumerate() {
            for b in &self.0[i + 1..] {
                best = best.min((*a - *b).norm_sq());
            }
        }
        best.sqrt()
    }

    /// `λ·x_i + t` for every seed.
    pub fn dilate_translate(&self, lambda: f64, t: Point) -> SeedConfig {
        SeedConfig(self.0.iter().map(|&p| p * lambda + t).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|p| p.is_finite())
    }
}

impl From<Vec<Point>> for SeedConfig {
    fn from(v: Vec<Point>) -> Self {
        SeedConfig(v)
    }
}

/// Seed weights; `normalized` records that the last weight is zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
    normalized: bool,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Self {
        let normalized = weights.last().is_none_or(|&w| w == 0.0);
        WeightVector {
            weights,
            normalized,
        }
    }

    pub fn zeros(n: usize) -> Self {
        WeightVector::new(vec![0.0; n])
    }

    /// Shifts all weights so that the last one is zero.
    pub fn normalized(mut self) -> Self {
        if let Some(&last) = self.weights.last() {
            for w in &mut self.weights {
                *w -= last;
            }
        }
        self.normalized = true;
        self
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// A pair of adjacent cells and the length of their shared edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LaguerreDiagram {
    pub cells: Vec<Polygon>,
    pub areas: Vec<f64>,
    pub centroids: Vec<Option<Point>>,
    pub edges: Vec<Edge>,
}

impl LaguerreDiagram {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Index of the first empty cell.
    pub fn first_empty_cell(&self) -> Option<usize> {
        self.areas.iter().position(|&a| a <= 0.0)
    }

    pub fn min_area(&self) -> f64 {
        self.areas.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Power diagram of `(seeds, weights)` restricted to `domain`.
///
/// Coincident seeds resolve in favour of the larger weight; on equal weights
/// the lower index keeps the cell and the other is empty.
pub fn build_laguerre(
    domain: &Domain,
    seeds: &SeedConfig,
    weights: &WeightVector,
) -> Result<LaguerreDiagram> {
    let n = seeds.len();
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: n,
            found: weights.len(),
        });
    }
    if !seeds.is_finite() {
        return Err(Error::NonFinite("seeds"));
    }
    if weights.as_slice().iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("weights"));
    }
    let x = seeds.points();
    let w = weights.as_slice();
    let diam = domain.diameter();

    let build_cell = |i: usize| -> LabelledPolygon { laguerre_cell(domain, x, w, i) };
    let labelled: Vec<LabelledPolygon> = if n >= 32 {
        (0..n).into_par_iter().map(build_cell).collect()
    } else {
        (0..n).map(build_cell).collect()
    };

    // per-cell shared-edge lengths keyed by neighbour
    let mut lengths: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, cell) in labelled.iter().enumerate() {
        let m = cell.vertices.len();
        for k in 0..m {
            let j = cell.labels[k];
            if j == BOUNDARY {
                continue;
            }
            let len = (cell.vertices[(k + 1) % m] - cell.vertices[k]).norm();
            match lengths[i].iter_mut().find(|(nb, _)| *nb == j) {
                Some(e) => e.1 += len,
                None => lengths[i].push((j, len)),
            }
        }
    }
    let lookup = |i: usize, j: usize| lengths[i].iter().find(|e| e.0 == j).map(|e| e.1);
    let mut pairs: Vec<(usize, usize)> = lengths
        .iter()
        .enumerate()
        .flat_map(|(i, l)| l.iter().map(move |&(j, _)| (i.min(j), i.max(j))))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let edges: Vec<Edge> = pairs
        .into_iter()
        .filter_map(|(i, j)| {
            let length = match (lookup(i, j), lookup(j, i)) {
                (Some(a), Some(b)) => 0.5 * (a + b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => return None,
            };
            (length > 1e-12 * diam).then_some(Edge { i, j, length })
        })
        .collect();

    let cells: Vec<Polygon> = labelled.into_iter().map(|c| c.into_polygon()).collect();
    let mut areas = Vec::with_capacity(n);
    let mut centroids = Vec::with_capacity(n);
    for c in &cells {
        let m = polygon_moments(c);
        areas.push(m.area);
        centroids.push(m.centroid);
    }
    Ok(LaguerreDiagram {
        cells,
        areas,
        centroids,
        edges,
    })
}

fn laguerre_cell(domain: &Domain, x: &[Point], w: &[f64], i: usize) -> LabelledPolygon {
    let n = x.len();
    let xi = x[i];
    let diam = domain.diameter();
    let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    order.sort_by(|&a, &b| {
        (x[a] - xi)
            .norm_sq()
            .total_cmp(&(x[b] - xi).norm_sq())
            .then(a.cmp(&b))
    });
    let mut cell = LabelledPolygon::from_polygon(domain.boundary(), BOUNDARY);
    let xi_sq = xi.norm_sq();
    for j in order {
        let d = x[j] - xi;
        if d == Point::ZERO {
            let keep = w[i] > w[j] || (w[i] == w[j] && i < j);
            if keep {
                continue;
            }
            return LabelledPolygon::empty();
        }
        // |x−x_i|² − w_i ≤ |x−x_j|² − w_j  ⇔  2(x_j−x_i)·x ≤ |x_j|²−|x_i|²−w_j+w_i
        let normal = d * 2.0;
        let offset = x[j].norm_sq() - xi_sq - w[j] + w[i];
        let tol = CLIP_TOLERANCE * diam * normal.norm();
        if let Some(clipped) = cell.clip(normal, offset, j, tol) {
            cell = clipped;
            if cell.is_empty() {
                return cell;
            }
        }
    }
    cell
}

/// `∫_cell |x − seed|² dx`.
pub fn cell_transport_cost(cell: &Polygon, seed: Point) -> f64 {
    if cell.is_empty() {
        return 0.0;
    }
    raw_moments(cell, seed).2.max(0.0)
}

/// Per-cell area of the symmetric difference of two diagrams, and the total.
pub fn diagram_symmetric_difference(
    a: &LaguerreDiagram,
    b: &LaguerreDiagram,
) -> Result<(Vec<f64>, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            what: "diagram cells",
            expected: a.len(),
            found: b.len(),
        });
    }
    let per_cell: Vec<f64> = a
        .cells
        .iter()
        .zip(&b.cells)
        .map(|(p, q)| {
            let common = intersect_convex(p, q).area();
            (p.area() + q.area() - 2.0 * common).max(0.0)
        })
        .collect();
    let total = per_cell.iter().sum();
    Ok((per_cell, total))
}
