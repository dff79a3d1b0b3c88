//! Anisotropic Laguerre cells `{x : |x − x_i|²_{A_i} − w_i ≤ |x − x_j|²_{A_j} − w_j}`
//! on a pixel raster.
//!
//! Cell boundaries are conic arcs, so instead of clipping polygons the
//! domain's bounding box is divided into `g × g` pixels and each pixel
//! centre inside the domain is assigned to the cell of smallest power.
//! Areas and centroids are pixel sums. The weight solve is a damped Newton
//! iteration whose Hessian is estimated from the pixels lying within a
//! band of 1.5 pixel widths around each cell boundary.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{
    active_pairs, constrained_optimize, optimizer_options, trace_row, Evaluation, FitOptions,
    Objective, RecoveryStart, SeedConstraints, Termination, TraceRow,
};
use crate::geom2d::{Domain, Point, SeedConfig, WeightVector};
use crate::ingest::LabelGrid;
use crate::objective::TargetData;
use crate::sdot::solve_reduced;
use crate::synth::sample_uniform;

/// Label of pixels whose centre lies outside the domain.
pub const MASKED: u32 = u32::MAX;

const BAND_PIXELS: f64 = 1.5;

/// Symmetric 2×2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 {
        a11: 1.0,
        a12: 0.0,
        a22: 1.0,
    };

    pub fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Sym2 { a11, a12, a22 }
    }

    pub fn diag(a11: f64, a22: f64) -> Self {
        Sym2::new(a11, 0.0, a22)
    }

    /// `R(θ) diag(l1, l2) R(θ)ᵀ`.
    pub fn rotated(l1: f64, l2: f64, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Sym2::new(
            l1 * c * c + l2 * s * s,
            (l1 - l2) * c * s,
            l1 * s * s + l2 * c * c,
        )
    }

    #[inline]
    pub fn apply(&self, p: Point) -> Point {
        Point::new(
            self.a11 * p.x + self.a12 * p.y,
            self.a12 * p.x + self.a22 * p.y,
        )
    }

    /// `pᵀ A p`.
    #[inline]
    pub fn quad(&self, p: Point) -> f64 {
        self.a11 * p.x * p.x + 2.0 * self.a12 * p.x * p.y + self.a22 * p.y * p.y
    }

    /// Eigenvalues in increasing order.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.a11 + self.a22);
        let r = (0.5 * (self.a11 - self.a22)).hypot(self.a12);
        (mean - r, mean + r)
    }
}

/// One symmetric positive-definite matrix per cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[[f64; 2]; 2]>", into = "Vec<[[f64; 2]; 2]>")]
pub struct AnisotropyMatrices(Vec<Sym2>);

impl AnisotropyMatrices {
    /// Validates symmetry (to 1e-12 relative) and positive definiteness
    /// (eigenvalues above 1e-10).
    pub fn new(matrices: Vec<[[f64; 2]; 2]>) -> Result<Self> {
        let mut out = Vec::with_capacity(matrices.len());
        for (index, m) in matrices.iter().enumerate() {
            let big = m.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidMatrix {
                    index,
                    reason: "non-finite entry".into(),
                });
            }
            if (m[0][1] - m[1][0]).abs() > 1e-12 * big {
                return Err(Error::InvalidMatrix {
                    index,
                    reason: "not symmetric".into(),
                });
            }
            out.push(Sym2::new(m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]));
        }
        Self::from_sym(out)
    }

    pub fn from_sym(matrices: Vec<Sym2>) -> Result<Self> {
        for (index, m) in matrices.iter().enumerate() {
            let (lo, _) = m.eigenvalues();
            if lo.is_nan() || lo <= 1e-10 {
                return Err(Error::InvalidMatrix {
                    index,
                    reason: format!("smallest eigenvalue {lo:e} is not positive"),
                });
            }
        }
        Ok(AnisotropyMatrices(matrices))
    }

    pub fn identity(n: usize) -> Self {
        AnisotropyMatrices(vec![Sym2::IDENTITY; n])
    }

    pub fn as_slice(&self) -> &[Sym2] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<[[f64; 2]; 2]>> for AnisotropyMatrices {
    type Error = Error;
    fn try_from(m: Vec<[[f64; 2]; 2]>) -> Result<Self> {
        AnisotropyMatrices::new(m)
    }
}

impl From<AnisotropyMatrices> for Vec<[[f64; 2]; 2]> {
    fn from(a: AnisotropyMatrices) -> Self {
        a.0.iter()
            .map(|m| [[m.a11, m.a12], [m.a12, m.a22]])
            .collect()
    }
}

/// `g × g` pixels over the domain's bounding box; pixels whose centre is
/// outside the domain are masked. Rows are numbered from the bottom.
#[derive(Clone, Debug)]
pub struct RasterGrid {
    resolution: usize,
    lower: Point,
    px: f64,
    py: f64,
    mask: Vec<bool>,
    active: usize,
}

impl RasterGrid {
    pub fn new(domain: &Domain, resolution: usize) -> Result<Self> {
        if resolution < 16 {
            return Err(Error::ResolutionTooCoarse(format!(
                "resolution {resolution} is below the minimum of 16"
            )));
        }
        let (lower, upper) = domain.bounding_box();
        let px = (upper.x - lower.x) / resolution as f64;
        let py = (upper.y - lower.y) / resolution as f64;
        let mask: Vec<bool> = if domain.is_rectangle() {
            vec![true; resolution * resolution]
        } else {
            (0..resolution * resolution)
                .map(|k| {
                    let (row, col) = (k / resolution, k % resolution);
                    domain.contains(Point::new(
                        lower.x + (col as f64 + 0.5) * px,
                        lower.y + (row as f64 + 0.5) * py,
                    ))
                })
                .collect()
        };
        let active = mask.iter().filter(|&&m| m).count();
        Ok(RasterGrid {
            resolution,
            lower,
            px,
            py,
            mask,
            active,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn pixel_area(&self) -> f64 {
        self.px * self.py
    }

    /// The longer pixel side.
    pub fn pixel_width(&self) -> f64 {
        self.px.max(self.py)
    }

    pub fn active_pixels(&self) -> usize {
        self.active
    }

    pub fn active_area(&self) -> f64 {
        self.active as f64 * self.pixel_area()
    }

    /// Centre of the pixel in `row` (from the bottom) and `col`.
    #[inline]
    pub fn center(&self, row: usize, col: usize) -> Point {
        Point::new(
            self.lower.x + (col as f64 + 0.5) * self.px,
            self.lower.y + (row as f64 + 0.5) * self.py,
        )
    }

    /// Labels every active pixel by its smallest power `|p − x_i|²_{A_i} − w_i`.
    pub fn diagram(
        &self,
        seeds: &SeedConfig,
        weights: &WeightVector,
        a: &AnisotropyMatrices,
    ) -> Result<RasterDiagram> {
        check_inputs(seeds, weights, a)?;
        Ok(self
            .pass(seeds.points(), weights.as_slice(), a.as_slice(), false)
            .0)
    }

    fn pass(
        &self,
        x: &[Point],
        w: &[f64],
        a: &[Sym2],
        band: bool,
    ) -> (RasterDiagram, Vec<(usize, usize, f64)>) {
        let n = x.len();
        let g = self.resolution;
        let pa = self.pixel_area();
        let width = BAND_PIXELS * self.pixel_width();
        let mut labels = vec![MASKED; g * g];
        let rows: Vec<RowSums> = labels
            .par_chunks_mut(g)
            .enumerate()
            .map(|(row, out)| {
                let mut acc = RowSums::new(n);
                for (col, label) in out.iter_mut().enumerate() {
                    if !self.mask[row * g + col] {
                        continue;
                    }
                    let p = self.center(row, col);
                    let (mut best, mut best_pow) = (0, f64::INFINITY);
                    let (mut second, mut second_pow) = (usize::MAX, f64::INFINITY);
                    for i in 0..n {
                        let pw = a[i].quad(p - x[i]) - w[i];
                        if pw < best_pow {
                            second = best;
                            second_pow = best_pow;
                            best = i;
                            best_pow = pw;
                        } else if pw < second_pow {
                            second = i;
                            second_pow = pw;
                        }
                    }
                    *label = best as u32;
                    acc.count[best] += 1;
                    acc.sum[best] += Point::new(col as f64 + 0.5, row as f64 + 0.5);
                    acc.cost[best] += best_pow + w[best];
                    if band && second != usize::MAX {
                        let grad =
                            (a[second].apply(p - x[second]) - a[best].apply(p - x[best])) * 2.0;
                        let gn = grad.norm();
                        if gn > 0.0 && second_pow - best_pow < width * gn {
                            let key = (best.min(second), best.max(second));
                            acc.band.push((key.0, key.1, pa / (2.0 * width * gn)));
                        }
                    }
                }
                acc
            })
            .collect();

        let mut count = vec![0usize; n];
        let mut sum = vec![Point::ZERO; n];
        let mut cost = 0.0;
        let mut couplings: HashMap<(usize, usize), f64> = HashMap::new();
        let mut order = Vec::new();
        for r in rows {
            for i in 0..n {
                count[i] += r.count[i];
                sum[i] += r.sum[i];
                cost += r.cost[i] * pa;
            }
            for (i, j, c) in r.band {
                let e = couplings.entry((i, j)).or_insert_with(|| {
                    order.push((i, j));
                    0.0
                });
                *e += c;
            }
        }
        let areas: Vec<f64> = count.iter().map(|&c| c as f64 * pa).collect();
        let centroids = (0..n)
            .map(|i| {
                (count[i] > 0).then(|| {
                    let m = sum[i] * (1.0 / count[i] as f64);
                    Point::new(self.lower.x + m.x * self.px, self.lower.y + m.y * self.py)
                })
            })
            .collect();
        let band = order
            .into_iter()
            .map(|k| (k.0, k.1, couplings[&k]))
            .collect();
        (
            RasterDiagram {
                resolution: g,
                lower: self.lower,
                pixel_size: (self.px, self.py),
                labels,
                counts: count,
                areas,
                centroids,
                transport_cost: cost,
            },
            band,
        )
    }

    /// Smallest increase of `w_i` that gives cell `i` at least one pixel.
    fn entry_shift(&self, x: &[Point], w: &[f64], a: &[Sym2], i: usize) -> f64 {
        let g = self.resolution;
        (0..g)
            .into_par_iter()
            .map(|row| {
                let mut m = f64::INFINITY;
                for col in 0..g {
                    if !self.mask[row * g + col] {
                        continue;
                    }
                    let p = self.center(row, col);
                    let best = (0..x.len())
                        .map(|j| a[j].quad(p - x[j]) - w[j])
                        .fold(f64::INFINITY, f64::min);
                    m = m.min(a[i].quad(p - x[i]) - w[i] - best);
                }
                m
            })
            .reduce(|| f64::INFINITY, f64::min)
    }

    /// For every ordered pair `(j, o)`, the two smallest margins
    /// `pow_j(p) − pow_o(p)` over pixels `p` owned by `o`: how far `w_j`
    /// must rise before cell `j` takes one, then two, of those pixels.
    fn margin_table(&self, x: &[Point], w: &[f64], a: &[Sym2]) -> Vec<[f64; 2]> {
        let n = x.len();
        let g = self.resolution;
        let merge = |mut t: Vec<[f64; 2]>, u: Vec<[f64; 2]>| {
            for (s, o) in t.iter_mut().zip(u) {
                for m in o {
                    push_smallest(s, m);
                }
            }
            t
        };
        (0..g)
            .into_par_iter()
            .fold(
                || vec![[f64::INFINITY; 2]; n * n],
                |mut t, row| {
                    let mut pow = vec![0.0; n];
                    for col in 0..g {
                        if !self.mask[row * g + col] {
                            continue;
                        }
                        let p = self.center(row, col);
                        let mut owner = 0;
                        for j in 0..n {
                            pow[j] = a[j].quad(p - x[j]) - w[j];
                            if pow[j] < pow[owner] {
                                owner = j;
                            }
                        }
                        for j in (0..n).filter(|&j| j != owner) {
                            push_smallest(&mut t[j * n + owner], pow[j] - pow[owner]);
                        }
                    }
                    t
                },
            )
            .reduce(|| vec![[f64::INFINITY; 2]; n * n], merge)
    }

    /// Moves single pixels along shortest augmenting paths until every
    /// cell is within `allowed` of its target.
    ///
    /// From the worst deficit cell, Dijkstra over the margin table finds the
    /// cheapest chain of cells ending at one that can spare a pixel. Raising
    /// each settled cell by its distance deficit puts one pixel on the tie of
    /// every chain link; the small offsets `eps` break those ties toward the
    /// root along the chain and away from it elsewhere, so each link passes
    /// exactly one pixel and the intermediate counts are unchanged.
    fn settle_counts(
        &self,
        x: &[Point],
        mut w: Vec<f64>,
        mut diagram: RasterDiagram,
        a: &[Sym2],
        targets: &[f64],
        allowed: &[f64],
    ) -> (Vec<f64>, RasterDiagram, usize) {
        let pa = self.pixel_area();
        let n = x.len();
        let mut steps = 0;
        while steps < SETTLE_STEPS_PER_CELL * n {
            let g: Vec<f64> = (0..n).map(|i| targets[i] - diagram.areas[i]).collect();
            let Some((worst, _)) = (0..n)
                .map(|i| (i, g[i] / allowed[i]))
                .filter(|p| p.1.abs() >= 1.0)
                .max_by(|p, q| p.1.abs().total_cmp(&q.1.abs()))
            else {
                break;
            };
            let (root, sinks): (usize, Vec<bool>) = if g[worst] > 0.0 {
                let sinks = (0..n)
                    .map(|e| e != worst && diagram.counts[e] > 1 && g[e] + pa < allowed[e])
                    .collect();
                (worst, sinks)
            } else {
                let root = (0..n)
                    .filter(|&i| i != worst)
                    .max_by(|&i, &j| g[i].total_cmp(&g[j]))
                    .expect("a surplus cell has a neighbour");
                (root, (0..n).map(|e| e == worst).collect())
            };
            let table = self.margin_table(x, &w, a);

            let mut dist = vec![f64::INFINITY; n];
            let mut parent = vec![usize::MAX; n];
            let mut settled = vec![false; n];
            dist[root] = 0.0;
            let mut sink = None;
            for _ in 0..n {
                let Some(j) = (0..n)
                    .filter(|&j| !settled[j] && dist[j].is_finite())
                    .min_by(|&i, &k| dist[i].total_cmp(&dist[k]))
                else {
                    break;
                };
                settled[j] = true;
                if sinks[j] {
                    sink = Some(j);
                    break;
                }
                for o in (0..n).filter(|&o| !settled[o]) {
                    let d = dist[j] + table[j * n + o][0];
                    if d < dist[o] {
                        dist[o] = d;
                        parent[o] = j;
                    }
                }
            }
            let Some(sink) = sink else { break };

            let mut chain = vec![sink];
            while *chain.last().expect("nonempty") != root {
                chain.push(parent[*chain.last().expect("nonempty")]);
            }
            chain.reverse();
            // the offsets must stay below every gap between a link's first
            // and second margins
            let gap = chain
                .windows(2)
                .map(|l| {
                    let [m0, m1] = table[l[0] * n + l[1]];
                    m1 - m0
                })
                .fold(f64::INFINITY, f64::min);
            if gap.is_nan() || gap <= 0.0 {
                break;
            }
            let len = chain.len();
            let eps = gap / (4.0 * (len + n) as f64);
            let mut depth = vec![0usize; n];
            for (j, dj) in depth.iter_mut().enumerate() {
                let mut k = j;
                while settled[k] && k != root {
                    *dj += 1;
                    k = parent[k];
                }
            }
            let top = dist[sink];
            for j in (0..n).filter(|&j| settled[j]) {
                let offset = match chain.iter().position(|&c| c == j) {
                    Some(t) => (len - 1 - t) as f64,
                    None => (len + depth[j]) as f64,
                };
                w[j] += top - dist[j] + eps * offset;
            }
            diagram = self.pass(x, &w, a, false).0;
            steps += 1;
        }
        (w, diagram, steps)
    }
}

fn push_smallest(s: &mut [f64; 2], m: f64) {
    if m < s[0] {
        s[1] = s[0];
        s[0] = m;
    } else if m < s[1] {
        s[1] = m;
    }
}

struct RowSums {
    count: Vec<usize>,
    sum: Vec<Point>,
    cost: Vec<f64>,
    band: Vec<(usize, usize, f64)>,
}

impl RowSums {
    fn new(n: usize) -> Self {
        RowSums {
            count: vec![0; n],
            sum: vec![Point::ZERO; n],
            cost: vec![0.0; n],
            band: Vec::new(),
        }
    }
}

fn check_inputs(seeds: &SeedConfig, weights: &WeightVector, a: &AnisotropyMatrices) -> Result<()> {
    let n = seeds.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    if weights.len() != n {
        return Err(Error::LengthMismatch {
            what: "weights",
            expected: n,
            found: weights.len(),
        });
    }
    if a.len() != n {
        return Err(Error::LengthMismatch {
            what: "anisotropy matrices",
            expected: n,
            found: a.len(),
        });
    }
    if !seeds.is_finite() {
        return Err(Error::NonFinite("seeds"));
    }
    if weights.as_slice().iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("weights"));
    }
    Ok(())
}

/// Pixel labels with per-cell areas and centroids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterDiagram {
    pub resolution: usize,
    pub lower: Point,
    /// Pixel width and height.
    pub pixel_size: (f64, f64),
    /// Row-major from the bottom row; [`MASKED`] outside the domain.
    pub labels: Vec<u32>,
    pub counts: Vec<usize>,
    pub areas: Vec<f64>,
    pub centroids: Vec<Option<Point>>,
    /// `Σ_i ∫_{cell i} |x − x_i|²_{A_i}` by pixel sums.
    pub transport_cost: f64,
}

impl RasterDiagram {
    /// Label of the pixel in `row` (from the bottom) and `col`.
    pub fn label(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.resolution + col]
    }

    /// Fraction of unmasked pixels carrying the same label in both rasters.
    pub fn label_agreement(&self, other: &RasterDiagram) -> f64 {
        let mut same = 0usize;
        let mut total = 0usize;
        for (a, b) in self.labels.iter().zip(&other.labels) {
            if *a != MASKED {
                total += 1;
                same += usize::from(a == b);
            }
        }
        same as f64 / total.max(1) as f64
    }

    /// The raster as a label grid, top row first. Requires square pixels
    /// and no masked pixels.
    pub fn to_label_grid(&self) -> Result<LabelGrid> {
        let (px, py) = self.pixel_size;
        if (px - py).abs() > 1e-12 * px.max(py) {
            return Err(Error::InvalidArgument(format!(
                "pixels are {px} × {py}; a label grid needs square pixels"
            )));
        }
        if self.labels.contains(&MASKED) {
            return Err(Error::InvalidArgument(
                "the domain is not the full bounding box".into(),
            ));
        }
        let g = self.resolution;
        let mut rows = Vec::with_capacity(g * g);
        for r in (0..g).rev() {
            rows.extend(self.labels[r * g..(r + 1) * g].iter().map(|&l| l as u64));
        }
        LabelGrid::new(g, g, px, self.lower, rows)
    }
}

/// Convenience form of [`RasterGrid::diagram`].
pub fn raster_diagram_aniso(
    domain: &Domain,
    seeds: &SeedConfig,
    weights: &WeightVector,
    a: &AnisotropyMatrices,
    resolution: usize,
) -> Result<RasterDiagram> {
    RasterGrid::new(domain, resolution)?.diagram(seeds, weights, a)
}

#[derive(Clone, Debug)]
pub struct AnisoReport {
    pub weights: WeightVector,
    pub diagram: RasterDiagram,
    pub iterations: usize,
    /// `max_i |m_i − v_i|`.
    pub max_area_error: f64,
    /// `K_A(w) = T_A + Σ w_i (v_i − m_i)`.
    pub dual_value: f64,
    /// Targets rescaled to the raster's total area.
    pub targets: Vec<f64>,
}

/// Maximum Newton steps and step halvings in the raster weight solve.
const MAX_NEWTON: usize = 100;
const SETTLE_STEPS_PER_CELL: usize = 20;
/// Residual norm, in pixel areas, below which the line search gives up early.
const QUANTUM_BAND: f64 = 64.0;
const MAX_HALVINGS: usize = 30;

/// Weights whose raster cells have areas `v`, to within
/// `max(tol_percent·v_i/100, pixel area)`.
pub fn solve_weights_aniso(
    domain: &Domain,
    seeds: &SeedConfig,
    v: &[f64],
    a: &AnisotropyMatrices,
    resolution: usize,
    tol_percent: f64,
) -> Result<AnisoReport> {
    let grid = RasterGrid::new(domain, resolution)?;
    solve_weights_raster(&grid, seeds, v, a, tol_percent, None)
}

/// [`solve_weights_aniso`] on a prepared grid, optionally warm-started.
pub fn solve_weights_raster(
    grid: &RasterGrid,
    seeds: &SeedConfig,
    v: &[f64],
    a: &AnisotropyMatrices,
    tol_percent: f64,
    warm: Option<&WeightVector>,
) -> Result<AnisoReport> {
    let n = seeds.len();
    let start = warm
        .filter(|w| w.len() == n && w.as_slice().iter().all(|x| x.is_finite()))
        .cloned()
        .unwrap_or_else(|| WeightVector::zeros(n));
    check_inputs(seeds, &start, a)?;
    if v.len() != n {
        return Err(Error::LengthMismatch {
            what: "target areas",
            expected: n,
            found: v.len(),
        });
    }
    if v.iter().any(|&vi| !(vi > 0.0 && vi.is_finite())) {
        return Err(Error::IncompatibleData(
            "target areas must be positive".into(),
        ));
    }
    if tol_percent.is_nan() || tol_percent <= 0.0 {
        return Err(Error::InvalidArgument(format!("tolerance {tol_percent}")));
    }
    let pa = grid.pixel_area();
    let total: f64 = v.iter().sum();
    let targets: Vec<f64> = v.iter().map(|vi| vi * grid.active_area() / total).collect();
    if let Some(i) = targets.iter().position(|&t| t < 4.0 * pa) {
        return Err(Error::ResolutionTooCoarse(format!(
            "target area of cell {i} covers fewer than 4 pixels"
        )));
    }
    let x = seeds.points();
    let mats = a.as_slice();
    let allowed: Vec<f64> = targets
        .iter()
        .map(|t| (tol_percent * t / 100.0).max(pa))
        .collect();

    let mut w = start.into_vec();
    let (mut diagram, mut band) = grid.pass(x, &w, mats, true);
    for _ in 0..n.max(4) {
        let Some(i) = diagram.counts.iter().position(|&c| c == 0) else {
            break;
        };
        let shift = grid.entry_shift(x, &w, mats, i);
        w[i] += shift + 1e-9 * shift.abs().max(pa);
        (diagram, band) = grid.pass(x, &w, mats, true);
    }
    if let Some(i) = diagram.counts.iter().position(|&c| c == 0) {
        return Err(Error::DegenerateStart(i));
    }
    let eps0 = 0.5
        * targets
            .iter()
            .chain(&diagram.areas)
            .copied()
            .fold(f64::INFINITY, f64::min);
    let norm = |g: &[f64]| g.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut iterations = 0;
    loop {
        let grad: Vec<f64> = targets
            .iter()
            .zip(&diagram.areas)
            .map(|(t, m)| t - m)
            .collect();
        let done = grad.iter().zip(&allowed).all(|(g, tol)| g.abs() < *tol);
        let max_err = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        if done || n == 1 {
            let last = w[n - 1];
            w.iter_mut().for_each(|wi| *wi -= last);
            let dual_value =
                diagram.transport_cost + w.iter().zip(&grad).map(|(wi, gi)| wi * gi).sum::<f64>();
            return Ok(AnisoReport {
                weights: WeightVector::new(w).normalized(),
                diagram,
                iterations,
                max_area_error: max_err,
                dual_value,
                targets,
            });
        }
        if iterations >= MAX_NEWTON {
            return Err(Error::MaxIterationsExceeded {
                iterations,
                max_rel_error_percent: max_rel_percent(&grad, &targets),
            });
        }
        let step = solve_reduced(n, band.iter().copied(), &grad, 1e-10)?;
        let gnorm = norm(&grad);
        let mut tau = 1.0;
        let mut accepted = None;
        // near the pixel floor halving rarely helps; settling is cheaper
        let halvings = if gnorm < QUANTUM_BAND * pa {
            2
        } else {
            MAX_HALVINGS
        };
        for _ in 0..=halvings {
            let trial: Vec<f64> = w.iter().zip(&step).map(|(wi, d)| wi + tau * d).collect();
            let (d, b) = grid.pass(x, &trial, mats, true);
            let g: Vec<f64> = targets.iter().zip(&d.areas).map(|(t, m)| t - m).collect();
            let min_area = d.areas.iter().copied().fold(f64::INFINITY, f64::min);
            if min_area >= eps0 && norm(&g) <= (1.0 - 0.5 * tau) * gnorm {
                accepted = Some((trial, d, b));
                break;
            }
            tau *= 0.5;
        }
        let Some((nw, nd, nb)) = accepted else {
            // Newton has reached the pixel quantization; finish by moving
            // whole pixels between cells
            let (nw, nd, steps) = grid.settle_counts(x, w, diagram, mats, &targets, &allowed);
            iterations += steps;
            let residual: Vec<f64> = targets.iter().zip(&nd.areas).map(|(t, m)| t - m).collect();
            if residual
                .iter()
                .zip(&allowed)
                .any(|(g, tol)| g.abs() >= *tol)
            {
                return Err(Error::MaxIterationsExceeded {
                    iterations,
                    max_rel_error_percent: max_rel_percent(&residual, &targets),
                });
            }
            let (d, b) = grid.pass(x, &nw, mats, true);
            (w, diagram, band) = (nw, d, b);
            continue;
        };
        w = nw;
        diagram = nd;
        band = nb;
        iterations += 1;
    }
}

fn max_rel_percent(grad: &[f64], targets: &[f64]) -> f64 {
    grad.iter()
        .zip(targets)
        .map(|(g, t)| 100.0 * g.abs() / t)
        .fold(0.0, f64::max)
}

/// `H_A` and its gradient `v_i A_i (b_i − c_i)`.
#[derive(Clone, Debug)]
pub struct AnisoEval {
    /// `½ T_A − ½ Σ v_i |x_i|²_{A_i} + Σ v_i x_i·(A_i b_i)`, with `T_A` read
    /// off the dual value. There is no constant term, so `H_A` does not
    /// vanish on compatible data.
    pub h: f64,
    pub grad: Vec<Point>,
    pub report: AnisoReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnisoOptions {
    pub resolution: usize,
    /// Area tolerance of the weight solve inside each evaluation; the
    /// solver never asks for less than one pixel area.
    pub tol_percent: f64,
    pub fit: FitOptions,
}

impl Default for AnisoOptions {
    fn default() -> Self {
        AnisoOptions {
            resolution: 512,
            tol_percent: 1e-3,
            fit: FitOptions::default(),
        }
    }
}

pub fn eval_grad_h_aniso(
    domain: &Domain,
    seeds: &SeedConfig,
    data: &TargetData,
    a: &AnisotropyMatrices,
    resolution: usize,
) -> Result<AnisoEval> {
    let grid = RasterGrid::new(domain, resolution)?;
    eval_on_grid(
        &grid,
        seeds,
        data,
        a,
        AnisoOptions::default().tol_percent,
        None,
    )
}

/// [`eval_grad_h_aniso`] on a prepared grid.
pub fn eval_on_grid(
    grid: &RasterGrid,
    seeds: &SeedConfig,
    data: &TargetData,
    a: &AnisotropyMatrices,
    tol_percent: f64,
    warm: Option<&WeightVector>,
) -> Result<AnisoEval> {
    if seeds.len() != data.len() {
        return Err(Error::LengthMismatch {
            what: "seeds",
            expected: data.len(),
            found: seeds.len(),
        });
    }
    let report = solve_weights_raster(grid, seeds, data.areas(), a, tol_percent, warm)?;
    let x = seeds.points();
    let b = data.centroids();
    let v = &report.targets;
    let mats = a.as_slice();
    let mut h = 0.5 * report.dual_value;
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        h += v[i] * (x[i].dot(mats[i].apply(b[i])) - 0.5 * mats[i].quad(x[i]));
        let c = report.diagram.centroids[i].unwrap_or(x[i]);
        grad.push(mats[i].apply(b[i] - c) * v[i]);
    }
    Ok(AnisoEval { h, grad, report })
}

#[derive(Clone, Debug)]
pub struct AnisoRecovery {
    pub seeds: SeedConfig,
    pub weights: WeightVector,
    pub diagram: RasterDiagram,
    pub h: f64,
    pub termination: Termination,
    pub iterations: usize,
    pub trace: Vec<TraceRow>,
    pub active_separation_constraints: Vec<(usize, usize)>,
}

struct NegHa<'a> {
    grid: &'a RasterGrid,
    data: &'a TargetData,
    a: &'a AnisotropyMatrices,
    tol_percent: f64,
    scale: f64,
    warm: Option<WeightVector>,
    last: Option<(Vec<f64>, Evaluation)>,
}

impl Objective for NegHa<'_> {
    fn evaluate(&mut self, x: &[f64], _gradient: bool) -> Result<Evaluation> {
        if let Some((lx, e)) = &self.last {
            if lx.as_slice() == x {
                return Ok(e.clone());
            }
        }
        let seeds = SeedConfig::from_flat(x);
        let e = eval_on_grid(
            self.grid,
            &seeds,
            self.data,
            self.a,
            self.tol_percent,
            self.warm.as_ref(),
        )?;
        self.warm = Some(e.report.weights.clone());
        let f: f64 = e.grad.iter().map(|g| g.norm_sq()).sum();
        let eval = Evaluation {
            value: -e.h / self.scale,
            gradient: Some(
                e.grad
                    .iter()
                    .flat_map(|g| [-g.x / self.scale, -g.y / self.scale])
                    .collect(),
            ),
            aux: f,
        };
        self.last = Some((x.to_vec(), eval.clone()));
        Ok(eval)
    }
}

/// Recovers seeds whose anisotropic raster cells have the given areas and
/// centroids, by maximising `H_A` under the ball and separation
/// constraints.
pub fn recover_aniso(
    domain: &Domain,
    data: &TargetData,
    a: &AnisotropyMatrices,
    start: RecoveryStart,
    opts: &AnisoOptions,
) -> Result<AnisoRecovery> {
    data.validate(domain)?;
    let n = data.len();
    if a.len() != n {
        return Err(Error::LengthMismatch {
            what: "anisotropy matrices",
            expected: n,
            found: a.len(),
        });
    }
    let grid = RasterGrid::new(domain, opts.resolution)?;
    let init = match start {
        RecoveryStart::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            SeedConfig::new(sample_uniform(domain, n, &mut rng))
        }
        RecoveryStart::Seeds(s) => s,
    };
    if init.len() != n {
        return Err(Error::LengthMismatch {
            what: "initial seeds",
            expected: n,
            found: init.len(),
        });
    }
    let delta = opts.fit.delta_for(domain);
    let radius = opts.fit.radius_for(domain, n);
    let constraints = SeedConstraints::new(n, delta, Some((domain.centroid(), radius)));
    let mut x0 = init.to_flat();
    crate::fit::Constraints::project(&constraints, &mut x0);

    let first = eval_on_grid(
        &grid,
        &SeedConfig::from_flat(&x0),
        data,
        a,
        opts.tol_percent,
        None,
    )?;
    let floor = 1e-6 * domain.area() * domain.diameter().powi(2);
    let scale = first.h.abs().max(floor);
    let ftol = opts.fit.ftol.unwrap_or(1e-10 * scale);
    let mut objective = NegHa {
        grid: &grid,
        data,
        a,
        tol_percent: opts.tol_percent,
        scale,
        warm: Some(first.report.weights.clone()),
        last: None,
    };
    let mut trace = Vec::new();
    let run = constrained_optimize(
        &mut objective,
        &constraints,
        &x0,
        &optimizer_options(domain, &opts.fit, ftol / scale),
        |r| trace.push(trace_row(r.iter, -r.value * scale, r.aux, r.x, delta)),
    )?;
    let seeds = SeedConfig::from_flat(&run.x);
    let e = eval_on_grid(
        &grid,
        &seeds,
        data,
        a,
        opts.tol_percent,
        objective.warm.as_ref(),
    )?;
    Ok(AnisoRecovery {
        active_separation_constraints: active_pairs(&seeds, delta),
        seeds,
        weights: e.report.weights,
        diagram: e.report.diagram,
        h: e.h,
        termination: run.termination,
        iterations: run.iterations,
        trace,
    })
}
