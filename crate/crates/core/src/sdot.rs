//! Semi-discrete optimal transport between the uniform measure on a domain
//! and a weighted sum of Dirac masses at the seeds.
//!
//! [`solve_weights`] maximises the concave dual function by damped Newton:
//! the Newton direction solves `H Δ = −∇` on the subspace where the last
//! weight is pinned to zero, and the step is halved until every cell keeps
//! an area of at least `ε₀` and the gradient norm drops by `1 − τ/2`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{
    build_laguerre, cell_transport_cost, Domain, LaguerreDiagram, Point, SeedConfig, WeightVector,
};

/// Relative tolerance on `Σ v_i = area(Ω)`.
pub const MASS_TOLERANCE: f64 = 1e-9;

/// Positive target areas summing to the domain area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TargetAreas(Vec<f64>);

impl TargetAreas {
    pub fn new(v: Vec<f64>, domain: &Domain) -> Result<Self> {
        check_areas(&v, domain)?;
        Ok(TargetAreas(v))
    }

    /// All cells of area `area(Ω)/n`.
    pub fn uniform(n: usize, domain: &Domain) -> Self {
        TargetAreas(vec![domain.area() / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub(crate) fn check_areas(v: &[f64], domain: &Domain) -> Result<()> {
    if let Some(i) = v.iter().position(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::IncompatibleData(format!(
            "target area {i} is {} (must be positive)",
            v[i]
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - domain.area()).abs() > MASS_TOLERANCE * domain.area() {
        return Err(Error::IncompatibleData(format!(
            "target areas sum to {total}, domain area is {}",
            domain.area()
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OtOptions {
    /// Stop once every cell is within this percentage of its target area.
    pub tol_percent: f64,
    pub max_newton: usize,
    pub max_halvings: usize,
}

impl Default for OtOptions {
    fn default() -> Self {
        OtOptions {
            tol_percent: 0.1,
            max_newton: 100,
            max_halvings: 30,
        }
    }
}

impl OtOptions {
    pub fn with_tolerance(tol_percent: f64) -> Self {
        OtOptions {
            tol_percent,
            ..Default::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualReport {
    /// Optimal weights with the last entry pinned to zero.
    pub weights: WeightVector,
    pub iterations: usize,
    /// `max_i 100·|m_i − v_i| / v_i`.
    pub max_rel_area_error: f64,
    pub dual_value: f64,
    pub diagram: LaguerreDiagram,
}

/// Hessian of the dual function, stored as its diagonal plus the upper
/// off-diagonal entries of adjacent cells.
#[derive(Clone, Debug, PartialEq)]
pub struct DualHessian {
    pub diagonal: Vec<f64>,
    pub off_diagonal: Vec<(usize, usize, f64)>,
}

impl DualHessian {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diagonal.len();
        let mut m = DMatrix::from_diagonal(&DVector::from_column_slice(&self.diagonal));
        for &(i, j, h) in &self.off_diagonal {
            m[(i, j)] += h;
            m[(j, i)] += h;
        }
        debug_assert_eq!(m.nrows(), n);
        m
    }
}

#[derive(Clone, Debug)]
pub struct DualEval {
    pub value: f64,
    /// `∂𝒦/∂w_i = v_i − m_i`.
    pub gradient: Vec<f64>,
    pub hessian: DualHessian,
    pub diagram: LaguerreDiagram,
}

fn dual_value(seeds: &[Point], w: &[f64], v: &[f64], diagram: &LaguerreDiagram) -> f64 {
    let mut value = 0.0;
    for i in 0..seeds.len() {
        value += cell_transport_cost(&diagram.cells[i], seeds[i]) - w[i] * diagram.areas[i]
            + w[i] * v[i];
    }
    value
}

fn hessian(seeds: &[Point], diagram: &LaguerreDiagram) -> DualHessian {
    let n = seeds.len();
    let mut diagonal = vec![0.0; n];
    let off_diagonal = diagram
        .edges
        .iter()
        .map(|e| {
            let h = e.length / (2.0 * (seeds[e.i] - seeds[e.j]).norm());
            diagonal[e.i] -= h;
            diagonal[e.j] -= h;
            (e.i, e.j, h)
        })
        .collect();
    DualHessian {
        diagonal,
        off_diagonal,
    }
}

fn validate(seeds: &SeedConfig, v: &[f64], domain: &Domain) -> Result<()> {
    if v.len() != seeds.len() {
        return Err(Error::LengthMismatch {
            what: "target areas",
            expected: seeds.len(),
            found: v.len(),
        });
    }
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no seeds".into()));
    }
    if !seeds.is_finite() {
        return Err(Error::NonFinite("seeds"));
    }
    if let Some((i, j)) = seeds.coincident_pair() {
        return Err(Error::CoincidentSeeds { i, j });
    }
    check_areas(v, domain)
}

/// Value, gradient and Hessian of the dual function at `w`.
pub fn dual_eval(
    domain: &Domain,
    seeds: &SeedConfig,
    weights: &WeightVector,
    v: &[f64],
) -> Result<DualEval> {
    validate(seeds, v, domain)?;
    let diagram = build_laguerre(domain, seeds, weights)?;
    let x = seeds.points();
    let w = weights.as_slice();
    let value = dual_value(x, w, v, &diagram);
    let gradient = v
        .iter()
        .zip(&diagram.areas)
        .map(|(vi, mi)| vi - mi)
        .collect();
    let hessian = hessian(x, &diagram);
    Ok(DualEval {
        value,
        gradient,
        hessian,
        diagram,
    })
}

/// Starting weights from the rescaling construction, and whether it had to
/// fall back to zero weights.
#[derive(Clone, Debug, PartialEq)]
pub struct InitialWeights {
    pub weights: WeightVector,
    pub fallback: bool,
}

/// Weights whose cells equal the Voronoi cells of the seeds after mapping
/// their bounding box into the domain's bounding box shrunk by 0.9.
///
/// Translating and dilating seeds `x' = λx + t` leaves the cells unchanged
/// when the weights transform as `w' = λw + 2λ t·x + λ(λ−1)|x|²`; applying
/// that map from the shrunk seeds (weights zero) back to the originals
/// gives the result.
pub fn initial_weights(domain: &Domain, seeds: &SeedConfig, v: &[f64]) -> Result<InitialWeights> {
    validate(seeds, v, domain)?;
    let n = seeds.len();
    if n == 1 {
        return Ok(InitialWeights {
            weights: WeightVector::zeros(1),
            fallback: false,
        });
    }
    let x = seeds.points();
    let (mut lo, mut hi) = (x[0], x[0]);
    for p in x {
        lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let (dlo, dhi) = domain.bounding_box();
    let seed_extent = hi - lo;
    let dom_extent = dhi - dlo;
    let mut shrink = f64::INFINITY;
    if seed_extent.x > 0.0 {
        shrink = shrink.min(dom_extent.x / seed_extent.x);
    }
    if seed_extent.y > 0.0 {
        shrink = shrink.min(dom_extent.y / seed_extent.y);
    }
    let shrink = 0.9 * shrink;
    let seed_center = (lo + hi) * 0.5;
    let dom_center = (dlo + dhi) * 0.5;
    // x' = shrink·(x − c_s) + c_d;  x = λ x' + t with λ = 1/shrink
    let lambda = 1.0 / shrink;
    let t = seed_center - dom_center * lambda;
    let mut w: Vec<f64> = x
        .iter()
        .map(|&p| {
            let mapped = (p - seed_center) * shrink + dom_center;
            2.0 * lambda * t.dot(mapped) + lambda * (lambda - 1.0) * mapped.norm_sq()
        })
        .collect();
    let last = w[n - 1];
    w.iter_mut().for_each(|wi| *wi -= last);
    let weights = WeightVector::new(w).normalized();
    let diagram = build_laguerre(domain, seeds, &weights)?;
    if diagram.first_empty_cell().is_none() {
        return Ok(InitialWeights {
            weights,
            fallback: false,
        });
    }
    Ok(InitialWeights {
        weights: WeightVector::zeros(n),
        fallback: true,
    })
}

/// Weights giving every cell its prescribed area, started from
/// [`initial_weights`].
pub fn solve_weights(
    domain: &Domain,
    seeds: &SeedConfig,
    v: &[f64],
    opts: &OtOptions,
) -> Result<DualReport> {
    solve_weights_from(domain, seeds, v, None, opts)
}

/// Like [`solve_weights`], starting from `start` when it leaves no cell
/// empty.
pub fn solve_weights_from(
    domain: &Domain,
    seeds: &SeedConfig,
    v: &[f64],
    start: Option<&WeightVector>,
    opts: &OtOptions,
) -> Result<DualReport> {
    validate(seeds, v, domain)?;
    if let Some(w) = start.filter(|w| w.len() == seeds.len()) {
        let w = w.clone().normalized();
        let diagram = build_laguerre(domain, seeds, &w)?;
        if diagram.first_empty_cell().is_none() {
            return damped_newton(domain, seeds, v, w, diagram, opts);
        }
    }
    let init = initial_weights(domain, seeds, v)?;
    let diagram = build_laguerre(domain, seeds, &init.weights)?;
    if let Some(i) = diagram.first_empty_cell() {
        return Err(Error::DegenerateStart(i));
    }
    damped_newton(domain, seeds, v, init.weights, diagram, opts)
}

fn max_rel_error_percent(v: &[f64], m: &[f64]) -> f64 {
    v.iter()
        .zip(m)
        .map(|(vi, mi)| 100.0 * (mi - vi).abs() / vi)
        .fold(0.0, f64::max)
}

fn norm(g: &[f64]) -> f64 {
    g.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn damped_newton(
    domain: &Domain,
    seeds: &SeedConfig,
    v: &[f64],
    mut w: WeightVector,
    mut diagram: LaguerreDiagram,
    opts: &OtOptions,
) -> Result<DualReport> {
    let n = seeds.len();
    let x = seeds.points();
    let eps0 = 0.5
        * v.iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .min(diagram.min_area());
    let mut iterations = 0;
    loop {
        let grad: Vec<f64> = v.iter().zip(&diagram.areas).map(|(a, b)| a - b).collect();
        let err = max_rel_error_percent(v, &diagram.areas);
        if err < opts.tol_percent || n == 1 {
            let dual_value = dual_value(x, w.as_slice(), v, &diagram);
            return Ok(DualReport {
                weights: w,
                iterations,
                max_rel_area_error: err,
                dual_value,
                diagram,
            });
        }
        if iterations >= opts.max_newton {
            return Err(Error::MaxIterationsExceeded {
                iterations,
                max_rel_error_percent: err,
            });
        }
        let step = newton_direction(x, &diagram, &grad)?;
        let gnorm = norm(&grad);
        let mut tau = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = w
                .as_slice()
                .iter()
                .zip(&step)
                .map(|(wi, di)| wi + tau * di)
                .collect();
            let trial = WeightVector::new(trial);
            let d = build_laguerre(domain, seeds, &trial)?;
            let gtrial: Vec<f64> = v.iter().zip(&d.areas).map(|(a, b)| a - b).collect();
            if d.min_area() >= eps0 && norm(&gtrial) <= (1.0 - 0.5 * tau) * gnorm {
                accepted = Some((trial, d));
                break;
            }
            tau *= 0.5;
        }
        let Some((nw, nd)) = accepted else {
            return Err(Error::MaxIterationsExceeded {
                iterations,
                max_rel_error_percent: err,
            });
        };
        w = nw;
        diagram = nd;
        iterations += 1;
    }
}

fn newton_direction(x: &[Point], diagram: &LaguerreDiagram, grad: &[f64]) -> Result<Vec<f64>> {
    let couplings = diagram
        .edges
        .iter()
        .map(|e| (e.i, e.j, e.length / (2.0 * (x[e.i] - x[e.j]).norm())));
    solve_reduced(x.len(), couplings, grad, 0.0)
}

/// Solves `Dm · Δ = v − m` with the last weight held fixed, where `Dm` is
/// the Jacobian of the cell areas: `Dm_ij = −c_ij`, `Dm_ii = Σ_j c_ij`.
///
/// `ridge` is added to the diagonal, relative to its largest entry.
pub(crate) fn solve_reduced(
    n: usize,
    couplings: impl IntoIterator<Item = (usize, usize, f64)>,
    grad: &[f64],
    ridge: f64,
) -> Result<Vec<f64>> {
    let r = n - 1;
    let mut m = DMatrix::<f64>::zeros(r, r);
    for (i, j, c) in couplings {
        if i < r {
            m[(i, i)] += c;
        }
        if j < r {
            m[(j, j)] += c;
        }
        if i < r && j < r {
            m[(i, j)] -= c;
            m[(j, i)] -= c;
        }
    }
    if ridge > 0.0 {
        let top = (0..r).map(|k| m[(k, k)]).fold(0.0, f64::max);
        for k in 0..r {
            m[(k, k)] += ridge * top;
        }
    }
    let rhs = DVector::from_column_slice(&grad[..r]);
    let sol = match m.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => m.lu().solve(&rhs).ok_or(Error::SingularSystem)?,
    };
    if sol.iter().any(|s| !s.is_finite()) {
        return Err(Error::SingularSystem);
    }
    let mut out: Vec<f64> = sol.iter().copied().collect();
    out.push(0.0);
    Ok(out)
}

/// Squared Wasserstein distance between the uniform measure on the domain
/// and `Σ v_i δ_{x_i}`.
pub fn wasserstein_sq(
    domain: &Domain,
    seeds: &SeedConfig,
    v: &[f64],
    opts: &OtOptions,
) -> Result<f64> {
    let report = solve_weights(domain, seeds, v, opts)?;
    Ok(transport_cost(seeds, &report.diagram))
}

pub(crate) fn transport_cost(seeds: &SeedConfig, diagram: &LaguerreDiagram) -> f64 {
    seeds
        .points()
        .iter()
        .zip(&diagram.cells)
        .map(|(&x, c)| cell_transport_cost(c, x))
        .sum()
}
