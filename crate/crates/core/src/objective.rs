//! The concave recovery function `H`, its gradient `v_i (b_i − c_i)` and the
//! centroid least-squares error `f = |∇H|²`.
//!
//! `H(X) = F(X; v) − ½ Σ v_i |x_i|² + Σ v_i x_i·b_i − ½ ∫_Ω |x|²`, where
//! `F = ½ W₂²` is read off the optimal value of the transport dual. The
//! dual value is accurate to second order in the residual area error, which
//! is what makes finite differences of `H` usable.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{Domain, LaguerreDiagram, Point, SeedConfig, WeightVector};
use crate::sdot::{check_areas, solve_weights_from, DualReport, OtOptions};

/// Target cell areas `v` and centroids `B` satisfying
/// `Σ v_i = area(Ω)` and `Σ v_i b_i = area(Ω)·σ(Ω)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetData {
    v: Vec<f64>,
    b: Vec<Point>,
}

impl TargetData {
    pub fn new(v: Vec<f64>, b: Vec<Point>, domain: &Domain) -> Result<Self> {
        let data = TargetData { v, b };
        data.validate(domain)?;
        Ok(data)
    }

    /// Skips the compatibility checks. Use [`TargetData::validate`] before
    /// handing the result to a solver.
    pub fn new_unchecked(v: Vec<f64>, b: Vec<Point>) -> Self {
        TargetData { v, b }
    }

    /// Areas and centroids of the cells of `diagram`.
    pub fn from_diagram(diagram: &LaguerreDiagram, domain: &Domain) -> Result<Self> {
        let b = diagram
            .centroids
            .iter()
            .enumerate()
            .map(|(i, c)| {
                c.ok_or_else(|| {
                    Error::IncompatibleData(format!("cell {i} of the diagram is empty"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(diagram.areas.clone(), b, domain)
    }

    pub fn validate(&self, domain: &Domain) -> Result<()> {
        if self.v.len() != self.b.len() {
            return Err(Error::LengthMismatch {
                what: "target centroids",
                expected: self.v.len(),
                found: self.b.len(),
            });
        }
        if self.b.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("target centroids"));
        }
        check_areas(&self.v, domain)?;
        let mut moment = Point::ZERO;
        for (&v, &b) in self.v.iter().zip(&self.b) {
            moment += b * v;
        }
        let expected = domain.centroid() * domain.area();
        let gap = (moment - expected).norm();
        if gap > 1e-9 * domain.scale() {
            return Err(Error::IncompatibleData(format!(
                "Σ v_i b_i misses area·centroid of the domain by {gap:e}"
            )));
        }
        if let Some(i) = self.b.iter().position(|&b| !domain.contains(b)) {
            return Err(Error::IncompatibleData(format!(
                "target centroid {i} ({}, {}) lies outside the domain",
                self.b[i].x, self.b[i].y
            )));
        }
        Ok(())
    }

    pub fn areas(&self) -> &[f64] {
        &self.v
    }

    pub fn centroids(&self) -> &[Point] {
        &self.b
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    /// The target centroids as a seed configuration.
    pub fn centroid_seeds(&self) -> SeedConfig {
        SeedConfig::new(self.b.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveOptions {
    /// Transport solve used inside every evaluation.
    pub ot: OtOptions,
}

impl Default for ObjectiveOptions {
    fn default() -> Self {
        ObjectiveOptions {
            ot: OtOptions::with_tolerance(1e-7),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObjectiveEval {
    pub h: f64,
    /// `Σ v_i (b_i − c_i)·x_i`, which equals `h` up to solver error.
    pub h_centroid_form: f64,
    /// `v_i (b_i − c_i)`; absent when seeds coincide.
    pub grad_h: Option<Vec<Point>>,
    /// `|∇H|²`; absent when seeds coincide.
    pub f: Option<f64>,
    /// Centroids of the optimal cells. A group of coincident seeds reports
    /// the shared cell under its lowest index only.
    pub centroids: Vec<Option<Point>>,
    /// Transport solve for the distinct seeds, in first-occurrence order.
    pub dual: DualReport,
}

/// Groups of exactly coincident seeds, each sorted, ordered by first index.
fn coincident_groups(x: &[Point]) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| {
        x[a].x
            .total_cmp(&x[b].x)
            .then(x[a].y.total_cmp(&x[b].y))
            .then(a.cmp(&b))
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &i in &order {
        match groups.last_mut() {
            Some(g) if x[g[0]] == x[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups.sort_by_key(|g| g[0]);
    groups
}

/// `H`, its centroid form, gradient and `f`, optionally warm-starting the
/// transport solve from `warm`.
pub fn evaluate(
    domain: &Domain,
    seeds: &SeedConfig,
    data: &TargetData,
    opts: &ObjectiveOptions,
    warm: Option<&WeightVector>,
) -> Result<ObjectiveEval> {
    let n = data.len();
    if seeds.len() != n {
        return Err(Error::LengthMismatch {
            what: "seeds",
            expected: n,
            found: seeds.len(),
        });
    }
    if !seeds.is_finite() {
        return Err(Error::NonFinite("seeds"));
    }
    let x = seeds.points();
    let (v, b) = (data.areas(), data.centroids());
    let groups = coincident_groups(x);
    let distinct = groups.len() == n;

    let (reduced, reduced_v): (SeedConfig, Vec<f64>) = if distinct {
        (seeds.clone(), v.to_vec())
    } else {
        (
            groups.iter().map(|g| x[g[0]]).collect::<Vec<_>>().into(),
            groups
                .iter()
                .map(|g| g.iter().map(|&i| v[i]).sum())
                .collect(),
        )
    };
    let dual = solve_weights_from(
        domain,
        &reduced,
        &reduced_v,
        warm.filter(|_| distinct),
        &opts.ot,
    )?;

    let f_value = 0.5 * dual.dual_value;
    let mut h = f_value - 0.5 * domain.second_moment();
    for i in 0..n {
        h += v[i] * (x[i].dot(b[i]) - 0.5 * x[i].norm_sq());
    }

    let mut centroids = vec![None; n];
    let mut h_centroid_form = 0.0;
    for (k, g) in groups.iter().enumerate() {
        let c = dual.diagram.centroids[k].unwrap_or(reduced.points()[k]);
        centroids[g[0]] = dual.diagram.centroids[k];
        let mut moment = Point::ZERO;
        for &i in g {
            moment += b[i] * v[i];
        }
        h_centroid_form += (moment - c * reduced_v[k]).dot(x[g[0]]);
    }

    let (grad_h, f) = if distinct {
        let g: Vec<Point> = (0..n)
            .map(|i| (b[i] - centroids[i].unwrap_or(x[i])) * v[i])
            .collect();
        let f = g.iter().map(|p| p.norm_sq()).sum();
        (Some(g), Some(f))
    } else {
        (None, None)
    };

    Ok(ObjectiveEval {
        h,
        h_centroid_form,
        grad_h,
        f,
        centroids,
        dual,
    })
}

pub fn eval_h(domain: &Domain, seeds: &SeedConfig, data: &TargetData) -> Result<ObjectiveEval> {
    evaluate(domain, seeds, data, &ObjectiveOptions::default(), None)
}

fn require_distinct(seeds: &SeedConfig) -> Result<()> {
    match seeds.coincident_pair() {
        Some((i, j)) => Err(Error::CoincidentSeeds { i, j }),
        None => Ok(()),
    }
}

pub fn grad_h(domain: &Domain, seeds: &SeedConfig, data: &TargetData) -> Result<Vec<Point>> {
    require_distinct(seeds)?;
    let e = eval_h(domain, seeds, data)?;
    Ok(e.grad_h.expect("distinct seeds have a gradient"))
}

/// `f = Σ v_i² |c_i − b_i|²`.
pub fn eval_f(domain: &Domain, seeds: &SeedConfig, data: &TargetData) -> Result<f64> {
    require_distinct(seeds)?;
    let e = eval_h(domain, seeds, data)?;
    Ok(e.f.expect("distinct seeds have f"))
}

/// Default finite-difference step, `1e-5 · diam(Ω)`.
pub fn default_fd_step(domain: &Domain) -> f64 {
    1e-5 * domain.diameter()
}

fn check_step(seeds: &SeedConfig, step: f64) -> Result<()> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {step}"
        )));
    }
    let x = seeds.points();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            if (x[i] - x[j]).norm() <= 2.0 * step {
                return Err(Error::StepTooLarge { step, i, j });
            }
        }
    }
    Ok(())
}

/// Gradient of `f` by central differences in every coordinate.
///
/// All `4n` evaluations warm-start from the weights at `X`, so the result
/// does not depend on evaluation order.
pub fn grad_f(
    domain: &Domain,
    seeds: &SeedConfig,
    data: &TargetData,
    fd_step: Option<f64>,
) -> Result<Vec<Point>> {
    grad_f_with(domain, seeds, data, fd_step, &ObjectiveOptions::default())
}

pub fn grad_f_with(
    domain: &Domain,
    seeds: &SeedConfig,
    data: &TargetData,
    fd_step: Option<f64>,
    opts: &ObjectiveOptions,
) -> Result<Vec<Point>> {
    require_distinct(seeds)?;
    let h = fd_step.unwrap_or_else(|| default_fd_step(domain));
    check_step(seeds, h)?;
    let base = evaluate(domain, seeds, data, opts, None)?;
    let warm = base.dual.weights;
    let flat = seeds.to_flat();
    let partials = (0..flat.len())
        .into_par_iter()
        .map(|k| {
            let f_at = |sign: f64| -> Result<f64> {
                let mut y = flat.clone();
                y[k] += sign * h;
                let e = evaluate(domain, &SeedConfig::from_flat(&y), data, opts, Some(&warm))?;
                e.f.ok_or(Error::StepTooLarge {
                    step: h,
                    i: k / 2,
                    j: k / 2,
                })
            };
            Ok((f_at(1.0)? - f_at(-1.0)?) / (2.0 * h))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(SeedConfig::from_flat(&partials).into_points())
}

/// `f` and its gradient `2 D²H ∇H`, with the Hessian-vector product taken
/// as a central difference of `∇H` along `∇H`.
///
/// Costs three transport solves instead of the `4n` of [`grad_f`]. The
/// largest seed displacement in the difference equals `fd_step`.
pub fn grad_f_hvp(
    domain: &Domain,
    seeds: &SeedConfig,
    data: &TargetData,
    fd_step: Option<f64>,
    opts: &ObjectiveOptions,
    warm: Option<&WeightVector>,
) -> Result<(ObjectiveEval, Vec<Point>)> {
    require_distinct(seeds)?;
    let h = fd_step.unwrap_or_else(|| default_fd_step(domain));
    check_step(seeds, h)?;
    let base = evaluate(domain, seeds, data, opts, warm)?;
    let g = base.grad_h.clone().expect("distinct seeds have a gradient");
    let gmax = g
        .iter()
        .map(|p| p.x.abs().max(p.y.abs()))
        .fold(0.0, f64::max);
    if gmax == 0.0 {
        return Ok((base, vec![Point::ZERO; g.len()]));
    }
    let eps = h / gmax;
    let shifted = |sign: f64| -> Result<Vec<Point>> {
        let y: Vec<Point> = seeds
            .points()
            .iter()
            .zip(&g)
            .map(|(&x, &gi)| x + gi * (sign * eps))
            .collect();
        let e = evaluate(domain, &y.into(), data, opts, Some(&base.dual.weights))?;
        e.grad_h.ok_or(Error::StepTooLarge {
            step: h,
            i: 0,
            j: 0,
        })
    };
    let (plus, minus) = rayon::join(|| shifted(1.0), || shifted(-1.0));
    let (plus, minus) = (plus?, minus?);
    let grad = plus
        .iter()
        .zip(&minus)
        .map(|(&p, &m)| (p - m) * (1.0 / eps))
        .collect();
    Ok((base, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_cell_data(shift: f64) -> TargetData {
        TargetData::new(
            vec![0.5, 0.5],
            vec![Point::new(0.25 + shift, 0.5), Point::new(0.75 - shift, 0.5)],
            &Domain::unit_square(),
        )
        .unwrap()
    }

    fn two_seeds() -> SeedConfig {
        SeedConfig::new(vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)])
    }

    #[test]
    fn compatible_data_gives_zero() {
        let e = eval_h(&Domain::unit_square(), &two_seeds(), &two_cell_data(0.0)).unwrap();
        assert!(e.h.abs() < 1e-14);
        assert!(e.f.unwrap() < 1e-28);
    }

    #[test]
    fn shifted_centroids_hand_values() {
        let dom = Domain::unit_square();
        let data = two_cell_data(0.1);
        let e = eval_h(&dom, &two_seeds(), &data).unwrap();
        assert_relative_eq!(e.h, -0.025, epsilon = 1e-13);
        assert_relative_eq!(e.h_centroid_form, -0.025, epsilon = 1e-13);
        let g = grad_h(&dom, &two_seeds(), &data).unwrap();
        assert_relative_eq!(g[0].x, 0.05, epsilon = 1e-13);
        assert_relative_eq!(g[1].x, -0.05, epsilon = 1e-13);
        assert!(g[0].y.abs() < 1e-13 && g[1].y.abs() < 1e-13);
        assert_relative_eq!(
            eval_f(&dom, &two_seeds(), &data).unwrap(),
            0.005,
            epsilon = 1e-13
        );
    }

    #[test]
    fn equal_seeds_give_zero() {
        let dom = Domain::unit_square();
        let t = Point::new(0.3, 0.8);
        let e = eval_h(&dom, &SeedConfig::new(vec![t; 2]), &two_cell_data(0.1)).unwrap();
        assert!(e.h.abs() < 1e-14);
        assert!(e.h_centroid_form.abs() < 1e-14);
        assert!(e.grad_h.is_none());
        assert!(e.centroids[0].is_some() && e.centroids[1].is_none());
        assert!(matches!(
            grad_h(&dom, &SeedConfig::new(vec![t; 2]), &two_cell_data(0.1)),
            Err(Error::CoincidentSeeds { i: 0, j: 1 })
        ));
    }

    #[test]
    fn partial_merge_matches_limit() {
        // Seeds 0 and 2 coincide; H is continuous through the merge.
        let dom = Domain::unit_square();
        let data = TargetData::new(
            vec![0.25, 0.5, 0.25],
            vec![
                Point::new(0.25, 0.25),
                Point::new(0.5, 0.75),
                Point::new(0.75, 0.25),
            ],
            &dom,
        )
        .unwrap();
        let p = Point::new(0.5, 0.3);
        let merged = SeedConfig::new(vec![p, Point::new(0.5, 0.8), p]);
        let near = SeedConfig::new(vec![p, Point::new(0.5, 0.8), p + Point::new(1e-7, 0.0)]);
        let a = eval_h(&dom, &merged, &data).unwrap();
        let b = eval_h(&dom, &near, &data).unwrap();
        assert!((a.h - b.h).abs() < 1e-6);
        assert!((a.h - a.h_centroid_form).abs() < 1e-10);
    }

    #[test]
    fn rejects_incompatible_targets() {
        let dom = Domain::unit_square();
        let r = TargetData::new(
            vec![0.5, 0.5],
            vec![Point::new(0.3, 0.5), Point::new(0.75, 0.5)],
            &dom,
        );
        assert!(matches!(r, Err(Error::IncompatibleData(_))));
        let r = TargetData::new(vec![0.5, 0.5], vec![Point::new(0.5, 0.5)], &dom);
        assert!(matches!(r, Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn step_too_large_reported() {
        let dom = Domain::unit_square();
        let seeds = SeedConfig::new(vec![Point::new(0.5, 0.5), Point::new(0.5 + 1e-6, 0.5)]);
        let r = grad_f(&dom, &seeds, &two_cell_data(0.0), Some(1e-5));
        assert!(matches!(r, Err(Error::StepTooLarge { i: 0, j: 1, .. })));
    }

    #[test]
    fn grad_f_vanishes_at_compatible_configuration() {
        let dom = Domain::unit_square();
        let g = grad_f(&dom, &two_seeds(), &two_cell_data(0.0), None).unwrap();
        assert!(g.iter().all(|p| p.norm() < 1e-6 * dom.scale()));
    }

    #[test]
    fn hvp_gradient_matches_coordinate_differences() {
        let dom = Domain::unit_square();
        let seeds = SeedConfig::new(vec![
            Point::new(0.2, 0.3),
            Point::new(0.7, 0.2),
            Point::new(0.6, 0.8),
            Point::new(0.3, 0.7),
        ]);
        let data = TargetData::new(
            vec![0.25; 4],
            vec![
                Point::new(0.27, 0.23),
                Point::new(0.75, 0.27),
                Point::new(0.73, 0.75),
                Point::new(0.25, 0.75),
            ],
            &dom,
        )
        .unwrap();
        let fd = grad_f(&dom, &seeds, &data, None).unwrap();
        let (_, hvp) = grad_f_hvp(
            &dom,
            &seeds,
            &data,
            None,
            &ObjectiveOptions::default(),
            None,
        )
        .unwrap();
        let scale = fd.iter().map(|p| p.norm()).fold(0.0, f64::max);
        for (a, b) in fd.iter().zip(&hvp) {
            assert!((*a - *b).norm() < 1e-4 * scale, "{a:?} vs {b:?}");
        }
    }
}
