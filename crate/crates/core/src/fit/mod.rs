//! Recovering a Laguerre diagram from cell areas and centroids by
//! maximising `H`, and fitting one to arbitrary compatible data by
//! minimising the normalised centroid error `n²/area(Ω)³ · f`.
//!
//! Both problems keep seeds at least `δ` apart (`c_ij = |x_i − x_j|² − δ² ≥ 0`);
//! recovery also confines `X` to the ball `Σ |x_i − σ(Ω)|² ≤ R²`, since `H`
//! is positively homogeneous and unbounded above when no compatible
//! diagram exists.

mod checks;
pub mod optimizer;
mod polish;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checks::{
    check_cyclical_monotonicity, check_necessary_conditions, MonotonicityReport, NecessaryReport,
    PairMargin,
};
pub use optimizer::{
    constrained_optimize, Constraints, Evaluation, IterationRecord, Objective, OptimizeResult,
    OptimizerOptions, PenaltySchedule, Termination, Unconstrained,
};

use crate::error::{Error, Result};
pub use crate::geom2d::diagram_symmetric_difference;
use crate::geom2d::{Domain, LaguerreDiagram, Point, SeedConfig, WeightVector};
use crate::objective::{evaluate, grad_f_hvp, ObjectiveEval, ObjectiveOptions, TargetData};
use crate::synth::sample_uniform;

/// A pair is reported active when `|x_i − x_j|² − δ² < 1e-10·δ²`.
pub const ACTIVE_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Minimum seed separation; defaults to `1e-3 ·` the domain width.
    pub delta: Option<f64>,
    /// Ball radius for recovery; defaults to `√(area(Ω)·n)`.
    pub radius: Option<f64>,
    /// Absolute tolerance on the change of the objective. Recovery defaults
    /// to `1e-10·|H(X_init)|`, fitting to `1e-8` times the initial
    /// normalised objective.
    pub ftol: Option<f64>,
    pub max_iters: usize,
    pub penalty: PenaltySchedule,
    pub objective: ObjectiveOptions,
    /// Step for the Hessian-vector product in the gradient of `f`.
    pub fd_step: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            delta: None,
            radius: None,
            ftol: None,
            max_iters: 1000,
            penalty: PenaltySchedule::default(),
            objective: ObjectiveOptions::default(),
            fd_step: None,
        }
    }
}

impl FitOptions {
    pub fn delta_for(&self, domain: &Domain) -> f64 {
        self.delta.unwrap_or(1e-3 * domain.width())
    }

    pub fn radius_for(&self, domain: &Domain, n: usize) -> f64 {
        self.radius
            .unwrap_or_else(|| (domain.area() * n as f64).sqrt())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    /// `H` for recovery, the normalised `f` for fitting.
    pub objective: f64,
    pub f: f64,
    pub min_pair_dist_over_delta: f64,
    pub active_constraints: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FitResult {
    pub x_star: SeedConfig,
    pub weights: WeightVector,
    pub diagram: LaguerreDiagram,
    pub trace: Vec<TraceRow>,
    pub active_separation_constraints: Vec<(usize, usize)>,
    pub termination: Termination,
    pub iterations: usize,
    /// Final objective in the units of [`TraceRow::objective`].
    pub objective: f64,
    pub initial_objective: f64,
    pub h: f64,
    pub f: f64,
    pub initial_f: f64,
    pub delta: f64,
    pub violation: f64,
}

impl FitResult {
    pub fn objective_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.objective).collect()
    }

    pub fn min_pairwise_distance_trace(&self) -> Vec<f64> {
        self.trace
            .iter()
            .map(|r| r.min_pair_dist_over_delta * self.delta)
            .collect()
    }
}

/// Separation constraints `(|x_i − x_j|² − δ²)/δ²` and, optionally, the
/// ball constraint `(R² − Σ|x_i − σ|²)/R²`. Dividing by `δ²` and `R²`
/// leaves the feasible set unchanged and keeps both families of order one.
pub struct SeedConstraints {
    n: usize,
    delta_sq: f64,
    ball: Option<(Point, f64)>,
    pairs: Vec<(u32, u32)>,
}

impl SeedConstraints {
    pub fn new(n: usize, delta: f64, ball: Option<(Point, f64)>) -> Self {
        let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i as u32, j as u32));
            }
        }
        SeedConstraints {
            n,
            delta_sq: delta * delta,
            ball: ball.map(|(c, r)| (c, r * r)),
            pairs,
        }
    }

    fn offset(&self) -> usize {
        usize::from(self.ball.is_some())
    }
}

fn pt(x: &[f64], i: usize) -> Point {
    Point::new(x[2 * i], x[2 * i + 1])
}

impl Constraints for SeedConstraints {
    fn count(&self) -> usize {
        self.offset() + self.pairs.len()
    }

    fn values(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.count());
        if let Some((c, r2)) = self.ball {
            let s: f64 = (0..self.n).map(|i| (pt(x, i) - c).norm_sq()).sum();
            out.push((r2 - s) / r2);
        }
        out.extend(self.pairs.iter().map(|&(i, j)| {
            ((pt(x, i as usize) - pt(x, j as usize)).norm_sq() - self.delta_sq) / self.delta_sq
        }));
        out
    }

    fn add_gradient(&self, x: &[f64], k: usize, scale: f64, grad: &mut [f64]) {
        if let (Some((c, r2)), 0) = (self.ball, k) {
            for i in 0..self.n {
                let d = (pt(x, i) - c) * (-2.0 * scale / r2);
                grad[2 * i] += d.x;
                grad[2 * i + 1] += d.y;
            }
            return;
        }
        let (i, j) = self.pairs[k - self.offset()];
        let (i, j) = (i as usize, j as usize);
        let d = (pt(x, i) - pt(x, j)) * (2.0 * scale / self.delta_sq);
        grad[2 * i] += d.x;
        grad[2 * i + 1] += d.y;
        grad[2 * j] -= d.x;
        grad[2 * j + 1] -= d.y;
    }

    fn project(&self, x: &mut [f64]) {
        let delta = self.delta_sq.sqrt();
        let target = delta * (1.0 + 1e-6);
        for _ in 0..20 {
            let mut moved = false;
            for &(i, j) in &self.pairs {
                let (i, j) = (i as usize, j as usize);
                let d = pt(x, j) - pt(x, i);
                let len = d.norm();
                if len >= delta {
                    continue;
                }
                let dir = if len > 0.0 {
                    d * (1.0 / len)
                } else {
                    Point::new(1.0, 0.0)
                };
                let push = dir * (0.5 * (target - len));
                x[2 * i] -= push.x;
                x[2 * i + 1] -= push.y;
                x[2 * j] += push.x;
                x[2 * j + 1] += push.y;
                moved = true;
            }
            if !moved {
                break;
            }
        }
        if let Some((c, r2)) = self.ball {
            let s: f64 = (0..self.n).map(|i| (pt(x, i) - c).norm_sq()).sum();
            if s > r2 {
                let shrink = (r2 / s).sqrt() * (1.0 - 1e-12);
                for i in 0..self.n {
                    let p = c + (pt(x, i) - c) * shrink;
                    x[2 * i] = p.x;
                    x[2 * i + 1] = p.y;
                }
            }
        }
    }
}

/// Pairs with `|x_i − x_j|² − δ² < 1e-10·δ²`.
pub fn active_pairs(seeds: &SeedConfig, delta: f64) -> Vec<(usize, usize)> {
    let x = seeds.points();
    let d2 = delta * delta;
    let mut out = Vec::new();
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            if (x[i] - x[j]).norm_sq() - d2 < ACTIVE_THRESHOLD * d2 {
                out.push((i, j));
            }
        }
    }
    out
}

pub(crate) fn trace_row(iter: usize, objective: f64, f: f64, x: &[f64], delta: f64) -> TraceRow {
    let seeds = SeedConfig::from_flat(x);
    TraceRow {
        iter,
        objective,
        f,
        min_pair_dist_over_delta: seeds.min_pairwise_distance() / delta,
        active_constraints: active_pairs(&seeds, delta).len(),
    }
}

fn flatten(points: &[Point]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// `−H / scale`, warm-starting each transport solve from the last weights.
struct NegH<'a> {
    domain: &'a Domain,
    data: &'a TargetData,
    opts: ObjectiveOptions,
    scale: f64,
    warm: Option<WeightVector>,
    last: Option<(Vec<f64>, Evaluation)>,
}

impl Objective for NegH<'_> {
    fn evaluate(&mut self, x: &[f64], _gradient: bool) -> Result<Evaluation> {
        if let Some((lx, e)) = &self.last {
            if lx.as_slice() == x {
                return Ok(e.clone());
            }
        }
        let seeds = SeedConfig::from_flat(x);
        let e = evaluate(
            self.domain,
            &seeds,
            self.data,
            &self.opts,
            self.warm.as_ref(),
        )?;
        if e.dual.weights.len() == seeds.len() {
            self.warm = Some(e.dual.weights.clone());
        }
        let Some(g) = e.grad_h else {
            let (i, j) = seeds.coincident_pair().unwrap_or((0, 0));
            return Err(Error::CoincidentSeeds { i, j });
        };
        let eval = Evaluation {
            value: -e.h / self.scale,
            gradient: Some(flatten(&g).into_iter().map(|v| -v / self.scale).collect()),
            aux: e.f.unwrap_or(f64::NAN),
        };
        self.last = Some((x.to_vec(), eval.clone()));
        Ok(eval)
    }
}

/// `n²/area(Ω)³ · f / scale`, with the gradient from a Hessian-vector
/// product of `H`.
struct NormalisedF<'a> {
    domain: &'a Domain,
    data: &'a TargetData,
    opts: ObjectiveOptions,
    fd_step: Option<f64>,
    factor: f64,
    scale: f64,
    warm: Option<WeightVector>,
}

impl Objective for NormalisedF<'_> {
    fn evaluate(&mut self, x: &[f64], gradient: bool) -> Result<Evaluation> {
        let seeds = SeedConfig::from_flat(x);
        let k = self.factor / self.scale;
        if gradient {
            let (e, g) = grad_f_hvp(
                self.domain,
                &seeds,
                self.data,
                self.fd_step,
                &self.opts,
                self.warm.as_ref(),
            )?;
            self.warm = Some(e.dual.weights.clone());
            let f = e.f.expect("distinct seeds have f");
            return Ok(Evaluation {
                value: k * f,
                gradient: Some(flatten(&g).into_iter().map(|v| 2.0 * k * v).collect()),
                aux: f,
            });
        }
        let e = evaluate(
            self.domain,
            &seeds,
            self.data,
            &self.opts,
            self.warm.as_ref(),
        )?;
        let f = e.f.ok_or_else(|| {
            let (i, j) = seeds.coincident_pair().unwrap_or((0, 0));
            Error::CoincidentSeeds { i, j }
        })?;
        Ok(Evaluation {
            value: k * f,
            gradient: None,
            aux: f,
        })
    }
}

fn check_init(data: &TargetData, init: &SeedConfig, domain: &Domain) -> Result<()> {
    data.validate(domain)?;
    if init.len() != data.len() {
        return Err(Error::LengthMismatch {
            what: "initial seeds",
            expected: data.len(),
            found: init.len(),
        });
    }
    if !init.is_finite() {
        return Err(Error::NonFinite("initial seeds"));
    }
    Ok(())
}

fn finish(
    domain: &Domain,
    data: &TargetData,
    opts: &FitOptions,
    run: OptimizeResult,
    trace: Vec<TraceRow>,
    objective: f64,
    initial: (f64, f64),
) -> Result<FitResult> {
    let delta = opts.delta_for(domain);
    let x_star = SeedConfig::from_flat(&run.x);
    let e: ObjectiveEval = evaluate(domain, &x_star, data, &opts.objective, None)?;
    let active = active_pairs(&x_star, delta);
    Ok(FitResult {
        weights: e.dual.weights,
        diagram: e.dual.diagram,
        x_star,
        trace,
        active_separation_constraints: active,
        termination: run.termination,
        iterations: run.iterations,
        objective,
        initial_objective: initial.0,
        h: e.h,
        f: e.f.unwrap_or(f64::NAN),
        initial_f: initial.1,
        delta,
        violation: run.violation,
    })
}

pub(crate) fn optimizer_options(domain: &Domain, opts: &FitOptions, ftol: f64) -> OptimizerOptions {
    OptimizerOptions {
        ftol,
        max_iters: opts.max_iters,
        penalty: opts.penalty,
        max_step: 0.1 * domain.width(),
        initial_step: 1e-2 * domain.width(),
        ..Default::default()
    }
}

/// Maximises `H` over `X` subject to the ball and separation constraints,
/// starting from `x_init` (the target centroids when absent).
///
/// When the ascent ends strictly inside the ball, the seeds are rescaled to
/// the spread of the targets and refined by Newton steps on `∇H = 0`; the
/// extra steps are counted in `iterations` and appended to the trace.
pub fn maximize_h_constrained(
    domain: &Domain,
    data: &TargetData,
    x_init: Option<&SeedConfig>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let init = x_init.cloned().unwrap_or_else(|| data.centroid_seeds());
    check_init(data, &init, domain)?;
    let n = data.len();
    let delta = opts.delta_for(domain);
    let radius = opts.radius_for(domain, n);
    let constraints = SeedConstraints::new(n, delta, Some((domain.centroid(), radius)));
    let mut x0 = init.to_flat();
    constraints.project(&mut x0);

    let start = evaluate(
        domain,
        &SeedConfig::from_flat(&x0),
        data,
        &opts.objective,
        None,
    )?;
    let h_scale = domain.area() * domain.diameter().powi(2);
    let scale = start.h.abs().max(1e-12 * h_scale);
    let ftol = opts
        .ftol
        .unwrap_or(1e-10 * start.h.abs().max(1e-12 * h_scale));
    let mut objective = NegH {
        domain,
        data,
        opts: opts.objective,
        scale,
        warm: Some(start.dual.weights.clone()),
        last: None,
    };
    let mut trace = Vec::new();
    let run = constrained_optimize(
        &mut objective,
        &constraints,
        &x0,
        &optimizer_options(domain, opts, ftol / scale),
        |r| trace.push(trace_row(r.iter, -r.value * scale, r.aux, r.x, delta)),
    )?;
    let mut run = run;
    let mut objective = -run.value * scale;
    let ball_slack = constraints.values(&run.x)[0];
    if run.violation == 0.0 && ball_slack > 1e-6 {
        let feasible = |x: &[f64]| constraints.values(x).iter().all(|&c| c >= 0.0);
        if let Some(p) = polish::newton_polish(domain, data, &run.x, feasible, &opts.objective)? {
            if p.f < run.aux {
                run.iterations += p.steps;
                trace.push(trace_row(run.iterations, p.h, p.f, &p.x, delta));
                objective = p.h;
                run.x = p.x;
                run.aux = p.f;
            }
        }
    }
    let initial_f = start.f.unwrap_or(f64::NAN);
    finish(
        domain,
        data,
        opts,
        run,
        trace,
        objective,
        (start.h, initial_f),
    )
}

/// How [`recover_diagram`] chooses its starting seeds.
#[derive(Clone, Debug)]
pub enum RecoveryStart {
    /// Uniformly random seeds in the domain from this RNG seed.
    Random(u64),
    Seeds(SeedConfig),
}

/// Recovers the diagram whose cells have the given areas and centroids,
/// from a random or supplied starting configuration.
pub fn recover_diagram(
    domain: &Domain,
    data: &TargetData,
    start: RecoveryStart,
    opts: &FitOptions,
) -> Result<FitResult> {
    let init = match start {
        RecoveryStart::Random(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            SeedConfig::new(sample_uniform(domain, data.len(), &mut rng))
        }
        RecoveryStart::Seeds(s) => s,
    };
    maximize_h_constrained(domain, data, Some(&init), opts)
}

/// Minimises `n²/area(Ω)³ · f` subject to the separation constraints,
/// starting from `x_init` (the target centroids when absent).
pub fn fit_diagram(
    domain: &Domain,
    data: &TargetData,
    x_init: Option<&SeedConfig>,
    opts: &FitOptions,
) -> Result<FitResult> {
    let init = x_init.cloned().unwrap_or_else(|| data.centroid_seeds());
    check_init(data, &init, domain)?;
    let n = data.len();
    let delta = opts.delta_for(domain);
    let constraints = SeedConstraints::new(n, delta, None);
    let mut x0 = init.to_flat();
    constraints.project(&mut x0);

    let start = evaluate(
        domain,
        &SeedConfig::from_flat(&x0),
        data,
        &opts.objective,
        None,
    )?;
    let factor = (n * n) as f64 / domain.area().powi(3);
    let initial_f = start.f.ok_or(Error::InvalidArgument(
        "initial seeds coincide after separation".into(),
    ))?;
    let initial = factor * initial_f;
    let scale = if initial > 0.0 { initial } else { 1.0 };
    let ftol = opts.ftol.unwrap_or(1e-8 * initial);
    let mut objective = NormalisedF {
        domain,
        data,
        opts: opts.objective,
        fd_step: opts.fd_step,
        factor,
        scale,
        warm: Some(start.dual.weights.clone()),
    };
    let mut trace = Vec::new();
    let run = constrained_optimize(
        &mut objective,
        &constraints,
        &x0,
        &optimizer_options(domain, opts, ftol / scale),
        |r| trace.push(trace_row(r.iter, r.value * scale, r.aux, r.x, delta)),
    )?;
    let objective = run.value * scale;
    finish(
        domain,
        data,
        opts,
        run,
        trace,
        objective,
        (initial, initial_f),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_voronoi_data;

    #[test]
    fn single_cell_recovery_is_trivial() {
        let dom = Domain::unit_square();
        let data = TargetData::new(vec![1.0], vec![Point::new(0.5, 0.5)], &dom).unwrap();
        let r = recover_diagram(
            &dom,
            &data,
            RecoveryStart::Random(3),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(r.h.abs() < 1e-14);
        assert!(r.trace.iter().all(|t| t.objective.abs() < 1e-14));
        assert!((r.diagram.areas[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn small_recovery() {
        let dom = Domain::unit_square();
        let (_, data, source) = random_voronoi_data(&dom, 5, 11).unwrap();
        let r = recover_diagram(
            &dom,
            &data,
            RecoveryStart::Random(5),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(r.h.abs() < 1e-8, "{}", r.h);
        assert!(r.h >= r.initial_objective);
        let (per_cell, _) = diagram_symmetric_difference(&r.diagram, &source).unwrap();
        for (d, a) in per_cell.iter().zip(&source.areas) {
            assert!(*d < 5e-3 * a, "{d} vs area {a}");
        }
    }

    #[test]
    fn constraint_gradients_match_differences() {
        let c = SeedConstraints::new(3, 0.1, Some((Point::new(0.5, 0.5), 1.5)));
        let x = [0.1, 0.2, 0.4, 0.9, 0.7, 0.3];
        for k in 0..c.count() {
            let mut g = [0.0; 6];
            c.add_gradient(&x, k, 1.0, &mut g);
            for m in 0..6 {
                let (mut p, mut q) = (x, x);
                p[m] += 1e-6;
                q[m] -= 1e-6;
                let fd = (c.values(&p)[k] - c.values(&q)[k]) / 2e-6;
                assert!((fd - g[m]).abs() < 1e-5 * (1.0 + fd.abs()), "k={k} m={m}");
            }
        }
    }

    #[test]
    fn projection_separates_seeds() {
        let c = SeedConstraints::new(3, 0.1, None);
        let mut x = [0.5, 0.5, 0.5, 0.5, 0.52, 0.5];
        c.project(&mut x);
        assert!(c.values(&x).iter().all(|&v| v >= -1e-9), "{x:?}");
    }
}
