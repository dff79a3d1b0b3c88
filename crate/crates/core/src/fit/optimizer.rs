//! Augmented-Lagrangian minimisation under inequality constraints `c_k(x) ≥ 0`.
//!
//! Each iteration takes one L-BFGS step on
//! `L(x) = f(x) + Σ ψ(c_k(x), λ_k, μ)` with
//! `ψ(c) = −λc + ½μc²` for `c < λ/μ` and `−λ²/(2μ)` otherwise, using an
//! Armijo backtracking line search. Multipliers are updated with
//! `λ ← max(0, λ − μc)` whenever the objective has settled while the
//! iterate is still infeasible, and at every `penalty_interval` boundary;
//! the penalty `μ` grows only at those boundaries while infeasible.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value of an objective, its gradient when requested, and one auxiliary
/// scalar carried into the trace.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
    pub aux: f64,
}

pub trait Objective {
    fn evaluate(&mut self, x: &[f64], gradient: bool) -> Result<Evaluation>;
}

/// A family of inequality constraints `c_k(x) ≥ 0`.
pub trait Constraints {
    fn count(&self) -> usize;

    fn values(&self, x: &[f64]) -> Vec<f64>;

    /// Adds `scale · ∇c_k(x)` to `grad`.
    fn add_gradient(&self, x: &[f64], k: usize, scale: f64, grad: &mut [f64]);

    /// Moves `x` towards the feasible set. The default does nothing.
    fn project(&self, _x: &mut [f64]) {}
}

/// The empty constraint set.
pub struct Unconstrained;

impl Constraints for Unconstrained {
    fn count(&self) -> usize {
        0
    }

    fn values(&self, _x: &[f64]) -> Vec<f64> {
        Vec::new()
    }

    fn add_gradient(&self, _x: &[f64], _k: usize, _scale: f64, _grad: &mut [f64]) {}
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltySchedule {
    pub initial: f64,
    pub factor: f64,
    /// Iterations between penalty increases.
    pub interval: usize,
    pub max: f64,
}

impl Default for PenaltySchedule {
    fn default() -> Self {
        PenaltySchedule {
            initial: 10.0,
            factor: 10.0,
            interval: 50,
            max: 1e8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerOptions {
    /// Converged once `|Δf| < ftol` on five consecutive accepted steps
    /// and the iterate is feasible.
    pub ftol: f64,
    pub max_iters: usize,
    pub penalty: PenaltySchedule,
    /// Largest tolerated constraint violation `max(0, −c_k)`.
    pub feasibility_tol: f64,
    /// Cap on the largest coordinate change in one step.
    pub max_step: f64,
    /// Largest coordinate change of a steepest-descent step.
    pub initial_step: f64,
    pub memory: usize,
    pub max_halvings: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        OptimizerOptions {
            ftol: 1e-12,
            max_iters: 1000,
            penalty: PenaltySchedule::default(),
            feasibility_tol: 1e-8,
            max_step: f64::INFINITY,
            initial_step: 1.0,
            memory: 10,
            max_halvings: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIters,
    Stalled,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::Stalled => "stalled",
        }
    }
}

/// State after an accepted step, passed to the trace callback.
#[derive(Debug)]
pub struct IterationRecord<'a> {
    pub iter: usize,
    pub value: f64,
    pub aux: f64,
    pub violation: f64,
    pub penalty: f64,
    pub x: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    /// Best feasible iterate, or the last one if none was feasible.
    pub x: Vec<f64>,
    pub value: f64,
    pub aux: f64,
    pub violation: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub multipliers: Vec<f64>,
}

fn violation(c: &[f64]) -> f64 {
    c.iter().fold(0.0, |m, &ck| m.max(-ck))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, &x| m.max(x.abs()))
}

struct Lagrangian<'a, C: Constraints + ?Sized> {
    constraints: &'a C,
    lambda: Vec<f64>,
    mu: f64,
}

impl<C: Constraints + ?Sized> Lagrangian<'_, C> {
    fn penalty_value(&self, c: &[f64]) -> f64 {
        c.iter()
            .zip(&self.lambda)
            .map(|(&ck, &lk)| {
                if lk - self.mu * ck > 0.0 {
                    -lk * ck + 0.5 * self.mu * ck * ck
                } else {
                    -lk * lk / (2.0 * self.mu)
                }
            })
            .sum()
    }

    fn add_penalty_gradient(&self, x: &[f64], c: &[f64], grad: &mut [f64]) {
        for (k, (&ck, &lk)) in c.iter().zip(&self.lambda).enumerate() {
            let slope = self.mu * ck - lk;
            if slope < 0.0 {
                self.constraints.add_gradient(x, k, slope, grad);
            }
        }
    }

    fn update_multipliers(&mut self, c: &[f64]) {
        for (lk, &ck) in self.lambda.iter_mut().zip(c) {
            *lk = (*lk - self.mu * ck).max(0.0);
        }
    }
}

struct Point {
    x: Vec<f64>,
    eval: Evaluation,
    c: Vec<f64>,
    merit: f64,
    merit_grad: Vec<f64>,
}

fn merit_at<C: Constraints + ?Sized>(
    lag: &Lagrangian<'_, C>,
    x: Vec<f64>,
    eval: Evaluation,
) -> Result<Point> {
    let c = lag.constraints.values(&x);
    let merit = eval.value + lag.penalty_value(&c);
    let mut merit_grad = eval
        .gradient
        .clone()
        .ok_or_else(|| Error::InvalidArgument("objective returned no gradient".into()))?;
    lag.add_penalty_gradient(&x, &c, &mut merit_grad);
    Ok(Point {
        x,
        eval,
        c,
        merit,
        merit_grad,
    })
}

struct Lbfgs {
    memory: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl Lbfgs {
    fn clear(&mut self) {
        self.pairs.clear();
    }

    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        if sy <= 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() || !sy.is_finite() {
            return;
        }
        if self.pairs.len() == self.memory {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// `−H·g` by the two-loop recursion; `None` without curvature pairs.
    fn direction(&self, g: &[f64]) -> Option<Vec<f64>> {
        let (s_last, y_last, _) = self.pairs.back()?;
        let mut q = g.to_vec();
        let mut alpha = vec![0.0; self.pairs.len()];
        for (k, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            alpha[k] = rho * dot(s, &q);
            q.iter_mut()
                .zip(y)
                .for_each(|(qi, yi)| *qi -= alpha[k] * yi);
        }
        let gamma = dot(s_last, y_last) / dot(y_last, y_last);
        q.iter_mut().for_each(|qi| *qi *= gamma);
        for (k, (s, y, rho)) in self.pairs.iter().enumerate() {
            let beta = rho * dot(y, &q);
            q.iter_mut()
                .zip(s)
                .for_each(|(qi, si)| *qi += (alpha[k] - beta) * si);
        }
        q.iter_mut().for_each(|qi| *qi = -*qi);
        Some(q)
    }
}

/// Minimises `objective` subject to `constraints ≥ 0` starting from `x0`.
pub fn constrained_optimize<O, C>(
    objective: &mut O,
    constraints: &C,
    x0: &[f64],
    opts: &OptimizerOptions,
    mut callback: impl FnMut(&IterationRecord<'_>),
) -> Result<OptimizeResult>
where
    O: Objective + ?Sized,
    C: Constraints + ?Sized,
{
    let mut x = x0.to_vec();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("starting point"));
    }
    constraints.project(&mut x);
    let start_violation = violation(&constraints.values(&x));
    if start_violation > 1e-2 {
        return Err(Error::InfeasibleStart {
            violation: start_violation,
        });
    }

    let mut lag = Lagrangian {
        constraints,
        lambda: vec![0.0; constraints.count()],
        mu: opts.penalty.initial,
    };
    let eval = objective.evaluate(&x, true)?;
    let mut cur = merit_at(&lag, x, eval)?;
    let feasible = |c: &[f64]| violation(c) <= opts.feasibility_tol;

    let mut best: Option<(Vec<f64>, Evaluation, f64)> = None;
    let consider_best = |p: &Point, best: &mut Option<(Vec<f64>, Evaluation, f64)>| {
        if feasible(&p.c) && best.as_ref().is_none_or(|b| p.eval.value < b.1.value) {
            *best = Some((p.x.clone(), p.eval.clone(), violation(&p.c)));
        }
    };
    consider_best(&cur, &mut best);
    callback(&IterationRecord {
        iter: 0,
        value: cur.eval.value,
        aux: cur.eval.aux,
        violation: violation(&cur.c),
        penalty: lag.mu,
        x: &cur.x,
    });

    let mut lbfgs = Lbfgs {
        memory: opts.memory.max(1),
        pairs: VecDeque::new(),
    };
    let mut settled = 0;
    let mut failures = 0;
    let mut termination = Termination::MaxIters;
    let mut iterations = 0;

    for iter in 1..=opts.max_iters {
        iterations = iter;
        let g = &cur.merit_grad;
        let gmax = max_abs(g);
        if gmax == 0.0 && feasible(&cur.c) {
            termination = Termination::Converged;
            break;
        }
        let mut d = match lbfgs.direction(g) {
            Some(d) if dot(&d, g) < 0.0 => d,
            _ => {
                lbfgs.clear();
                let scale = opts.initial_step.min(opts.max_step) / gmax.max(f64::MIN_POSITIVE);
                g.iter().map(|gi| -gi * scale).collect::<Vec<_>>()
            }
        };
        let dmax = max_abs(&d);
        if dmax > opts.max_step {
            let s = opts.max_step / dmax;
            d.iter_mut().for_each(|di| *di *= s);
        }
        let slope = dot(&d, g);

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<f64> = cur.x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            if let Ok(e) = objective.evaluate(&trial, false) {
                let c = constraints.values(&trial);
                let merit = e.value + lag.penalty_value(&c);
                if merit.is_finite() && merit <= cur.merit + 1e-4 * t * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            t *= 0.5;
        }

        let Some(next_x) = accepted else {
            failures += 1;
            lbfgs.clear();
            if failures >= 3 {
                termination = Termination::Stalled;
                break;
            }
            continue;
        };
        failures = 0;
        let eval = match objective.evaluate(&next_x, true) {
            Ok(e) => e,
            Err(_) => {
                failures += 1;
                lbfgs.clear();
                if failures >= 3 {
                    termination = Termination::Stalled;
                    break;
                }
                continue;
            }
        };
        let next = merit_at(&lag, next_x, eval)?;
        let s: Vec<f64> = next.x.iter().zip(&cur.x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next
            .merit_grad
            .iter()
            .zip(&cur.merit_grad)
            .map(|(a, b)| a - b)
            .collect();
        lbfgs.push(s, y);
        let change = (next.eval.value - cur.eval.value).abs();
        cur = next;
        consider_best(&cur, &mut best);
        callback(&IterationRecord {
            iter,
            value: cur.eval.value,
            aux: cur.eval.aux,
            violation: violation(&cur.c),
            penalty: lag.mu,
            x: &cur.x,
        });

        settled = if change < opts.ftol { settled + 1 } else { 0 };
        let mut refresh = false;
        if settled >= 5 {
            if feasible(&cur.c) {
                termination = Termination::Converged;
                break;
            }
            lag.update_multipliers(&cur.c);
            settled = 0;
            refresh = true;
        }
        if opts.penalty.interval > 0 && iter % opts.penalty.interval == 0 && !feasible(&cur.c) {
            lag.update_multipliers(&cur.c);
            lag.mu = (lag.mu * opts.penalty.factor).min(opts.penalty.max);
            refresh = true;
        }
        if refresh {
            lbfgs.clear();
            let Point { x, eval, .. } = cur;
            cur = merit_at(&lag, x, eval)?;
        }
    }

    let (x, eval, viol) = match best {
        Some(b) => b,
        None => {
            let v = violation(&cur.c);
            (cur.x, cur.eval, v)
        }
    };
    Ok(OptimizeResult {
        x,
        value: eval.value,
        aux: eval.aux,
        violation: viol,
        iterations,
        termination,
        multipliers: lag.lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `g(x) = −½(x₁−2)² − 2(x₂−1)²`, maximised by minimising `−g`.
    struct NegG;

    impl Objective for NegG {
        fn evaluate(&mut self, x: &[f64], _: bool) -> Result<Evaluation> {
            let (a, b) = (x[0] - 2.0, x[1] - 1.0);
            Ok(Evaluation {
                value: 0.5 * a * a + 2.0 * b * b,
                gradient: Some(vec![a, 4.0 * b]),
                aux: 0.0,
            })
        }
    }

    /// `|∇g|² = (x₁−2)² + 16(x₂−1)²`.
    struct GradNormSq;

    impl Objective for GradNormSq {
        fn evaluate(&mut self, x: &[f64], _: bool) -> Result<Evaluation> {
            let (a, b) = (x[0] - 2.0, x[1] - 1.0);
            Ok(Evaluation {
                value: a * a + 16.0 * b * b,
                gradient: Some(vec![2.0 * a, 32.0 * b]),
                aux: 0.0,
            })
        }
    }

    /// `1 − (x₁/2)² − x₂² ≥ 0`.
    struct Ellipse;

    impl Constraints for Ellipse {
        fn count(&self) -> usize {
            1
        }

        fn values(&self, x: &[f64]) -> Vec<f64> {
            vec![1.0 - 0.25 * x[0] * x[0] - x[1] * x[1]]
        }

        fn add_gradient(&self, x: &[f64], _k: usize, scale: f64, grad: &mut [f64]) {
            grad[0] += scale * (-0.5 * x[0]);
            grad[1] += scale * (-2.0 * x[1]);
        }
    }

    fn run(obj: &mut dyn Objective, cons: &dyn Constraints) -> OptimizeResult {
        let opts = OptimizerOptions {
            initial_step: 0.1,
            ..Default::default()
        };
        constrained_optimize(obj, cons, &[0.0, 0.0], &opts, |_| {}).unwrap()
    }

    #[test]
    fn ellipse_maximiser() {
        let r = run(&mut NegG, &Ellipse);
        assert_eq!(r.termination, Termination::Converged);
        assert!((r.x[0] - 2f64.sqrt()).abs() < 1e-4, "{:?}", r.x);
        assert!((r.x[1] - 0.5f64.sqrt()).abs() < 1e-4, "{:?}", r.x);
        assert!(r.violation <= 1e-8);
    }

    #[test]
    fn ellipse_gradient_norm_minimiser() {
        let r = run(&mut GradNormSq, &Ellipse);
        assert!((r.x[0] - 1.108097).abs() < 1e-3, "{:?}", r.x);
        assert!((r.x[1] - 0.832484).abs() < 1e-3, "{:?}", r.x);
    }

    #[test]
    fn unconstrained_quadratic() {
        let r = run(&mut NegG, &Unconstrained);
        assert!(
            (r.x[0] - 2.0).abs() < 1e-8 && (r.x[1] - 1.0).abs() < 1e-8,
            "{:?}",
            r.x
        );
    }

    #[test]
    fn infeasible_start_rejected() {
        let r = constrained_optimize(
            &mut NegG,
            &Ellipse,
            &[5.0, 5.0],
            &OptimizerOptions::default(),
            |_| {},
        );
        assert!(matches!(r, Err(Error::InfeasibleStart { .. })));
    }

    #[test]
    fn trace_callback_sees_every_step() {
        let mut iters = Vec::new();
        let r = constrained_optimize(
            &mut NegG,
            &Ellipse,
            &[0.0, 0.0],
            &OptimizerOptions::default(),
            |rec| iters.push(rec.iter),
        )
        .unwrap();
        assert_eq!(iters[0], 0);
        assert!(iters.windows(2).all(|w| w[1] > w[0]));
        assert!(*iters.last().unwrap() <= r.iterations);
    }
}
