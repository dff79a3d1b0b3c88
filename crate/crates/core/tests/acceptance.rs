//! End-to-end acceptance checks. Each criterion prints one line,
//! `criterion N PASS|FAIL: <name>: <details>`, and the process exits
//! non-zero if any fails.
//!
//! Run a subset with `cargo test -p laguerre --test acceptance -- 1 4 11`.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use laguerre::aniso::{
    eval_on_grid, recover_aniso, AnisoOptions, AnisotropyMatrices, RasterGrid, Sym2,
};
use laguerre::fit::{
    check_necessary_conditions, constrained_optimize, diagram_symmetric_difference, fit_diagram,
    maximize_h_constrained, recover_diagram, Constraints, Evaluation, FitOptions, Objective,
    OptimizerOptions, RecoveryStart,
};
use laguerre::geom2d::build_laguerre;
use laguerre::ingest::grid_to_targets;
use laguerre::objective::{eval_h, grad_h};
use laguerre::sdot::{dual_eval, solve_weights, OtOptions};
use laguerre::synth::{perturb_data, random_grain_grid, random_voronoi_data, PerturbationSpec};
use laguerre::{Domain, Point, SeedConfig, TargetData, WeightVector};

type Outcome = std::result::Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: laguerre::Error) -> String {
    format!("error: {e}")
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn c1_ot_tolerance() -> Outcome {
    let dom = Domain::unit_square();
    let (seeds, _, _) = random_voronoi_data(&dom, 20, 1).map_err(err)?;
    let v = vec![1.0 / 20.0; 20];
    let t = Instant::now();
    let r = solve_weights(&dom, &seeds, &v, &OtOptions::default()).map_err(err)?;
    let el = t.elapsed();
    check(
        r.max_rel_area_error < 0.1 && r.iterations <= 100 && el < Duration::from_secs(1),
        format!(
            "max area error {:.2e}% after {} Newton steps in {}",
            r.max_rel_area_error,
            r.iterations,
            secs(el)
        ),
    )
}

fn c2_recovery() -> Outcome {
    let dom = Domain::unit_square();
    let (_, data, source) = random_voronoi_data(&dom, 20, 2).map_err(err)?;
    let t = Instant::now();
    let r = recover_diagram(
        &dom,
        &data,
        RecoveryStart::Random(7),
        &FitOptions::default(),
    )
    .map_err(err)?;
    let el = t.elapsed();
    let (per_cell, _) = diagram_symmetric_difference(&r.diagram, &source).map_err(err)?;
    let worst = per_cell
        .iter()
        .zip(data.areas())
        .map(|(d, v)| d / v)
        .fold(0.0, f64::max);
    check(
        r.h.abs() <= 1e-8 && r.f <= 1e-12 && worst < 5e-3 && el < Duration::from_secs(60),
        format!(
            "|H| = {:.2e}, f = {:.2e}, worst cell symmetric difference {:.2e} of its area, {} iterations, {}",
            r.h.abs(),
            r.f,
            worst,
            r.iterations,
            secs(el)
        ),
    )
}

fn c3_uniqueness() -> Outcome {
    let dom = Domain::unit_square();
    let (_, data, _) = random_voronoi_data(&dom, 20, 3).map_err(err)?;
    let opts = FitOptions::default();
    let a = recover_diagram(&dom, &data, RecoveryStart::Random(100), &opts).map_err(err)?;
    let b = recover_diagram(&dom, &data, RecoveryStart::Random(200), &opts).map_err(err)?;
    let (_, total) = diagram_symmetric_difference(&a.diagram, &b.diagram).map_err(err)?;
    check(
        total < 1e-3,
        format!("total symmetric difference {total:.2e}"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

fn c4_gradients() -> Outcome {
    let dom = Domain::unit_square();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_k: f64 = 0.0;
    let mut worst_h: f64 = 0.0;
    for trial in 0..20 {
        let n = 2 + trial % 9;
        let (seeds, _, _) = random_voronoi_data(&dom, n, 1000 + trial as u64).map_err(err)?;
        let v = vec![1.0 / n as f64; n];
        let w: Vec<f64> = (0..n).map(|_| 0.01 * (rng.random::<f64>() - 0.5)).collect();
        let e = dual_eval(&dom, &seeds, &WeightVector::new(w.clone()), &v).map_err(err)?;
        let h = 1e-6;
        let mut fd = Vec::with_capacity(n);
        for i in 0..n {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += h;
            wm[i] -= h;
            let kp = dual_eval(&dom, &seeds, &WeightVector::new(wp), &v)
                .map_err(err)?
                .value;
            let km = dual_eval(&dom, &seeds, &WeightVector::new(wm), &v)
                .map_err(err)?
                .value;
            fd.push((kp - km) / (2.0 * h));
        }
        worst_k = worst_k.max(rel_err(&e.gradient, &fd));

        let (_, data, _) = random_voronoi_data(&dom, n, 2000 + trial as u64).map_err(err)?;
        let g: Vec<f64> = grad_h(&dom, &seeds, &data)
            .map_err(err)?
            .iter()
            .flat_map(|p| [p.x, p.y])
            .collect();
        let x = seeds.to_flat();
        let mut fd = Vec::with_capacity(2 * n);
        for k in 0..2 * n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let hp = eval_h(&dom, &SeedConfig::from_flat(&xp), &data)
                .map_err(err)?
                .h;
            let hm = eval_h(&dom, &SeedConfig::from_flat(&xm), &data)
                .map_err(err)?
                .h;
            fd.push((hp - hm) / (2.0 * h));
        }
        worst_h = worst_h.max(rel_err(&g, &fd));
    }
    check(
        worst_k < 1e-5 && worst_h < 1e-5,
        format!("worst relative error: dual gradient {worst_k:.2e}, H gradient {worst_h:.2e}"),
    )
}

fn c5_h_properties() -> Outcome {
    let dom = Domain::unit_square();
    let scale = dom.area() * dom.diameter().powi(2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut failures = Vec::new();
    let random_seeds = |rng: &mut ChaCha8Rng, n: usize| {
        SeedConfig::new(
            (0..n)
                .map(|_| Point::new(rng.random::<f64>(), rng.random::<f64>()))
                .collect(),
        )
    };
    let h_of = |x: &SeedConfig, d: &TargetData| eval_h(&dom, x, d).map(|e| e.h).map_err(err);

    // homogeneity, constant configurations, f = |∇H|², diagram invariance
    let mut worst_hom: f64 = 0.0;
    let mut worst_const: f64 = 0.0;
    let mut worst_f: f64 = 0.0;
    let mut worst_inv: f64 = 0.0;
    for trial in 0..20u64 {
        let n = 3 + (trial as usize) % 6;
        let (_, data, _) = random_voronoi_data(&dom, n, 500 + trial).map_err(err)?;
        let x = random_seeds(&mut rng, n);
        let lambda = 0.5 + rng.random::<f64>();
        let t = Point::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
        let hx = h_of(&x, &data)?;
        let hy = h_of(&x.dilate_translate(lambda, t), &data)?;
        worst_hom = worst_hom.max((hy - lambda * hx).abs() / (lambda * hx).abs().max(1e-300));

        let p = Point::new(rng.random::<f64>(), rng.random::<f64>());
        let hc = h_of(&SeedConfig::new(vec![p; n]), &data)?;
        worst_const = worst_const.max(hc.abs() / scale);

        let e = eval_h(&dom, &x, &data).map_err(err)?;
        let gsq: f64 = e.grad_h.as_ref().unwrap().iter().map(|g| g.norm_sq()).sum();
        worst_f = worst_f.max((e.f.unwrap() - gsq).abs() / gsq.max(1e-300));

        let w: Vec<f64> = (0..n).map(|_| 0.02 * (rng.random::<f64>() - 0.5)).collect();
        let moved = x.dilate_translate(lambda, t);
        let w2: Vec<f64> = (0..n)
            .map(|i| moved.points()[i].norm_sq() - lambda * x.points()[i].norm_sq() + lambda * w[i])
            .collect();
        let d1 = build_laguerre(&dom, &x, &WeightVector::new(w)).map_err(err)?;
        let d2 = build_laguerre(&dom, &moved, &WeightVector::new(w2)).map_err(err)?;
        let (_, total) = diagram_symmetric_difference(&d1, &d2).map_err(err)?;
        worst_inv = worst_inv.max(total / dom.area());
    }
    if worst_hom >= 1e-9 {
        failures.push(format!("homogeneity {worst_hom:.2e}"));
    }
    if worst_const >= 1e-10 {
        failures.push(format!("constant configuration {worst_const:.2e}"));
    }
    if worst_f >= 1e-12 {
        failures.push(format!("f = |grad H|^2 {worst_f:.2e}"));
    }
    if worst_inv >= 1e-9 {
        failures.push(format!("diagram invariance {worst_inv:.2e}"));
    }

    // concavity and superlinearity
    let mut worst_mid = f64::INFINITY;
    let mut worst_sup = f64::INFINITY;
    for trial in 0..100u64 {
        let n = 2 + (trial as usize) % 7;
        let (_, data, _) = random_voronoi_data(&dom, n, 700 + trial).map_err(err)?;
        let x = random_seeds(&mut rng, n);
        let y = random_seeds(&mut rng, n);
        let xs = x.to_flat();
        let ys = y.to_flat();
        let mid: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| 0.5 * (a + b)).collect();
        let sum: Vec<f64> = xs.iter().zip(&ys).map(|(a, b)| a + b).collect();
        let (hx, hy) = (h_of(&x, &data)?, h_of(&y, &data)?);
        let hm = h_of(&SeedConfig::from_flat(&mid), &data)?;
        let hs = h_of(&SeedConfig::from_flat(&sum), &data)?;
        worst_mid = worst_mid.min(hm - 0.5 * (hx + hy));
        worst_sup = worst_sup.min(hs - hx - hy);
    }
    if worst_mid < -1e-9 {
        failures.push(format!("midpoint concavity {worst_mid:.2e}"));
    }
    if worst_sup < -1e-9 {
        failures.push(format!("superlinearity {worst_sup:.2e}"));
    }
    let detail = format!(
        "homogeneity {worst_hom:.1e}, constant {worst_const:.1e}, f identity {worst_f:.1e}, invariance {worst_inv:.1e}, concavity slack {worst_mid:.1e}, superlinearity slack {worst_sup:.1e}"
    );
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; failed: {}", failures.join(", ")))
    }
}

/// `g(x) = −½(x₁−2)² − 2(x₂−1)²`, maximised by minimising `−g`.
struct NegG;

impl Objective for NegG {
    fn evaluate(&mut self, x: &[f64], _: bool) -> laguerre::Result<Evaluation> {
        let (a, b) = (x[0] - 2.0, x[1] - 1.0);
        Ok(Evaluation {
            value: 0.5 * a * a + 2.0 * b * b,
            gradient: Some(vec![a, 4.0 * b]),
            aux: 0.0,
        })
    }
}

struct GradNormSq;

impl Objective for GradNormSq {
    fn evaluate(&mut self, x: &[f64], _: bool) -> laguerre::Result<Evaluation> {
        let (a, b) = (x[0] - 2.0, x[1] - 1.0);
        Ok(Evaluation {
            value: a * a + 16.0 * b * b,
            gradient: Some(vec![2.0 * a, 32.0 * b]),
            aux: 0.0,
        })
    }
}

/// `x₁²/4 + x₂² ≤ 1`.
struct Ellipse;

impl Constraints for Ellipse {
    fn count(&self) -> usize {
        1
    }

    fn values(&self, x: &[f64]) -> Vec<f64> {
        vec![1.0 - 0.25 * x[0] * x[0] - x[1] * x[1]]
    }

    fn add_gradient(&self, x: &[f64], _k: usize, scale: f64, grad: &mut [f64]) {
        grad[0] -= scale * 0.5 * x[0];
        grad[1] -= scale * 2.0 * x[1];
    }
}

fn c6_optimizer() -> Outcome {
    let opts = OptimizerOptions {
        initial_step: 0.1,
        ..Default::default()
    };
    let a = constrained_optimize(&mut NegG, &Ellipse, &[0.0, 0.0], &opts, |_| {}).map_err(err)?;
    let b =
        constrained_optimize(&mut GradNormSq, &Ellipse, &[0.0, 0.0], &opts, |_| {}).map_err(err)?;
    let ea = (a.x[0] - 2f64.sqrt())
        .abs()
        .max((a.x[1] - 0.5f64.sqrt()).abs());
    let eb = (b.x[0] - 1.108097).abs().max((b.x[1] - 0.832484).abs());
    check(
        ea < 1e-4 && eb < 1e-3,
        format!(
            "max g at ({:.6}, {:.6}), min |grad g|^2 at ({:.6}, {:.6})",
            a.x[0], a.x[1], b.x[0], b.x[1]
        ),
    )
}

fn perturbed(eps: f64) -> std::result::Result<(Domain, TargetData), String> {
    let dom = Domain::unit_square();
    let (_, data, _) = random_voronoi_data(&dom, 20, 2).map_err(err)?;
    let p = perturb_data(
        &data,
        &PerturbationSpec {
            epsilon: eps,
            rng_seed: 11,
        },
        &dom,
    )
    .map_err(err)?;
    Ok((dom, p))
}

fn c7_small_perturbation() -> Outcome {
    let (dom, data) = perturbed(0.001)?;
    let r = maximize_h_constrained(&dom, &data, None, &FitOptions::default()).map_err(err)?;
    let ratio = r.f / r.initial_f;
    check(
        ratio < 1e-2 && r.active_separation_constraints.is_empty(),
        format!(
            "f / f(B) = {:.2e} after {} iterations, {} active separation constraints",
            ratio,
            r.iterations,
            r.active_separation_constraints.len()
        ),
    )
}

fn c8_large_perturbation() -> Outcome {
    let (dom, data) = perturbed(0.05)?;
    let r = maximize_h_constrained(&dom, &data, None, &FitOptions::default()).map_err(err)?;
    let peak_active = r
        .trace
        .iter()
        .map(|t| t.active_constraints)
        .max()
        .unwrap_or(0);
    check(
        !r.trace.is_empty() && r.f <= r.initial_f,
        format!(
            "{} trace rows, f / f(B) = {:.3}, at most {} active constraints, closest pair {:.2} delta at the end",
            r.trace.len(),
            r.f / r.initial_f,
            peak_active,
            r.trace.last().map_or(f64::NAN, |t| t.min_pair_dist_over_delta)
        ),
    )
}

fn c9_ebsd_scale() -> Outcome {
    let t = Instant::now();
    let grid = random_grain_grid(243, 1009, 0.25, 9).map_err(err)?;
    let (dom, data) = grid_to_targets(&grid, None).map_err(err)?;
    let r = fit_diagram(&dom, &data, None, &FitOptions::default()).map_err(err)?;
    let el = t.elapsed();
    let factor = r.initial_objective / r.objective;
    check(
        factor >= 5.0 && el < Duration::from_secs(30 * 60),
        format!(
            "normalised f reduced {:.1}x ({:.3e} to {:.3e}) in {} iterations, {}",
            factor,
            r.initial_objective,
            r.objective,
            r.iterations,
            secs(el)
        ),
    )
}

fn c10_necessary_conditions() -> Outcome {
    let dom = Domain::unit_square();
    let mut failing = Vec::new();
    for k in 0..50u64 {
        let n = 2 + (k as usize * 7) % 60;
        let (_, data, _) = random_voronoi_data(&dom, n, 3000 + k).map_err(err)?;
        if !check_necessary_conditions(&dom, &data).all_pass {
            failing.push(k);
        }
    }
    let bad = TargetData::new(
        vec![0.5, 0.5],
        vec![Point::new(0.1, 0.5), Point::new(0.9, 0.5)],
        &dom,
    )
    .map_err(err)?;
    let rep = check_necessary_conditions(&dom, &bad);
    check(
        failing.is_empty() && !rep.all_pass,
        format!(
            "{} of 50 genuine datasets fail; constructed violation fails: {}",
            failing.len(),
            !rep.all_pass
        ),
    )
}

fn c11_anisotropic() -> Outcome {
    let dom = Domain::unit_square();
    let res = 512;
    let grid = RasterGrid::new(&dom, res).map_err(err)?;
    let px = grid.pixel_width();

    // isotropic reduction of the gradient
    let (_, data, _) = random_voronoi_data(&dom, 12, 21).map_err(err)?;
    let (x, _, _) = random_voronoi_data(&dom, 12, 22).map_err(err)?;
    let exact = grad_h(&dom, &x, &data).map_err(err)?;
    let iso = eval_on_grid(
        &grid,
        &x,
        &data,
        &AnisotropyMatrices::identity(12),
        1e-3,
        None,
    )
    .map_err(err)?;
    let worst_ratio = (0..12)
        .map(|i| {
            let d = iso.grad[i] - exact[i];
            d.x.abs().max(d.y.abs()) / (2.0 * px * data.areas()[i])
        })
        .fold(0.0, f64::max);

    // round trip through a known anisotropic raster diagram
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let n = 10;
    let (seeds, _, _) = random_voronoi_data(&dom, n, 24).map_err(err)?;
    let mats = AnisotropyMatrices::from_sym(
        (0..n)
            .map(|_| {
                Sym2::rotated(
                    1.0 + 2.0 * rng.random::<f64>(),
                    1.0,
                    std::f64::consts::PI * rng.random::<f64>(),
                )
            })
            .collect(),
    )
    .map_err(err)?;
    let truth = grid
        .diagram(&seeds, &WeightVector::zeros(n), &mats)
        .map_err(err)?;
    let centroids: Vec<Point> = truth.centroids.iter().map(|c| c.unwrap()).collect();
    let aniso_data = TargetData::new(truth.areas.clone(), centroids, &dom).map_err(err)?;
    let rec = recover_aniso(
        &dom,
        &aniso_data,
        &mats,
        RecoveryStart::Random(25),
        &AnisoOptions::default(),
    )
    .map_err(err)?;
    let agreement = rec.diagram.label_agreement(&truth);
    let centroid_err = rec
        .diagram
        .centroids
        .iter()
        .zip(aniso_data.centroids())
        .map(|(c, b)| c.map_or(f64::INFINITY, |c| (c - *b).norm()))
        .fold(0.0, f64::max)
        / px;
    check(
        worst_ratio <= 1.0 && agreement > 0.98,
        format!(
            "isotropic gradient error at most {:.2} of the 2-pixel bound; round trip label agreement {:.2}%, worst centroid error {:.2} px",
            worst_ratio,
            100.0 * agreement,
            centroid_err
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 11] = [
        ("OT solver tolerance", c1_ot_tolerance),
        ("recovery of a Voronoi diagram", c2_recovery),
        ("uniqueness across initial guesses", c3_uniqueness),
        ("gradient oracles", c4_gradients),
        ("H property suite", c5_h_properties),
        ("optimizer oracle", c6_optimizer),
        ("perturbed fitting, epsilon 0.001", c7_small_perturbation),
        ("perturbed fitting, epsilon 0.05", c8_large_perturbation),
        ("grain-map scale fit", c9_ebsd_scale),
        ("necessary conditions", c10_necessary_conditions),
        ("anisotropic reduction and round trip", c11_anisotropic),
    ];
    // the harness passes flags like --nocapture; numeric arguments select criteria
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let id = k + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {id:>2} {tag}: {name}: {detail} [{}]",
            secs(t.elapsed())
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
