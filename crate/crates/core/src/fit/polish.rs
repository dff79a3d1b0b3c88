use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::Result;
use crate::geom2d::{Domain, Point, SeedConfig, WeightVector};
use crate::objective::{evaluate, ObjectiveOptions, TargetData};
use crate::sdot::OtOptions;

const MAX_STEPS: usize = 8;
const MAX_HALVINGS: usize = 6;

pub(crate) struct Polished {
    pub x: Vec<f64>,
    pub f: f64,
    pub h: f64,
    pub steps: usize,
}

struct Grad<'a> {
    domain: &'a Domain,
    data: &'a TargetData,
    opts: ObjectiveOptions,
    warm: Option<WeightVector>,
}

impl Grad<'_> {
    fn at(&mut self, x: &[f64]) -> Result<Option<(f64, DVector<f64>)>> {
        let seeds = SeedConfig::from_flat(x);
        let e = evaluate(
            self.domain,
            &seeds,
            self.data,
            &self.opts,
            self.warm.as_ref(),
        )?;
        let Some(g) = e.grad_h else { return Ok(None) };
        self.warm = Some(e.dual.weights);
        Ok(Some((
            e.h,
            DVector::from_iterator(x.len(), g.iter().flat_map(|p| [p.x, p.y])),
        )))
    }
}

/// Rescales `x` about its mean to the spread of the target centroids and
/// then takes Newton steps on `∇H = 0`.
///
/// `H(λX + T) = λH(X)` leaves the diagram unchanged, so only the shape of
/// the configuration matters. Ascent along that direction is flat and
/// quasi-Newton methods crawl there; the Hessian here is a central
/// difference of `∇H`, inverted on its range, which drops the gauge modes.
/// Steps are kept only when they lower `f` and stay feasible.
pub(crate) fn newton_polish(
    domain: &Domain,
    data: &TargetData,
    x: &[f64],
    feasible: impl Fn(&[f64]) -> bool,
    opts: &ObjectiveOptions,
) -> Result<Option<Polished>> {
    let n = data.len();
    let tight = ObjectiveOptions {
        ot: OtOptions {
            tol_percent: opts.ot.tol_percent.min(1e-10),
            ..opts.ot
        },
    };
    let mut grad = Grad {
        domain,
        data,
        opts: tight,
        warm: None,
    };

    let mean = |x: &[f64]| {
        let mut m = Point::ZERO;
        for i in 0..n {
            m += Point::new(x[2 * i], x[2 * i + 1]) * (1.0 / n as f64);
        }
        m
    };
    let spread = |x: &[f64], c: Point| -> f64 {
        (0..n)
            .map(|i| (Point::new(x[2 * i], x[2 * i + 1]) - c).norm_sq())
            .sum::<f64>()
            .sqrt()
    };
    let b = data.centroids();
    let sigma = domain.centroid();
    let target_spread = b.iter().map(|p| (*p - sigma).norm_sq()).sum::<f64>().sqrt();
    let m = mean(x);
    let current = spread(x, m);
    if current <= 0.0 || target_spread <= 0.0 {
        return Ok(None);
    }
    let lambda = target_spread / current;
    let mut x: Vec<f64> = (0..2 * n)
        .map(|k| {
            let (c, s) = if k % 2 == 0 {
                (m.x, sigma.x)
            } else {
                (m.y, sigma.y)
            };
            s + lambda * (x[k] - c)
        })
        .collect();
    if !feasible(&x) {
        return Ok(None);
    }
    let Some((mut h, mut g)) = grad.at(&x)? else {
        return Ok(None);
    };
    let mut f = g.norm_squared();
    let step = 1e-6 * target_spread / (n as f64).sqrt();
    let mut steps = 0;

    for _ in 0..MAX_STEPS {
        if f == 0.0 {
            break;
        }
        let mut jac = DMatrix::zeros(2 * n, 2 * n);
        let mut xp = x.clone();
        for k in 0..2 * n {
            xp[k] = x[k] + step;
            let Some((_, gp)) = grad.at(&xp)? else {
                return Ok(None);
            };
            xp[k] = x[k] - step;
            let Some((_, gm)) = grad.at(&xp)? else {
                return Ok(None);
            };
            xp[k] = x[k];
            jac.set_column(k, &((gp - gm) / (2.0 * step)));
        }
        let sym = (&jac + jac.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let top = eig.eigenvalues.amax();
        let mut delta = DVector::zeros(2 * n);
        for (j, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev.abs() > 1e-8 * top {
                let u = eig.eigenvectors.column(j);
                delta -= u * (u.dot(&g) / ev);
            }
        }

        let mut accepted = false;
        let mut t = 1.0;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = (0..2 * n).map(|k| x[k] + t * delta[k]).collect();
            if feasible(&trial) {
                if let Some((ht, gt)) = grad.at(&trial)? {
                    let ft = gt.norm_squared();
                    if ft < f {
                        (x, h, g, f) = (trial, ht, gt, ft);
                        accepted = true;
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        steps += 1;
    }
    Ok(Some(Polished { x, f, h, steps }))
}
