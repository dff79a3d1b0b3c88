use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom2d::{Domain, Point};
use crate::objective::TargetData;

const MARGIN_TOLERANCE: f64 = -1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMargin {
    pub i: usize,
    pub j: usize,
    /// `|b_i − b_j| − r_i − r_j`.
    pub margin: f64,
}

/// Necessary conditions for a compatible diagram to exist. A failing check
/// rules one out; passing proves nothing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessaryReport {
    /// `r_i = v_i / (4·diam(Ω))`.
    pub r: Vec<f64>,
    /// `dist(b_i, ∂Ω) − r_i`, negative outside the domain.
    pub boundary_margins: Vec<f64>,
    pub pairwise_margins: Vec<PairMargin>,
    /// Per cell and axis, whether `v_i l_j / (2 area) ≤ b_i^j − o_j ≤ l_j − v_i l_j / (2 area)`.
    /// Present only for axis-aligned rectangles.
    pub cuboid_bounds_ok: Option<Vec<[bool; 2]>>,
    pub all_pass: bool,
}

impl NecessaryReport {
    pub fn failing_cells(&self) -> Vec<usize> {
        let mut cells: Vec<usize> = (0..self.r.len())
            .filter(|&i| self.boundary_margins[i] < MARGIN_TOLERANCE)
            .collect();
        if let Some(ok) = &self.cuboid_bounds_ok {
            cells.extend((0..ok.len()).filter(|&i| !(ok[i][0] && ok[i][1])));
        }
        for p in &self.pairwise_margins {
            if p.margin < MARGIN_TOLERANCE {
                cells.extend([p.i, p.j]);
            }
        }
        cells.sort_unstable();
        cells.dedup();
        cells
    }
}

/// Evaluates the centroid-separation, boundary-distance and (on rectangles)
/// axis-bound conditions.
pub fn check_necessary_conditions(domain: &Domain, data: &TargetData) -> NecessaryReport {
    let v = data.areas();
    let b = data.centroids();
    let n = v.len();
    let diam = domain.diameter();
    let r: Vec<f64> = v.iter().map(|&vi| vi / (4.0 * diam)).collect();
    let boundary = domain.boundary();
    let boundary_margins: Vec<f64> = (0..n)
        .map(|i| boundary.signed_boundary_distance(b[i]) - r[i])
        .collect();
    let mut pairwise_margins = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairwise_margins.push(PairMargin {
                i,
                j,
                margin: (b[i] - b[j]).norm() - r[i] - r[j],
            });
        }
    }
    let cuboid_bounds_ok = domain.is_rectangle().then(|| {
        let (lo, hi) = domain.bounding_box();
        let l = hi - lo;
        let area = domain.area();
        let slack = 1e-12 * domain.diameter();
        (0..n)
            .map(|i| {
                let rel = b[i] - lo;
                let axis = |coord: f64, len: f64| {
                    let m = v[i] * len / (2.0 * area);
                    coord >= m - slack && coord <= len - m + slack
                };
                [axis(rel.x, l.x), axis(rel.y, l.y)]
            })
            .collect::<Vec<_>>()
    });
    let all_pass = boundary_margins.iter().all(|&m| m >= MARGIN_TOLERANCE)
        && pairwise_margins
            .iter()
            .all(|p| p.margin >= MARGIN_TOLERANCE)
        && cuboid_bounds_ok
            .as_ref()
            .is_none_or(|ok| ok.iter().all(|a| a[0] && a[1]));
    NecessaryReport {
        r,
        boundary_margins,
        pairwise_margins,
        cuboid_bounds_ok,
        all_pass,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pairwise_ok: bool,
    /// Index cycles whose inequality fails: pairs, then triples if checked.
    pub violations: Vec<Vec<usize>>,
}

/// Checks `Σ b_i·x_i ≥ Σ b_i·x_σ(i)` over every cycle of length at most
/// `max_subset_size` (2 or 3).
///
/// A pair passes when `(b_i − b_j)·(x_i − x_j) ≥ −1e-12·|b_i − b_j|·|x_i − x_j|`.
pub fn check_cyclical_monotonicity(
    b: &[Point],
    x: &[Point],
    max_subset_size: usize,
) -> Result<MonotonicityReport> {
    if b.len() != x.len() {
        return Err(Error::LengthMismatch {
            what: "seeds",
            expected: b.len(),
            found: x.len(),
        });
    }
    if !(2..=3).contains(&max_subset_size) {
        return Err(Error::InvalidArgument(format!(
            "cycle length {max_subset_size} (expected 2 or 3)"
        )));
    }
    let n = b.len();
    let mut violations = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (db, dx) = (b[i] - b[j], x[i] - x[j]);
            if db.dot(dx) < -1e-12 * db.norm() * dx.norm() {
                violations.push(vec![i, j]);
            }
        }
    }
    let pairwise_ok = violations.is_empty();
    if max_subset_size == 3 {
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let identity = b[i].dot(x[i]) + b[j].dot(x[j]) + b[k].dot(x[k]);
                    let mag = (b[i].norm() + b[j].norm() + b[k].norm())
                        * (x[i].norm() + x[j].norm() + x[k].norm());
                    let forward = b[i].dot(x[j]) + b[j].dot(x[k]) + b[k].dot(x[i]);
                    let backward = b[i].dot(x[k]) + b[j].dot(x[i]) + b[k].dot(x[j]);
                    if identity < forward.max(backward) - 1e-12 * mag {
                        violations.push(vec![i, j, k]);
                    }
                }
            }
        }
    }
    Ok(MonotonicityReport {
        pairwise_ok,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_bound_violation_detected() {
        let dom = Domain::unit_square();
        let data = TargetData::new(
            vec![0.5, 0.5],
            vec![Point::new(0.1, 0.5), Point::new(0.9, 0.5)],
            &dom,
        )
        .unwrap();
        let rep = check_necessary_conditions(&dom, &data);
        assert!(!rep.all_pass);
        let ok = rep.cuboid_bounds_ok.unwrap();
        assert_eq!(ok[0], [false, true]);
        assert_eq!(ok[1], [false, true]);
    }

    #[test]
    fn strip_example_passes() {
        let dom = Domain::unit_square();
        let data = TargetData::new(
            vec![0.5, 0.5],
            vec![Point::new(0.25, 0.5), Point::new(0.75, 0.5)],
            &dom,
        )
        .unwrap();
        let rep = check_necessary_conditions(&dom, &data);
        assert!(rep.all_pass);
        assert!((rep.r[0] - 0.5 / (4.0 * 2f64.sqrt())).abs() < 1e-15);
        assert!(rep.failing_cells().is_empty());
    }

    #[test]
    fn monotonicity() {
        let b = [
            Point::new(0.1, 0.2),
            Point::new(0.8, 0.3),
            Point::new(0.5, 0.9),
        ];
        let rep = check_cyclical_monotonicity(&b, &b, 3).unwrap();
        assert!(rep.pairwise_ok && rep.violations.is_empty());
        let swapped = [b[1], b[0], b[2]];
        let rep = check_cyclical_monotonicity(&b, &swapped, 2).unwrap();
        assert!(!rep.pairwise_ok);
        assert_eq!(rep.violations[0], vec![0, 1]);
        assert!(check_cyclical_monotonicity(&b, &b[..2], 2).is_err());
    }
}
