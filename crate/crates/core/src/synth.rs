//! Synthetic test data: Voronoi diagrams of uniform random seeds, and
//! compatible perturbations of their centroids.
//!
//! All randomness comes from `ChaCha8Rng::seed_from_u64`, so a given seed
//! reproduces the same data on every platform.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::aniso::{AnisotropyMatrices, RasterGrid};
use crate::error::{Error, Result};
use crate::geom2d::{build_laguerre, Domain, LaguerreDiagram, Point, SeedConfig, WeightVector};
use crate::ingest::LabelGrid;
use crate::objective::TargetData;

const MAX_ATTEMPTS: usize = 100;

/// `n` points drawn uniformly from the domain by rejection from its
/// bounding box.
pub fn sample_uniform<R: Rng + ?Sized>(domain: &Domain, n: usize, rng: &mut R) -> Vec<Point> {
    let (lo, hi) = domain.bounding_box();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let p = Point::new(
            lo.x + (hi.x - lo.x) * rng.random::<f64>(),
            lo.y + (hi.y - lo.y) * rng.random::<f64>(),
        );
        if domain.contains(p) {
            out.push(p);
        }
    }
    out
}

/// Seeds whose pairwise distances all exceed `1e-6·diam(Ω)`, redrawing the
/// whole configuration up to 100 times.
pub fn sample_separated<R: Rng + ?Sized>(
    domain: &Domain,
    n: usize,
    rng: &mut R,
) -> Result<SeedConfig> {
    let min_dist = 1e-6 * domain.diameter();
    for _ in 0..MAX_ATTEMPTS {
        let seeds = SeedConfig::new(sample_uniform(domain, n, rng));
        if seeds.min_pairwise_distance() >= min_dist {
            return Ok(seeds);
        }
    }
    Err(Error::DegenerateSampling {
        n,
        attempts: MAX_ATTEMPTS,
    })
}

/// Uniform random seeds with zero weights, and the areas and centroids of
/// their Voronoi cells.
pub fn random_voronoi_data(
    domain: &Domain,
    n: usize,
    rng_seed: u64,
) -> Result<(SeedConfig, TargetData, LaguerreDiagram)> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let seeds = sample_separated(domain, n, &mut rng)?;
    let diagram = build_laguerre(domain, &seeds, &WeightVector::zeros(n))?;
    let data = TargetData::from_diagram(&diagram, domain)?;
    Ok((seeds, data, diagram))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub epsilon: f64,
    pub rng_seed: u64,
}

/// Moves each centroid by `u_i = ε r_i (cos θ_i, sin θ_i)` with
/// `r_i ~ U[0,1]`, `θ_i ~ U[0,2π)` (drawn per cell, `r_i` first), then
/// shifts all centroids by `σ(Ω) − Σ v_j (b_j + u_j) / area(Ω)` so that the
/// result stays compatible.
pub fn perturb_data(
    data: &TargetData,
    spec: &PerturbationSpec,
    domain: &Domain,
) -> Result<TargetData> {
    if !spec.epsilon.is_finite() || spec.epsilon < 0.0 {
        return Err(Error::InvalidArgument(format!("epsilon {}", spec.epsilon)));
    }
    data.validate(domain)?;
    if spec.epsilon == 0.0 {
        return Ok(data.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let v = data.areas();
    let moved: Vec<Point> = data
        .centroids()
        .iter()
        .map(|&b| {
            let r: f64 = rng.random();
            let theta = TAU * rng.random::<f64>();
            b + Point::new(theta.cos(), theta.sin()) * (spec.epsilon * r)
        })
        .collect();
    let mut moment = Point::ZERO;
    for (&vi, &bi) in v.iter().zip(&moved) {
        moment += bi * vi;
    }
    let shift = domain.centroid() - moment * (1.0 / domain.area());
    let b: Vec<Point> = moved.into_iter().map(|p| p + shift).collect();
    let outside: Vec<usize> = (0..b.len()).filter(|&i| !domain.contains(b[i])).collect();
    if !outside.is_empty() {
        return Err(Error::CentroidLeftDomain { indices: outside });
    }
    TargetData::new(v.to_vec(), b, domain)
}

/// A synthetic grain map: the isotropic Voronoi diagram of `n` uniform
/// random seeds rasterised on a `resolution × resolution` grid covering the
/// square `[0, resolution·pixel_size]²`.
pub fn random_grain_grid(
    n: usize,
    resolution: usize,
    pixel_size: f64,
    rng_seed: u64,
) -> Result<LabelGrid> {
    let side = resolution as f64 * pixel_size;
    let domain = Domain::rectangle(side, side)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let seeds = sample_separated(&domain, n, &mut rng)?;
    let raster = RasterGrid::new(&domain, resolution)?.diagram(
        &seeds,
        &WeightVector::zeros(n),
        &AnisotropyMatrices::identity(n),
    )?;
    if let Some(i) = raster.counts.iter().position(|&c| c == 0) {
        return Err(Error::ResolutionTooCoarse(format!(
            "grain {i} covers no pixel at resolution {resolution}"
        )));
    }
    raster.to_label_grid()
}
