//! Shared fixtures for the criterion benches.

use laguerre::synth::{random_voronoi_data, sample_uniform};
use laguerre::{Domain, SeedConfig, TargetData};

/// Voronoi target data for `n` cells on the unit square, together with an
/// unrelated random seed configuration to evaluate it at.
pub fn fixture(n: usize, rng_seed: u64) -> (Domain, TargetData, SeedConfig) {
    use rand::SeedableRng;
    let domain = Domain::unit_square();
    let (_, data, _) = random_voronoi_data(&domain, n, rng_seed).expect("fixture data");
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(rng_seed ^ 0x5eed);
    let seeds = SeedConfig::new(sample_uniform(&domain, n, &mut rng));
    (domain, data, seeds)
}
