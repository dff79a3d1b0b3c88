use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use laguerre::aniso::{AnisotropyMatrices, RasterGrid};
use laguerre::geom2d::build_laguerre;
use laguerre::objective::eval_h;
use laguerre::sdot::{solve_weights, OtOptions};
use laguerre::WeightVector;
use laguerre_bench::fixture;

fn diagram(c: &mut Criterion) {
    let mut g = c.benchmark_group("build_laguerre");
    for n in [20, 100, 250] {
        let (domain, _, seeds) = fixture(n, 1);
        let w = WeightVector::zeros(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| build_laguerre(&domain, &seeds, &w).unwrap())
        });
    }
    g.finish();
}

fn transport(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve_weights");
    g.sample_size(20);
    for n in [20, 100, 250] {
        let (domain, data, seeds) = fixture(n, 2);
        let opts = OtOptions::with_tolerance(1e-7);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_weights(&domain, &seeds, data.areas(), &opts).unwrap())
        });
    }
    g.finish();
}

fn objective(c: &mut Criterion) {
    let mut g = c.benchmark_group("eval_h");
    g.sample_size(20);
    for n in [20, 100] {
        let (domain, data, seeds) = fixture(n, 3);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| eval_h(&domain, &seeds, &data).unwrap())
        });
    }
    g.finish();
}

fn raster(c: &mut Criterion) {
    let mut g = c.benchmark_group("raster_pass");
    g.sample_size(10);
    let (domain, _, seeds) = fixture(20, 4);
    let a = AnisotropyMatrices::identity(20);
    let w = WeightVector::zeros(20);
    for res in [128, 512] {
        let grid = RasterGrid::new(&domain, res).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(res), &res, |b, _| {
            b.iter(|| grid.diagram(&seeds, &w, &a).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, diagram, transport, objective, raster);
criterion_main!(benches);
