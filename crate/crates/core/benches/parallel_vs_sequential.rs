use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use nearfield::solver::{solve_semidiscrete, tracing_measure, SolverConfig, SourceDensity};
use nearfield::target::{uniform_density, QuadraticField};
use nearfield::{Cylinder, DiscreteAtoms, Execution, GraphSurface, OpticalConfig, Omega, PiecewiseSurface, SurfaceMode};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn atoms(n: usize, half: f64, per_axis: usize, total: f64) -> DiscreteAtoms {
    GraphSurface::new(Arc::new(QuadraticField::radial(n, 4.0, 0.25)), vec![-half; n], vec![half; n], uniform_density(1.0))
        .unwrap()
        .discretize(per_axis, total)
        .unwrap()
}

fn solved(source: &SourceDensity, targets: &DiscreteAtoms, cyl: &Cylinder) -> PiecewiseSurface {
    let optics = OpticalConfig::new(0.5, 0.9, 0.5).unwrap();
    solve_semidiscrete(source, targets, cyl, &optics, &SolverConfig::new(SurfaceMode::RefractorAbove)).unwrap().0
}

fn bench_tracing_measure(c: &mut Criterion) {
    let omega = Omega::Box { lo: vec![-0.5; 2], hi: vec![0.5; 2] };
    let cyl = Cylinder::new(omega.clone(), 1.0).unwrap();
    let coarse = SourceDensity::uniform(omega.clone(), 40, 1.0).unwrap();
    let surface = solved(&coarse, &atoms(2, 0.5, 4, coarse.total_mass()), &cyl);
    let mut group = c.benchmark_group("tracing_measure");
    for per_axis in [100, 300] {
        let source = SourceDensity::uniform(omega.clone(), per_axis, 1.0).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, per_axis * per_axis), &source, |b, source| {
                b.iter(|| tracing_measure(black_box(&surface), source, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_solve(c: &mut Criterion) {
    let omega = Omega::interval(-0.5, 0.5);
    let cyl = Cylinder::new(omega.clone(), 1.0).unwrap();
    let source = SourceDensity::uniform(omega, 2000, 1.0).unwrap();
    let targets = atoms(1, 1.0, 16, source.total_mass());
    let optics = OpticalConfig::new(0.5, 0.9, 0.5).unwrap();
    let mut group = c.benchmark_group("solve_16_atoms");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mut cfg = SolverConfig::new(SurfaceMode::RefractorAbove);
        cfg.exec = exec;
        group.bench_function(name, |b| b.iter(|| solve_semidiscrete(&source, black_box(&targets), &cyl, &optics, &cfg).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_tracing_measure, bench_solve);
criterion_main!(benches);
