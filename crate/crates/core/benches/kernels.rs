use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use ndopfe::forcing::{Forcing, ForcingSettings};
use ndopfe::grid::{uniform_state_with_mass, Grid};
use ndopfe::kernels::{free_iron_adjusted, free_iron_original, uptake_g};
use ndopfe::par::Execution;
use ndopfe::params::ParameterSet;
use ndopfe::solvers::{Model, Stepper, TransportMode};
use ndopfe::transport::{build_synthetic, SyntheticCirculation};

fn scalar(c: &mut Criterion) {
    let p = ParameterSet::default();
    let ys: Vec<f64> = (0..1024).map(|i| -10.0 + 20.0 * i as f64 / 1023.0).collect();
    c.bench_function("free_iron_original/1024", |b| {
        b.iter(|| ys.iter().map(|&y| free_iron_original(y, p.k_lig, p.l_t).unwrap()).sum::<f64>())
    });
    c.bench_function("free_iron_adjusted/1024", |b| {
        b.iter(|| ys.iter().map(|&y| free_iron_adjusted(y, p.k_lig, p.l_t)).sum::<f64>())
    });
    c.bench_function("uptake_g/1024", |b| {
        b.iter(|| ys.iter().map(|&y| uptake_g(y.abs(), 0.5, 150.0, 30.0, black_box(&p))).sum::<f64>())
    });
}

fn step(c: &mut Criterion) {
    let g = Grid::desk();
    let op = build_synthetic(&g, &SyntheticCirculation::default()).unwrap().operator;
    let f = Forcing::new(&g, &ForcingSettings::default(), 360.0);
    let m = Model::new(g, op, f, ParameterSet::default()).unwrap();
    let y0 = uniform_state_with_mass(1.0, &m.grid).unwrap();
    let mut group = c.benchmark_group("step");
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_with_input(BenchmarkId::new("explicit", name), &exec, |b, &exec| {
            let mut st = Stepper::new(&m, 0.5, TransportMode::Explicit, false, exec).unwrap();
            let mut s = y0.clone();
            b.iter(|| st.step(&mut s).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, scalar, step);
criterion_main!(benches);
