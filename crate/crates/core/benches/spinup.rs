use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndopfe::forcing::{Forcing, ForcingSettings};
use ndopfe::grid::Grid;
use ndopfe::par::Execution;
use ndopfe::params::ParameterSet;
use ndopfe::solvers::{spinup_periodic, Model, SolverSettings};
use ndopfe::transport::{build_synthetic, SyntheticCirculation};

fn one_year(c: &mut Criterion) {
    let g = Grid::desk();
    let op = build_synthetic(&g, &SyntheticCirculation::default()).unwrap().operator;
    let f = Forcing::new(&g, &ForcingSettings::default(), 360.0);
    let m = Model::new(g, op, f, ParameterSet::default()).unwrap();
    let mut group = c.benchmark_group("spinup_year");
    group.sample_size(10);
    group.measurement_time(Duration::from_secs(10));
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        let s = SolverSettings {
            max_cycles: 1,
            execution: exec,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &s, |b, s| {
            b.iter(|| spinup_periodic(&m, s, 1.0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, one_year);
criterion_main!(benches);
