use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sojd::estimators::{self, GridOptions};
use sojd::generator::{self, McOptions};
use sojd::kernels::KernelSpec;
use sojd::par::Execution;
use sojd::presets::{Preset, PresetParams};
use sojd::simulator::{simulate_observations, ObservationPlan};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn verify_mc(c: &mut Criterion) {
    let model = PresetParams::new(Preset::OuJump).build().unwrap();
    let mut g = c.benchmark_group("verify_relation_34");
    g.sample_size(10);
    for (name, execution) in MODES {
        let opts = McOptions {
            reps: 20_000,
            seed: 7,
            substeps: 100,
            execution,
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generator::verify_relation_34(&model, 0.0, 0.01, &opts).unwrap())
        });
    }
    g.finish();
}

fn estimate_grid(c: &mut Criterion) {
    let model = PresetParams::new(Preset::OuJump).build().unwrap();
    let plan = ObservationPlan {
        fine_step: 1e-3,
        sampling_step: 0.01,
        observations: 50_003,
        burn_in: 10.0,
    };
    let obs = simulate_observations(&model, &plan, 0.0, 0.0, 1).unwrap();
    let kernel = KernelSpec::gaussian();
    let grid: Vec<f64> = (0..101).map(|i| -1.0 + 0.02 * i as f64).collect();
    let mut g = c.benchmark_group("estimate_on_grid");
    g.sample_size(10);
    for (name, execution) in MODES {
        let opts = GridOptions {
            execution,
            ..GridOptions::default()
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| estimators::estimate_on_grid(&obs, &kernel, 0.43, &grid, &opts).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, verify_mc, estimate_grid);
criterion_main!(benches);
