//! Sequential vs. parallel `Exec` on the three batch workloads.
//!
//! Without the `parallel` feature both modes run the same sequential loop.

use std::hint::black_box;
use std::path::Path;
use std::time::Duration;

use abstain::calibration::{run_calibration_check, CheckConfig, ZGrid};
use abstain::data::{generate_sine_dataset, load_csv, CsvSchema, LabelMap, SplitPlan};
use abstain::exec::Exec;
use abstain::losses::LossConfig;
use abstain::nn::{init_network, NetworkSpec};
use abstain::training::{evaluate_with, sweep_d, SweepTemplate, TrainConfig};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn modes() -> [(&'static str, Exec); 2] {
    let jobs = std::thread::available_parallelism().map_or(2, |n| n.get().max(2));
    [
        ("sequential", Exec::Sequential),
        ("parallel", Exec::Parallel { jobs }),
    ]
}

fn sweep(c: &mut Criterion) {
    let schema = CsvSchema {
        label_last: true,
        label_map: LabelMap::tokens("M", "B"),
    };
    let ds = load_csv(
        &Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/wdbc.csv"),
        &schema,
    )
    .unwrap();
    let template = SweepTemplate {
        network: NetworkSpec::scalar(&[30, 16, 16]),
        train: TrainConfig::new(LossConfig::new(0.25, 2.0, 1.0).unwrap(), 3, 1),
        standardize: true,
    };
    let plan = SplitPlan::new(4, 1, 1);
    let mut g = c.benchmark_group("sweep");
    g.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| sweep_d(black_box(&ds), &[0.1, 0.25, 0.4], &plan, &template, exec).unwrap())
        });
    }
    g.finish();
}

fn calibration_grid(c: &mut Criterion) {
    let cfg = CheckConfig {
        grid: ZGrid {
            step: 1e-3,
            ..ZGrid::default()
        },
        random_trials: 500,
        ..CheckConfig::default()
    };
    let mut g = c.benchmark_group("calibration_grid");
    g.sample_size(10);
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| run_calibration_check(black_box(&cfg), exec).unwrap())
        });
    }
    g.finish();
}

fn batch_eval(c: &mut Criterion) {
    let (ds, _) = generate_sine_dataset(5000, 0.75, 0.2, 3).unwrap();
    let net = init_network(&NetworkSpec::scalar(&[2, 64, 64, 64]), 3).unwrap();
    let mut g = c.benchmark_group("batch_eval");
    for (name, exec) in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| evaluate_with(&net, black_box(&ds), 0.25, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sweep, calibration_grid, batch_eval);
criterion_main!(benches);
