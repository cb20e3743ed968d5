//! Monte Carlo protocols on a single-thread pool versus the default pool.
//! Build with `--no-default-features` to time the sequential fallback.

use calibkit::confidence::ensemble_ablation;
use calibkit::recalibrate::protocol::{run_splits, Method, SplitProtocol};
use calibkit::recalibrate::{DimSamples, FitMode};
use calibkit::synth::{generate, preset_config, Preset, SynthConfig};
use calibkit::temporal::{completion_curve, TemporalAggregation};
use criterion::{criterion_group, criterion_main, Criterion};
use rayon::ThreadPool;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    vec![
        ("threads=1", rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap()),
        ("threads=default", rayon::ThreadPoolBuilder::new().build().unwrap()),
    ]
}

fn splits(c: &mut Criterion) {
    let cfg = SynthConfig { n_episodes: 2000, ..preset_config(Preset::Hetero7) };
    let data = DimSamples::pre_action(&generate(&cfg).unwrap().episodes).unwrap();
    let protocol = SplitProtocol { splits: 8, ..SplitProtocol::default() };
    let methods = [Method::Platt, Method::ActionwisePlatt(FitMode::Joint)];
    let mut group = c.benchmark_group("run_splits");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| b.iter(|| pool.install(|| run_splits(&data, &methods, &protocol).unwrap())));
    }
    group.finish();
}

fn ablation(c: &mut Criterion) {
    let cfg = SynthConfig { n_episodes: 2000, n_variants: 20, prompt_noise_sd: 0.1, ..preset_config(Preset::Perfect) };
    let eps = generate(&cfg).unwrap().episodes;
    let mut group = c.benchmark_group("ensemble_ablation");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| b.iter(|| pool.install(|| ensemble_ablation(&eps, &[1, 5, 10], 100, 0, 12).unwrap())));
    }
    group.finish();
}

fn curve(c: &mut Criterion) {
    let eps = generate(&preset_config(Preset::Sharpening)).unwrap().episodes;
    let mut group = c.benchmark_group("completion_curve");
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| completion_curve(&eps, TemporalAggregation::AvgAll, 12).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, splits, ablation, curve);
criterion_main!(benches);
