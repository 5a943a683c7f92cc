use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use rand_distr::StandardNormal;

use avdoa::audio::{gcc_features, LagRange, Multichannel, DEFAULT_FFT_LEN};
use avdoa::eval::{mae_acc, DEFAULT_ALLOWANCE_DEG};
use avdoa::nn::{Architecture, Matrix, Mode, Model, ModelConfig};
use avdoa::rng::seeded;
use avdoa::Execution;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn frames(n: usize) -> Vec<Multichannel> {
    let mut rng = seeded(1);
    (0..n)
        .map(|_| {
            let ch = (0..4).map(|_| (0..8160).map(|_| rng.sample(StandardNormal)).collect()).collect();
            Multichannel::new(ch, 48_000).unwrap()
        })
        .collect()
}

fn bench_gcc(c: &mut Criterion) {
    let input = frames(16);
    let mut g = c.benchmark_group("gcc_features_16_frames");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| gcc_features(&input, LagRange::default(), DEFAULT_FFT_LEN, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_metrics(c: &mut Criterion) {
    let mut rng = seeded(2);
    let mut sets = |n: usize| -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..2).map(|_| rng.random_range(-180.0..180.0)).collect()).collect()
    };
    let (preds, gts) = (sets(20_000), sets(20_000));
    let mut g = c.benchmark_group("mae_acc_20k_frames");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| mae_acc(&preds, &gts, DEFAULT_ALLOWANCE_DEG, exec).unwrap())
        });
    }
    g.finish();
}

fn bench_forward(c: &mut Criterion) {
    let model = Model::init(ModelConfig::new(Architecture::Avaw), &mut seeded(3)).unwrap();
    let mut rng = seeded(4);
    let gcc = Matrix::uniform(256, 306, 1.0, &mut rng);
    let vis = Matrix::uniform(256, 102, 1.0, &mut rng).map(f64::abs);
    let mut g = c.benchmark_group("avaw_forward_batch_256");
    g.sample_size(10);
    // Matrix products pick their schedule from the build, not a runtime flag.
    g.bench_function(if cfg!(feature = "parallel") { "parallel" } else { "sequential" }, |b| {
        b.iter(|| model.forward(&gcc, &vis, Mode::Train).unwrap())
    });
    g.finish();
}

criterion_group!(benches, bench_gcc, bench_metrics, bench_forward);
criterion_main!(benches);
