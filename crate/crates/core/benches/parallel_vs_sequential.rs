use std::time::Duration;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dcssr::data::{synth_stereo, StereoSample, SynthConfig};
use dcssr::metrics::{evaluate, index_ids, Method};
use dcssr::model::{Model, ModelConfig};
use dcssr::train::init::xavier_params;
use dcssr::train::trainer::frames_to_patches;
use dcssr::train::{TrainConfig, Trainer};
use dcssr::Execution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn frames(n: usize, height: usize, width: usize) -> Vec<StereoSample> {
    let cfg = SynthConfig {
        height,
        width,
        ..SynthConfig::default()
    };
    (0..n as u64).map(|s| synth_stereo(s, &cfg).unwrap()).collect()
}

fn train_step(c: &mut Criterion) {
    let mut cfg = TrainConfig::desk(2);
    cfg.batch = 4;
    let batch: Vec<StereoSample> = frames_to_patches(&frames(4, 32, 96), &cfg).unwrap().into_iter().take(4).collect();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, exec) in MODES {
        let mut trainer = Trainer::new(cfg.clone(), 1, exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| trainer.train_step(&batch).unwrap())
        });
    }
    group.finish();
}

fn eval(c: &mut Criterion) {
    let samples = frames(4, 64, 192);
    let ids = index_ids(samples.len());
    let mut model = Model::<f32>::new(ModelConfig {
        channels: 8,
        ..ModelConfig::default()
    });
    xavier_params(&mut model.params, &mut ChaCha8Rng::seed_from_u64(0));
    let mut group = c.benchmark_group("eval");
    group.sample_size(10).measurement_time(Duration::from_secs(10));
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("model", name), |b| {
            b.iter(|| evaluate(Method::Model(&model), &samples, &ids, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("bicubic", name), |b| {
            b.iter(|| evaluate(Method::Bicubic, &samples, &ids, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, train_step, eval);
criterion_main!(benches);
