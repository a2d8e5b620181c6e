//! Throughput comparison between the data-parallel fan-out and its
//! sequential fallback on the two hot per-sample kernels: gradient
//! computation (the training loop's inner step) and loss evaluation (the
//! accuracy/eval pass). `par::map` dispatches to rayon under the default
//! `parallel` feature; `par::map_serial` is the same loop the crate compiles
//! to when the feature is off, so the pair measures exactly what the flag
//! buys on this machine.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use grad_mimic::datasets::{gen_gaussian_blobs, LabeledDataset};
use grad_mimic::models::{init_params, loss, per_sample_grad, ModelSpec, ParamVector};
use grad_mimic::par;
use grad_mimic::rng::RngSeed;

fn fixture(samples_per_class: usize) -> (LabeledDataset, ModelSpec, ParamVector) {
    let spec = ModelSpec::mlp(32, 8, 24, 0.2);
    let ds = gen_gaussian_blobs(8, samples_per_class, 32, 3.0, 1.0, RngSeed(1)).unwrap();
    let params = init_params(&spec, RngSeed(2)).unwrap();
    (ds, spec, params)
}

fn bench_batch_gradients(c: &mut Criterion) {
    let (ds, _, params) = fixture(64); // 512 samples
    let n = ds.len();
    let mut group = c.benchmark_group("batch_gradients");
    group.throughput(Throughput::Elements(n as u64));
    group.bench_function(BenchmarkId::new("data_parallel", n), |b| {
        b.iter(|| par::map(&ds.samples, |s| per_sample_grad(&params, s).unwrap()))
    });
    group.bench_function(BenchmarkId::new("sequential", n), |b| {
        b.iter(|| par::map_serial(&ds.samples, |s| per_sample_grad(&params, s).unwrap()))
    });
    group.finish();
}

fn bench_dataset_loss(c: &mut Criterion) {
    let (ds, _, params) = fixture(256); // 2048 samples
    let n = ds.len();
    let mut group = c.benchmark_group("dataset_loss");
    group.throughput(Throughput::Elements(n as u64));
    group.bench_function(BenchmarkId::new("data_parallel", n), |b| {
        b.iter(|| par::map(&ds.samples, |s| loss(&params, s).unwrap()))
    });
    group.bench_function(BenchmarkId::new("sequential", n), |b| {
        b.iter(|| par::map_serial(&ds.samples, |s| loss(&params, s).unwrap()))
    });
    group.finish();
}

criterion_group!(benches, bench_batch_gradients, bench_dataset_loss);
criterion_main!(benches);
