use std::hint::black_box;

use cnnlens_core::data::DatasetStats;
use cnnlens_core::model::{Model, ModelSpec};
use cnnlens_core::{Tape, Tensor};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("conv2d");
    for (cin, cout, side) in [(3, 16, 32), (16, 32, 16), (64, 128, 4)] {
        let x = random(&[8, cin, side, side], &mut rng);
        let w = random(&[cout, cin, 3, 3], &mut rng);
        let id = format!("{cin}x{side}x{side}->{cout}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &(), |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let (xv, wv) = (tape.leaf(x.clone()), tape.leaf(w.clone()));
                black_box(tape.conv2d(xv, wv, None, 1, 1).unwrap());
            })
        });
        group.bench_with_input(BenchmarkId::new("forward+backward", &id), &(), |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let xv = tape.leaf(x.clone().with_requires_grad(true));
                let wv = tape.leaf(w.clone().with_requires_grad(true));
                let y = tape.conv2d(xv, wv, None, 1, 1).unwrap();
                let s = tape.sum(y);
                tape.backward(s).unwrap();
                black_box(tape.grad(wv).map(|g| g[0]));
            })
        });
    }
    group.finish();
}

fn forward_pass(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = Model::new(ModelSpec::desk_default(10), DatasetStats::neutral(), 0).unwrap();
    let batch = Tensor::from_fn(&[16, 3, 32, 32], |_| rng.random::<f64>());
    c.bench_function("desk model logits, batch 16", |b| {
        b.iter(|| black_box(model.logits(&batch).unwrap()))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv2d, forward_pass
}
criterion_main!(benches);
