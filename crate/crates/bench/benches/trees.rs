use std::collections::BTreeMap;
use std::hint::black_box;

use cnnlens_core::filter_tree::PredictionTree;
use cnnlens_core::hier::{build_hierarchy, minimum_spanning_tree, CategoryGraph};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(n: usize, rng: &mut ChaCha8Rng) -> CategoryGraph {
    let names: Vec<String> = (0..n).map(|i| format!("c{i:03}")).collect();
    let mut edges = BTreeMap::new();
    for i in 0..n {
        for j in i + 1..n {
            edges.insert((names[i].clone(), names[j].clone()), rng.random::<f64>());
        }
    }
    CategoryGraph::new(names, edges).unwrap()
}

fn hierarchy(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("category graph");
    for n in [10, 40, 100] {
        let g = random_graph(n, &mut rng);
        group.bench_with_input(BenchmarkId::new("build_hierarchy", n), &g, |b, g| {
            b.iter(|| black_box(build_hierarchy(g).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("minimum_spanning_tree", n), &g, |b, g| {
            b.iter(|| black_box(minimum_spanning_tree(g).unwrap()))
        });
    }
    group.finish();
}

fn prediction_tree(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("prediction tree");
    // Shapes of the desk model's layer4 output (128 filters of 4x4) and a smaller layer.
    for (images, filters, side) in [(20, 32, 8), (20, 128, 4), (50, 128, 4)] {
        let maps: Vec<(String, Vec<f64>)> = (0..images)
            .map(|i| {
                (
                    format!("img{i}"),
                    (0..filters * side * side)
                        .map(|_| rng.random::<f64>().max(0.3) - 0.3)
                        .collect(),
                )
            })
            .collect();
        let id = format!("{images} images, {filters} filters");
        group.bench_with_input(BenchmarkId::new("from_maps", &id), &maps, |b, maps| {
            b.iter(|| {
                black_box(PredictionTree::from_maps("layer4", maps.clone(), filters).unwrap())
            })
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = hierarchy, prediction_tree
}
criterion_main!(benches);
