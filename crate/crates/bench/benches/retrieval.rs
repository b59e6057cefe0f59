use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use gardener_core::assets::{AssetIndex, EmbeddingVector, IndexEntry};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn vector(rng: &mut StdRng, dim: usize) -> EmbeddingVector {
    EmbeddingVector::new((0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()).unwrap()
}

fn nearest(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieval");
    let mut rng = StdRng::seed_from_u64(7);
    for (size, dim) in [(1_000, 32), (10_000, 32), (10_000, 512)] {
        let mut index = AssetIndex::new(dim);
        for i in 0..size {
            index
                .insert(IndexEntry {
                    asset_id: format!("asset-{i:05}"),
                    embedding: vector(&mut rng, dim),
                    source_uri: String::new(),
                })
                .unwrap();
        }
        let query = vector(&mut rng, dim);
        group.throughput(Throughput::Elements(size as u64));
        group.bench_with_input(BenchmarkId::new("nearest", format!("{size}x{dim}")), &index, |b, idx| {
            b.iter(|| black_box(idx.nearest(&query).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, nearest);
criterion_main!(benches);
