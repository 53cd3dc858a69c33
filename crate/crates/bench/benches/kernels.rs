use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use mbssl_bench::{model, synthetic, uniform_graph, FreeEmbeddings};
use mbssl_core::encoder::encode;
use mbssl_core::objective::{non_sampling_loss, LossWeights};
use mbssl_core::ssl::build_similarity_index;
use mbssl_core::{GraphContext, Tape};

fn non_sampling(c: &mut Criterion) {
    let mut group = c.benchmark_group("non_sampling_loss");
    let weights = LossWeights::uniform(1, 1.0, 0.1).unwrap();
    let users: Vec<usize> = (0..256).map(|u| u * 4).collect();
    for items in [1000, 2000, 4000, 8000] {
        let g = uniform_graph(1024, items, 20_000, 1);
        let emb = FreeEmbeddings::new(1024 + items, 1, 64, 2);
        group.bench_with_input(BenchmarkId::new("forward_backward", items), &items, |b, _| {
            b.iter(|| {
                let mut tape = Tape::new();
                let enc = emb.record(&mut tape, 1);
                let loss = non_sampling_loss(&mut tape, &enc, &g, &users, 0, &weights).unwrap();
                black_box(tape.gradients(loss).unwrap())
            })
        });
    }
    group.finish();
}

fn swing(c: &mut Criterion) {
    let g = synthetic();
    c.bench_function("similarity_index/synthetic", |b| {
        b.iter(|| black_box(build_similarity_index(&g, 0.5, 10, 5).unwrap()))
    });
}

fn encoder(c: &mut Criterion) {
    let g = synthetic();
    let ctx = GraphContext::new(&g);
    let m = model(&g, 64, 4);
    let weights = LossWeights::uniform(g.num_behaviors(), 1.0, 0.1).unwrap();
    let users: Vec<usize> = (0..32).collect();
    c.bench_function("encode_and_backward/synthetic", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let enc = encode(&mut tape, &m, &ctx, None, Some(7)).unwrap();
            let loss = non_sampling_loss(&mut tape, &enc.main, &g, &users, g.target(), &weights).unwrap();
            black_box(tape.gradients(loss).unwrap())
        })
    });
}

criterion_group!(benches, non_sampling, swing, encoder);
criterion_main!(benches);
