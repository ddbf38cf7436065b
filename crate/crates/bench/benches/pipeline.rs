use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stgcl::encoder::{encode_graph, init_features, EncoderParams};
use stgcl::eval::AblationVariant;
use stgcl::numcore::ParamStore;
use stgcl::trainer::{prepare, Trainer};
use stgcl::{Tape, Tensor};
use stgcl_bench::fixture;

fn matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut group = c.benchmark_group("matmul");
    for n in [96, 300] {
        let a = Tensor::randn(&[n, 96], 0.0, 1.0, &mut rng);
        let b = Tensor::randn(&[96, 96], 0.0, 1.0, &mut rng);
        group.bench_with_input(BenchmarkId::new("nn", n), &n, |bch, _| bch.iter(|| a.matmul(&b).unwrap()));
        group.bench_with_input(BenchmarkId::new("nt", n), &n, |bch, _| bch.iter(|| a.matmul_nt(&b).unwrap()));
    }
    group.finish();
}

fn encode(c: &mut Criterion) {
    let (ds, cfg) = fixture(60);
    let prepared = prepare(&ds, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let params = EncoderParams::init(&mut store, cfg.model.dim, cfg.model.layers, &mut rng);
    let e = Tensor::randn(&[ds.n_regions(), cfg.model.dim], 0.0, 1.0, &mut rng);
    c.bench_function("encode_forward_backward", |b| {
        b.iter(|| {
            let tape = Tape::new();
            let p = store.bind(&tape);
            let h0 = init_features(tape.param(e.clone()), &prepared.graph).unwrap();
            let h = encode_graph(&prepared.graph, h0, &params, &p).unwrap();
            tape.backward(h.sum()).unwrap()
        })
    });
}

fn epoch(c: &mut Criterion) {
    let (ds, cfg) = fixture(60);
    let prepared = prepare(&ds, &cfg).unwrap();
    let mut group = c.benchmark_group("epoch");
    group.sample_size(10);
    for v in [AblationVariant::Full, AblationVariant::RandomAug] {
        let mut t = Trainer::new(prepared.clone(), &cfg, v.options()).unwrap();
        group.bench_function(v.name(), |b| b.iter(|| t.step().unwrap()));
    }
    group.finish();
}

criterion_group!(benches, matmul, encode, epoch);
criterion_main!(benches);
