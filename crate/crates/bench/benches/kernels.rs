use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use kar_bench::{random_vec, rng};
use kar_core::adaptor::{Adaptor, AdaptorConfig};
use kar_core::backbones::fm_second_order;
use kar_core::encoding::{RepresentationCache, DEFAULT_DIM};
use kar_core::nn::{Graph, ParamStore, Tensor};
use kar_core::pipeline::auc;
use kar_core::{EntityKey, KnowledgeKind};

fn matmul(c: &mut Criterion) {
    let mut r = rng(1);
    let a = Tensor::new(vec![256, 256], random_vec(&mut r, 256 * 256)).unwrap();
    let b = Tensor::new(vec![256, 200], random_vec(&mut r, 256 * 200)).unwrap();
    let store = ParamStore::new();
    c.bench_function("matmul_256x256x200", |bench| {
        bench.iter(|| {
            let mut g = Graph::new(&store);
            let (x, y) = (g.constant(a.clone()), g.constant(b.clone()));
            let z = g.matmul(x, y).unwrap();
            g.value(z).data()[0]
        })
    });
}

fn fm(c: &mut Criterion) {
    let mut r = rng(2);
    let fields: Vec<Vec<f64>> = (0..10).map(|_| random_vec(&mut r, 32)).collect();
    c.bench_function("fm_second_order_10x32", |b| b.iter(|| fm_second_order(&fields).unwrap()));
}

fn adaptor_row(c: &mut Criterion) {
    let mut r = rng(3);
    let mut store = ParamStore::new();
    let a = Adaptor::new(&mut store, &mut r, "adaptor", AdaptorConfig::hybrid(DEFAULT_DIM)).unwrap();
    let x = random_vec(&mut r, DEFAULT_DIM);
    c.bench_function("adaptor_forward_row_hybrid", |b| {
        b.iter(|| a.forward_row(&store, &x, KnowledgeKind::Preference).unwrap())
    });
}

fn auc_rank_sum(c: &mut Criterion) {
    let mut r = rng(4);
    let scores = random_vec(&mut r, 100_000);
    let labels: Vec<f64> = random_vec(&mut r, 100_000).iter().map(|v| (*v > 0.0) as u8 as f64).collect();
    c.bench_function("auc_100k", |b| b.iter(|| auc(&scores, &labels).unwrap()));
}

fn cache_round_trip(c: &mut Criterion) {
    let mut r = rng(5);
    let mut cache = RepresentationCache::new(DEFAULT_DIM);
    for i in 0..5000 {
        let v: Vec<f32> = random_vec(&mut r, DEFAULT_DIM).iter().map(|&x| x as f32).collect();
        cache.insert(EntityKey::user(format!("u{i}")), &v).unwrap();
    }
    let bytes = cache.to_bytes().unwrap();
    c.bench_function("cache_encode_5000x64", |b| b.iter(|| cache.to_bytes().unwrap()));
    c.bench_function("cache_decode_5000x64", |b| {
        b.iter_batched(|| bytes.clone(), |buf| RepresentationCache::from_bytes(&buf).unwrap(), BatchSize::LargeInput)
    });
}

criterion_group!(benches, matmul, fm, adaptor_row, auc_rank_sum, cache_round_trip);
criterion_main!(benches);
