use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctxloc::hyperfeatures::assemble_all;
use ctxloc::{infer_brute, infer_fast};
use ctxloc_bench::{contexts, trained_model};

fn inference(c: &mut Criterion) {
    let model = trained_model();
    let mut group = c.benchmark_group("inference");
    group.sample_size(10);
    for n in [100, 300, 1000] {
        let ctx = &contexts(&model, n, 1)[0];
        group.bench_with_input(BenchmarkId::new("brute", n), ctx, |b, ctx| b.iter(|| infer_brute(&model.alpha, ctx)));
        group.bench_with_input(BenchmarkId::new("fast", n), ctx, |b, ctx| b.iter(|| infer_fast(&model.alpha, ctx)));
    }
    group.finish();
}

fn scene_setup(c: &mut Criterion) {
    let model = trained_model();
    let mut group = c.benchmark_group("setup");
    group.sample_size(10);
    let ctx = &contexts(&model, 300, 1)[0];
    group.bench_function("context_300", |b| {
        b.iter(|| model.gp.predict_batch(ctx.appearance()).unwrap())
    });
    group.bench_function("features_300", |b| b.iter(|| assemble_all(ctx)));
    group.finish();
}

criterion_group!(benches, inference, scene_setup);
criterion_main!(benches);
