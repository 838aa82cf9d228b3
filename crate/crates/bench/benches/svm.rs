use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use netside::preprocess::Transform;
use netside::svm::{cross_validate, gram_matrix, solve_dual, train, SvmParams};
use netside_bench::{labels, web_frames};

fn features(n_per_url: usize) -> (Vec<Vec<f64>>, Vec<i8>) {
    let frames = web_frames(n_per_url);
    let tf = Transform::default().fit(&frames);
    let x = frames.iter().map(|f| tf.apply(f).values).collect();
    let y = frames.iter().map(|f| if f.label.as_deref() == Some("a") { -1 } else { 1 }).collect();
    (x, y)
}

fn bench_train(c: &mut Criterion) {
    let mut g = c.benchmark_group("svm_train");
    for n in [50, 150, 400] {
        let (x, y) = features(n);
        g.bench_with_input(BenchmarkId::from_parameter(2 * n), &(x, y), |b, (x, y)| {
            b.iter(|| train(x, y, &SvmParams::default()).unwrap())
        });
    }
    g.finish();
}

fn bench_smo(c: &mut Criterion) {
    let (x, y) = features(150);
    let params = SvmParams::default();
    let gram = gram_matrix(&x, params.gamma).unwrap();
    c.bench_function("gram_300", |b| b.iter(|| gram_matrix(&x, params.gamma).unwrap()));
    c.bench_function("solve_dual_300", |b| b.iter(|| solve_dual(&gram, &y, &params).unwrap()));
}

fn bench_cv(c: &mut Criterion) {
    let frames = web_frames(150);
    let y = labels(&frames);
    c.bench_function("cross_validate_5fold_300", |b| {
        b.iter(|| cross_validate(&frames, &y, 5, &SvmParams::default(), &Transform::default(), 4).unwrap())
    });
}

criterion_group!(benches, bench_train, bench_smo, bench_cv);
criterion_main!(benches);
