use asyncpipe::forecasters::{poly_fft_forecast, second_order_forecast, GradientHistory};
use asyncpipe::{sample_uniform, SeededRng};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn forecasters(c: &mut Criterion) {
    let mut rng = SeededRng::new(1);
    let mut group = c.benchmark_group("poly_fft_forecast");
    for dim in [64usize, 1024] {
        let mut history = GradientHistory::new(8).unwrap();
        for step in 1..=8 {
            history
                .push(step, sample_uniform(&mut rng, dim, -1.0, 1.0).unwrap())
                .unwrap();
        }
        group.bench_with_input(BenchmarkId::from_parameter(dim), &history, |b, h| {
            b.iter(|| poly_fft_forecast(h, 7).unwrap())
        });
    }
    group.finish();

    let g = sample_uniform(&mut rng, 1024, -1.0, 1.0).unwrap();
    let dw = sample_uniform(&mut rng, 1024, -0.1, 0.1).unwrap();
    c.bench_function("second_order_forecast/1024", |b| {
        b.iter(|| second_order_forecast(&g, &dw, 1.0).unwrap())
    });
}

criterion_group!(benches, forecasters);
criterion_main!(benches);
