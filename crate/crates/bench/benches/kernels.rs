use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use geotopic::tensor::{gram_hadamard, mttkrp, residual_sq};
use geotopic::Mode;
use geotopic_bench::random_instance;

fn kernels(c: &mut Criterion) {
    let mut group = c.benchmark_group("mttkrp");
    for &(dim, rank) in &[(50, 5), (200, 10)] {
        let (x, model) = random_instance([dim, dim / 2, dim / 2], rank, 0.02, 1);
        for mode in Mode::ALL {
            let (a, b) = mode.others();
            group.bench_with_input(BenchmarkId::new(format!("{mode}"), format!("{dim}r{rank}")), &x, |bench, x| {
                bench.iter(|| mttkrp(black_box(x), mode, model.factor(a), model.factor(b)).unwrap())
            });
        }
    }
    group.finish();

    let (x, model) = random_instance([200, 100, 100], 10, 0.02, 2);
    c.bench_function("residual_sq/200r10", |bench| {
        bench.iter(|| residual_sq(black_box(&x), black_box(&model)).unwrap())
    });
    c.bench_function("gram_hadamard/200r10", |bench| {
        bench.iter(|| gram_hadamard(black_box(model.u()), black_box(model.l())).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
