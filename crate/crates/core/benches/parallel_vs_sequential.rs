//! Rayon worker pool against a single-threaded pool on the hot kernels.
//! With `--no-default-features` only the sequential fallback is measured.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use sbflow::net::Mlp;
use sbflow::ot::{cost, sinkhorn};
use sbflow::rng::stream;
use sbflow::sim::{self, FnField, SimOptions};

fn normal(n: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut r = stream(seed, 0);
    Array2::from_shape_simple_fn((n, d), || r.sample::<f64, _>(StandardNormal))
}

fn modes(c: &mut Criterion, name: &str, work: impl Fn() + Sync) {
    let mut g = c.benchmark_group(name);
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::new("sequential", "1 thread"), |b| b.iter(|| single.install(&work)));
        let threads = rayon::current_num_threads();
        g.bench_function(BenchmarkId::new("parallel", format!("{threads} threads")), |b| b.iter(&work));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::new("sequential", "fallback"), |b| b.iter(&work));
    g.finish();
}

fn kernels(c: &mut Criterion) {
    let (a, b) = (normal(2000, 2, 1), normal(2000, 2, 2));
    modes(c, "sq_cost_2000", || {
        std::hint::black_box(cost::sq_euclidean(a.view(), b.view()));
    });

    let x = normal(4096, 6, 3);
    let net = Mlp::new(&[6, 64, 64, 64, 5], &mut stream(0, 10)).unwrap();
    modes(c, "mlp_forward_4096", || {
        std::hint::black_box(net.forward(x.view()).unwrap());
    });

    let (p, q) = (normal(400, 2, 4), normal(400, 2, 5));
    let cm = cost::sq_euclidean(p.view(), q.view());
    let w = vec![1.0 / 400.0; 400];
    modes(c, "sinkhorn_400", || {
        std::hint::black_box(sinkhorn::sinkhorn_log(cm.view(), &w, &w, 0.5, 50, 0.0));
    });

    let field = FnField::new(2, |_, x| x.mapv(|v| -v)).with_score(|_, x| x.mapv(|v| -v));
    let x0 = normal(4000, 2, 6);
    modes(c, "euler_maruyama_4000", || {
        std::hint::black_box(sim::integrate(&field, x0.view(), SimOptions::forward(1.0, 50), 0).unwrap());
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernels
}
criterion_main!(benches);
