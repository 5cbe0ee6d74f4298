//! Data-parallel hot loops. With the `parallel` feature each benchmark runs
//! on the default rayon pool and on a single-thread pool; without it only
//! the sequential path exists, under the same benchmark IDs as the default
//! pool so criterion baselines can be compared across builds.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use posenc::corpus::{estimate_marginals, generate_synthetic, Corpus, PositionalMarginals, SyntheticSpec};
use posenc::diagnostics::{monotonicity_violation_rate, stress};
use posenc::encodings::{random_encoding, sinusoidal_encoding};
use posenc::geometry::squared_distance_matrix;
use posenc::rng::Rng;

fn normalized(n: usize, vocab: usize) -> PositionalMarginals {
    let mut rng = Rng::new(7);
    let mut raw = Array2::from_shape_simple_fn((n, vocab), || rng.uniform() + 1e-3);
    for mut row in raw.rows_mut() {
        let total = row.sum();
        row.mapv_inplace(|x| x / total);
    }
    PositionalMarginals::from_rows(raw).unwrap()
}

fn corpus() -> Corpus {
    generate_synthetic(&SyntheticSpec::three_regime(64, 500, 20_000, 0.9, 3)).unwrap()
}

/// Runs `f` on the default pool and, when available, on one thread.
fn both_pools(c: &mut Criterion, group: &str, f: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    g.sample_size(20);
    g.bench_function(BenchmarkId::from_parameter("default"), |b| b.iter(&f));
    #[cfg(feature = "parallel")]
    {
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        g.bench_function(BenchmarkId::from_parameter("one-thread"), |b| {
            b.iter(|| single.install(&f))
        });
    }
    g.finish();
}

fn benches(c: &mut Criterion) {
    let m = normalized(256, 2000);
    both_pools(c, "squared_distance_matrix/n256_v2000", || {
        black_box(squared_distance_matrix(black_box(&m)));
    });

    let corpus = corpus();
    both_pools(c, "estimate_marginals/n64_v500_N20000", || {
        black_box(estimate_marginals(black_box(&corpus), &[]).unwrap());
    });

    let d = squared_distance_matrix(&normalized(512, 64));
    let enc = sinusoidal_encoding(512, 64).unwrap();
    both_pools(c, "stress/n512_d64", || {
        black_box(stress(black_box(&enc), &d).unwrap());
    });

    let rnd = random_encoding(256, 32, 1.0, 1).unwrap();
    both_pools(c, "monotonicity/n256_d32", || {
        black_box(monotonicity_violation_rate(black_box(&rnd)).unwrap());
    });
}

criterion_group!(parallel, benches);
criterion_main!(parallel);
