use ndarray::{Array1, Array2};
use posenc::attention::{
    attention_weights, equivariance_check, mean_embedding_lipschitz_check, weight_row_sums, AttentionLayer,
    EmbeddingTable,
};
use posenc::corpus::{estimate_marginals, generate_synthetic, Corpus, PositionalMarginals, Regime, SyntheticSpec};
use posenc::diagnostics::{min_separation, monotonicity_violation_rate, stress};
use posenc::dynamics::{
    build_forcing, build_kernel, fixed_point, integrate_flow, kl_hellinger_inequality_check, FlowOptions,
    FlowSystem, KernelShape, KernelSpec, Ridge,
};
use posenc::encodings::{
    alibi_distances, low_rank_mds, mds_encoding, random_encoding, rope_encoding, sinusoidal_encoding, AlibiSlope,
    Encoding, EncodingKind, PairwiseGeometry,
};
use posenc::geometry::{
    double_center, eigendecompose_symmetric, effective_rank, squared_distance_matrix, EigenDecomposition,
    SquaredDistanceMatrix, DEFAULT_EIGEN_TOL, DEFAULT_RANK_TOL,
};
use posenc::rng::Rng;
use proptest::prelude::*;

fn random_marginals(rng: &mut Rng, n: usize, vocab: usize) -> PositionalMarginals {
    let rows = Array2::from_shape_simple_fn((n, vocab), || {
        if rng.uniform() < 0.3 {
            0.0
        } else {
            -rng.uniform().max(1e-300).ln()
        }
    });
    let rows = Array2::from_shape_fn((n, vocab), |(i, v)| {
        let total: f64 = rows.row(i).sum();
        if total == 0.0 {
            if v == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            rows[[i, v]] / total
        }
    });
    PositionalMarginals::from_rows(rows).unwrap()
}

fn spectrum(d: &SquaredDistanceMatrix) -> EigenDecomposition {
    eigendecompose_symmetric(double_center(d).as_array(), DEFAULT_EIGEN_TOL).unwrap()
}

fn random_corpus(rng: &mut Rng, n: usize, vocab: usize, count: usize) -> Vec<Vec<u32>> {
    (0..count)
        .map(|_| (0..n).map(|_| rng.below(vocab as u64) as u32).collect())
        .collect()
}

fn random_system(seed: u64, n: usize, dim: usize) -> FlowSystem {
    let mut rng = Rng::new(seed);
    let m = random_marginals(&mut rng, n, 5);
    let d = squared_distance_matrix(&m);
    let shape = KernelShape::Exponential { scale: 0.5, rate: 1.0 };
    let kernel = build_kernel(&d, &KernelSpec { shape, ridge: Ridge::Adaptive }).unwrap();
    FlowSystem::new(kernel, build_forcing(&m, dim, 1.5, seed).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn marginal_rows_are_distributions(seed in any::<u64>(), n in 1usize..8, vocab in 1usize..6, count in 1usize..20) {
        let mut rng = Rng::new(seed);
        let corpus = Corpus::new(random_corpus(&mut rng, n, vocab, count), vocab).unwrap();
        let m = estimate_marginals(&corpus, &[]).unwrap();
        for row in m.probabilities().rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn marginals_ignore_sequence_order(seed in any::<u64>(), n in 1usize..6, count in 2usize..30) {
        let mut rng = Rng::new(seed);
        let mut seqs = random_corpus(&mut rng, n, 4, count);
        let before = estimate_marginals(&Corpus::new(seqs.clone(), 4).unwrap(), &[]).unwrap();
        rng.shuffle(&mut seqs);
        let after = estimate_marginals(&Corpus::new(seqs, 4).unwrap(), &[]).unwrap();
        prop_assert_eq!(before.probabilities(), after.probabilities());
    }

    #[test]
    fn arc_marginals_have_rank_two(seed in any::<u64>(), n in 3usize..20) {
        let mut rng = Rng::new(seed);
        let mut s: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
        s.sort_by(f64::total_cmp);
        let rows = Array2::from_shape_fn((n, 2), |(i, v)| if v == 0 { 1.0 - s[i] } else { s[i] });
        let d = squared_distance_matrix(&PositionalMarginals::from_rows(rows).unwrap());
        prop_assert!(effective_rank(&spectrum(&d), DEFAULT_RANK_TOL) <= 2);
    }

    #[test]
    fn low_rank_stress_does_not_increase(seed in any::<u64>(), n in 3usize..14, vocab in 2usize..8) {
        let mut rng = Rng::new(seed);
        let d = squared_distance_matrix(&random_marginals(&mut rng, n, vocab));
        if d.as_array().iter().all(|&x| x == 0.0) {
            return Ok(());
        }
        let eig = spectrum(&d);
        let mut last = f64::INFINITY;
        for r in 1..=n {
            let (_, enc) = low_rank_mds(&eig, r, n).unwrap();
            let s = stress(&enc, &d).unwrap().stress;
            prop_assert!(s <= last + 1e-12);
            last = s;
        }
        prop_assert!(last < 1e-9);
    }

    #[test]
    fn mds_beats_reference_encodings(seed in any::<u64>(), n in 3usize..14, vocab in 2usize..8, half in 1usize..4) {
        let mut rng = Rng::new(seed);
        let d = squared_distance_matrix(&random_marginals(&mut rng, n, vocab));
        if d.as_array().iter().all(|&x| x == 0.0) {
            return Ok(());
        }
        let dim = 2 * half;
        let eig = spectrum(&d);
        let mds = stress(&mds_encoding(&eig, dim).unwrap(), &d).unwrap().stress;
        let mut others: Vec<Box<dyn PairwiseGeometry>> = vec![
            Box::new(sinusoidal_encoding(n, dim).unwrap()),
            Box::new(rope_encoding(n, dim).unwrap()),
            Box::new(random_encoding(n, dim, 1.0, seed).unwrap()),
            Box::new(random_encoding(n, dim, 0.1, seed).unwrap()),
        ];
        for r in 1..dim.min(n) {
            others.push(Box::new(low_rank_mds(&eig, r, dim).unwrap().1));
        }
        for other in &others {
            prop_assert!(mds <= stress(other.as_ref(), &d).unwrap().stress + 1e-12);
        }
    }

    #[test]
    fn distance_functions_of_gap_have_no_violations(seed in any::<u64>(), n in 3usize..40, dim in 1usize..6) {
        let mut rng = Rng::new(seed);
        let slope = 0.01 + 10.0 * rng.uniform();
        let alibi = alibi_distances(n, AlibiSlope::Fixed(slope)).unwrap();
        prop_assert_eq!(monotonicity_violation_rate(&alibi).unwrap().violations, 0);
        let dir = Array1::from_shape_simple_fn(dim, || rng.gaussian());
        let offset = Array1::from_shape_simple_fn(dim, || rng.gaussian());
        let line = Array2::from_shape_fn((n, dim), |(i, c)| offset[c] + slope * i as f64 * dir[c]);
        let enc = Encoding::new(EncodingKind::Derived, line).unwrap();
        prop_assert_eq!(monotonicity_violation_rate(&enc).unwrap().violations, 0);
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in any::<u64>(), n in 1usize..10, dim in 1usize..6) {
        let mut rng = Rng::new(seed);
        let x = Array2::from_shape_simple_fn((n, dim), || 3.0 * rng.gaussian());
        let layer = AttentionLayer::new(
            Array2::from_shape_simple_fn((dim, dim), || 3.0 * rng.gaussian()),
            Array2::eye(dim),
            dim,
        )
        .unwrap();
        let w = attention_weights(&x, &layer).unwrap();
        for s in weight_row_sums(&w) {
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_without_positions_is_equivariant(seed in any::<u64>(), n in 1usize..9) {
        let mut rng = Rng::new(seed);
        let (vocab, dim) = (7, 4);
        let tokens: Vec<u32> = (0..n).map(|_| rng.below(vocab) as u32).collect();
        let mut sigma: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut sigma);
        let table = EmbeddingTable::new(Array2::from_shape_simple_fn((vocab as usize, dim), || rng.gaussian())).unwrap();
        let layer = AttentionLayer::new(
            Array2::from_shape_simple_fn((dim, dim), || rng.gaussian()),
            Array2::from_shape_simple_fn((dim, 3), || rng.gaussian()),
            dim,
        )
        .unwrap();
        let pe = sinusoidal_encoding(n, dim).unwrap();
        let report = equivariance_check(&tokens, &sigma, &table, &[layer], &pe).unwrap();
        prop_assert!(report.max_deviation_without_pe < 1e-9);
    }

    #[test]
    fn mean_embeddings_are_lipschitz(seed in any::<u64>(), n in 2usize..10, vocab in 2usize..12, dim in 1usize..6) {
        let mut rng = Rng::new(seed);
        let table = EmbeddingTable::new(Array2::from_shape_simple_fn((vocab, dim), || rng.gaussian())).unwrap();
        let m = random_marginals(&mut rng, n, vocab);
        if let Ok(report) = mean_embedding_lipschitz_check(&table, &m) {
            prop_assert!(report.holds());
        }
    }

    #[test]
    fn pinsker_hellinger_lower_bound(seed in any::<u64>(), vocab in 2usize..16) {
        let mut rng = Rng::new(seed);
        let m = random_marginals(&mut rng, 2, vocab);
        let (mu, nu) = (m.row(0).to_vec(), m.row(1).to_vec());
        prop_assert!(kl_hellinger_inequality_check(&mu, &nu, 0.01).unwrap().lower_ok);
    }

    #[test]
    fn fixed_point_is_linear(seed in any::<u64>(), n in 2usize..16, dim in 1usize..5) {
        let system = random_system(seed, n, dim);
        let mut rng = Rng::new(seed ^ 1);
        let other = Array2::from_shape_simple_fn((n, dim), || rng.gaussian());
        let whole = fixed_point(&system.alpha, &(&system.b + &other)).unwrap();
        let parts = fixed_point(&system.alpha, &system.b).unwrap() + fixed_point(&system.alpha, &other).unwrap();
        let scale = 1.0 + whole.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!((&whole - &parts).iter().all(|x| x.abs() < 1e-9 * scale));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flow_reaches_the_same_fixed_point(seed in any::<u64>(), n in 2usize..12, dim in 1usize..4) {
        let system = random_system(seed, n, dim);
        let p_star = fixed_point(&system.alpha, &system.b).unwrap();
        let options = FlowOptions::for_system(&system, 30.0);
        let mut rng = Rng::new(seed ^ 2);
        for _ in 0..5 {
            let p0 = Array2::from_shape_simple_fn((n, dim), || 5.0 * rng.gaussian());
            let flow = integrate_flow(&system, &p0, &options).unwrap();
            prop_assert!((&flow.p_final - &p_star).iter().all(|x| x.abs() < 1e-5));
        }
    }
}

#[test]
fn sinusoidal_and_rope_distances_depend_on_gap_only() {
    let n = 40;
    for enc in [sinusoidal_encoding(n, 16).unwrap(), rope_encoding(n, 16).unwrap()] {
        for gap in 1..n {
            let first = enc.distance(0, gap);
            for i in 1..n - gap {
                assert!((enc.distance(i, i + gap) - first).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn random_separation_grows_with_dimension() {
    let mean = |d: usize| -> f64 {
        (0..20)
            .map(|seed| min_separation(&random_encoding(64, d, 1.0, seed).unwrap()).unwrap().min_separation)
            .sum::<f64>()
            / 20.0
    };
    let seps: Vec<f64> = [4, 16, 64, 256].into_iter().map(mean).collect();
    assert!(seps.windows(2).all(|w| w[0] < w[1]), "{seps:?}");
}

#[test]
fn uniform_generation_converges_to_uniform() {
    let (n, vocab) = (4, 10);
    let spec = SyntheticSpec {
        seq_len: n,
        vocab,
        count: 100_000,
        regimes: vec![Regime {
            positions: 0..n,
            tokens: 0..vocab as u32,
            concentration: 0.0,
        }],
        seed: 11,
    };
    let m = estimate_marginals(&generate_synthetic(&spec).unwrap(), &[]).unwrap();
    for row in m.probabilities().rows() {
        let l1: f64 = row.iter().map(|p| (p - 0.1).abs()).sum();
        assert!(l1 < 0.05, "{l1}");
    }
}
