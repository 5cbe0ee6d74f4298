use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::Path;

use anyhow::{bail, Context};
use ndarray::Array2;

use super::{
    Cli, Command, CompareArgs, CorpusArgs, EncodeArgs, EncodingSpecArgs, EstimateArgs, FormatArg, KernelArg,
    KindArg, MonotonicityArgs, NtkArgs, ReportArgs, StressArgs, SynthArgs,
};
use crate::corpus::{estimate_marginals, generate_synthetic, Corpus, PositionalMarginals, SyntheticSpec};
use crate::diagnostics::{
    hellinger_correlation, min_separation, monotonicity_violation_rate, rank_tradeoff_table, stress,
};
use crate::dynamics::{
    build_forcing, build_kernel, integrate_flow, line_marginals, verify_monotone_fixed_point, FlowOptions,
    FlowSystem, KernelShape, KernelSpec, Ridge,
};
use crate::encodings::{
    alibi_distances, load_encoding, low_rank_mds, mds_encoding, random_encoding, rope_encoding,
    sinusoidal_encoding, AlibiSlope, PairwiseGeometry,
};
use crate::geometry::{
    cumulative_variance, double_center, eigendecompose_symmetric, effective_rank, squared_distance_matrix,
    EigenDecomposition, SquaredDistanceMatrix, DEFAULT_RANK_TOL,
};
use crate::matrix_io::save_matrix;
use crate::report::Report;
use crate::Error;

struct Globals {
    seed: u64,
    tol: f64,
    /// CSV replaces the table on stdout.
    csv_stdout: bool,
}

/// Marginals, their squared Hellinger matrix and the spectrum of the
/// doubly-centred Gram matrix.
struct Metric {
    marginals: PositionalMarginals,
    d: SquaredDistanceMatrix,
    eig: EigenDecomposition,
}

impl Metric {
    fn from_marginals(marginals: PositionalMarginals, tol: f64) -> anyhow::Result<Self> {
        let d = squared_distance_matrix(&marginals);
        let b = double_center(&d);
        let eig = eigendecompose_symmetric(b.as_array(), tol)?;
        Ok(Self { marginals, d, eig })
    }

    fn n(&self) -> usize {
        self.d.len()
    }
}

fn load_corpus(path: &Path, format: FormatArg) -> anyhow::Result<Corpus> {
    Corpus::load(path, format.into()).with_context(|| format!("reading corpus {}", path.display()))
}

fn metric_from(args: &CorpusArgs, g: &Globals) -> anyhow::Result<Metric> {
    let corpus = load_corpus(&args.corpus, args.format)?;
    Metric::from_marginals(estimate_marginals(&corpus, &args.exclude)?, g.tol)
}

fn optional_metric(path: Option<&Path>, format: FormatArg, g: &Globals) -> anyhow::Result<Option<Metric>> {
    path.map(|p| {
        let corpus = load_corpus(p, format)?;
        Metric::from_marginals(estimate_marginals(&corpus, &[])?, g.tol)
    })
    .transpose()
}

struct Candidate {
    label: String,
    geom: Box<dyn PairwiseGeometry>,
}

fn require_metric(metric: Option<&Metric>, kind: KindArg) -> anyhow::Result<&Metric> {
    match metric {
        Some(m) => Ok(m),
        None => Err(Error::InvalidArgument(format!("--kind {kind:?} needs a corpus")).into()),
    }
}

fn build_candidate(
    kind: KindArg,
    n: usize,
    spec: &EncodingSpecArgs,
    metric: Option<&Metric>,
    seed: u64,
) -> anyhow::Result<Candidate> {
    let d = spec.d;
    let (label, geom): (String, Box<dyn PairwiseGeometry>) = match kind {
        KindArg::Mds => {
            let m = require_metric(metric, kind)?;
            (format!("mds(d={d})"), Box::new(mds_encoding(&m.eig, d)?))
        }
        KindArg::LowRank => {
            let m = require_metric(metric, kind)?;
            let (_, enc) = low_rank_mds(&m.eig, spec.rank, d)?;
            (format!("low_rank_mds(r={},d={d})", spec.rank), Box::new(enc))
        }
        KindArg::Sinusoidal => (format!("sinusoidal(d={d})"), Box::new(sinusoidal_encoding(n, d)?)),
        KindArg::Rope => (format!("rope(d={d})"), Box::new(rope_encoding(n, d)?)),
        KindArg::Alibi => {
            let slope = match (spec.slope, metric) {
                (Some(s), _) => AlibiSlope::Fixed(s),
                (None, Some(m)) => AlibiSlope::FitTo(&m.d),
                (None, None) => AlibiSlope::Fixed(1.0),
            };
            let enc = alibi_distances(n, slope)?;
            (format!("alibi(m={:.6e})", enc.slope), Box::new(enc))
        }
        KindArg::Random => (
            format!("random(sigma={},d={d},seed={seed})", spec.sigma),
            Box::new(random_encoding(n, d, spec.sigma, seed)?),
        ),
    };
    Ok(Candidate { label, geom })
}

fn emit(report: &Report, csv: Option<&Path>) -> anyhow::Result<()> {
    match csv {
        Some(p) if p.as_os_str() == "-" => report.write_csv(io::stdout().lock())?,
        Some(p) => {
            print!("{}", report.to_table());
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            report.write_csv(BufWriter::new(file))?;
        }
        None => print!("{}", report.to_table()),
    }
    Ok(())
}

pub(super) fn run(cli: Cli) -> anyhow::Result<()> {
    if !(cli.tol > 0.0 && cli.tol < 1.0) {
        bail!(Error::InvalidArgument(format!("--tol must lie in (0, 1), got {}", cli.tol)));
    }
    let g = Globals {
        seed: cli.seed,
        tol: cli.tol,
        csv_stdout: cli.csv.as_deref().is_some_and(|p| p.as_os_str() == "-"),
    };
    let report = match &cli.command {
        Command::Synth(a) => cmd_synth(a, &g)?,
        Command::Estimate(a) => cmd_estimate(a, &g)?,
        Command::Encode(a) => cmd_encode(a, &g)?,
        Command::Stress(a) => cmd_stress(a, &g)?,
        Command::Compare(a) => cmd_compare(a, &g)?,
        Command::Monotonicity(a) => cmd_monotonicity(a, &g)?,
        Command::Ntk(a) => cmd_ntk(a, &g)?,
        Command::Report(a) => cmd_report(a, &g)?,
    };
    emit(&report, cli.csv.as_deref())
}

fn cmd_synth(a: &SynthArgs, g: &Globals) -> anyhow::Result<Report> {
    let spec = SyntheticSpec::three_regime(a.n, a.v, a.count, a.concentration, g.seed);
    let corpus = generate_synthetic(&spec)?;
    corpus
        .save(&a.output, a.format.into())
        .with_context(|| format!("writing {}", a.output.display()))?;
    let mut r = Report::new();
    r.section("synth")
        .push("sequences", corpus.num_sequences() as f64, a.output.display().to_string())
        .push("positions", corpus.seq_len() as f64, "")
        .push("vocab", corpus.vocab_size() as f64, "")
        .push("concentration", a.concentration, format!("seed={}", g.seed));
    Ok(r)
}

fn cmd_estimate(a: &EstimateArgs, g: &Globals) -> anyhow::Result<Report> {
    let metric = metric_from(&a.corpus, g)?;
    if let Some(p) = &a.output {
        save_matrix(p, metric.marginals.probabilities())?;
    }
    if let Some(p) = &a.distances {
        save_matrix(p, metric.d.as_array())?;
    }
    let supports = metric.marginals.support_counts();
    let mut r = Report::new();
    let s = r.section("marginals");
    s.push("positions", metric.n() as f64, "")
        .push("vocab", metric.marginals.vocab_size() as f64, "")
        .push("min_support", supports.iter().copied().min().unwrap_or(0) as f64, "")
        .push("max_support", supports.iter().copied().max().unwrap_or(0) as f64, "");
    let max_d = metric.d.as_array().iter().copied().fold(0.0, f64::max);
    s.push("max_hellinger", max_d.sqrt(), "");
    spectrum_section(&mut r, &metric)?;
    Ok(r)
}

fn spectrum_section(r: &mut Report, metric: &Metric) -> anyhow::Result<()> {
    let s = r.section("spectrum");
    let rank = effective_rank(&metric.eig, DEFAULT_RANK_TOL);
    s.push("rank_B", rank as f64, format!("tol={DEFAULT_RANK_TOL:e}*lambda_1"));
    s.push("lambda_1", metric.eig.values[0], "");
    s.push("lambda_min", metric.eig.values[metric.eig.len() - 1], "");
    for k in [1, 2, 3].into_iter().filter(|&k| k <= metric.n()) {
        s.push(format!("cumvar_{k}"), cumulative_variance(&metric.eig, k)?, "");
    }
    Ok(())
}

fn cmd_encode(a: &EncodeArgs, g: &Globals) -> anyhow::Result<Report> {
    let metric = optional_metric(a.corpus.as_deref(), a.format, g)?;
    let n = match (&metric, a.n) {
        (Some(m), _) => m.n(),
        (None, Some(n)) => n,
        (None, None) => bail!(Error::InvalidArgument("give --corpus or --n".into())),
    };
    let d = a.spec.d;
    let enc = match a.spec.kind {
        KindArg::Mds => mds_encoding(&require_metric(metric.as_ref(), KindArg::Mds)?.eig, d)?,
        KindArg::LowRank => low_rank_mds(&require_metric(metric.as_ref(), KindArg::LowRank)?.eig, a.spec.rank, d)?.1,
        KindArg::Sinusoidal => sinusoidal_encoding(n, d)?,
        KindArg::Rope => rope_encoding(n, d)?,
        KindArg::Random => random_encoding(n, d, a.spec.sigma, g.seed)?,
        KindArg::Alibi => bail!(Error::InvalidArgument(
            "alibi defines distances only and has no position matrix".into()
        )),
    };
    enc.save(&a.output)?;
    let mut r = Report::new();
    r.section("encode")
        .push("positions", n as f64, enc.kind.label())
        .push("dim", enc.dim() as f64, a.output.display().to_string());
    Ok(r)
}

fn candidate_or_file(
    file: Option<&Path>,
    spec: &EncodingSpecArgs,
    n: usize,
    metric: Option<&Metric>,
    seed: u64,
) -> anyhow::Result<Candidate> {
    match file {
        Some(p) => {
            let enc = load_encoding(p)?;
            Ok(Candidate {
                label: enc.kind.label(),
                geom: Box::new(enc),
            })
        }
        None => build_candidate(spec.kind, n, spec, metric, seed),
    }
}

fn cmd_stress(a: &StressArgs, g: &Globals) -> anyhow::Result<Report> {
    let metric = metric_from(&a.corpus, g)?;
    let c = candidate_or_file(a.encoding.as_deref(), &a.spec, metric.n(), Some(&metric), g.seed)?;
    let s = stress(c.geom.as_ref(), &metric.d)?;
    let mut r = Report::new();
    r.section("stress")
        .push("stress", s.stress, c.label)
        .push("numerator", s.numerator, "")
        .push("denominator", s.denominator, "")
        .push("pairs", s.pair_count as f64, "");
    Ok(r)
}

fn diagnostics_rows(r: &mut Report, candidates: &[Candidate], metric: &Metric) -> anyhow::Result<()> {
    let mut stressed = Vec::with_capacity(candidates.len());
    for c in candidates {
        stressed.push((stress(c.geom.as_ref(), &metric.d)?.stress, c));
    }
    stressed.sort_by(|x, y| x.0.total_cmp(&y.0));
    let s = r.section("stress (ascending)");
    for (value, c) in &stressed {
        s.push(format!("stress:{}", c.label), *value, "");
    }
    let s = r.section("encoding diagnostics");
    for (_, c) in &stressed {
        let corr = match hellinger_correlation(c.geom.as_ref(), &metric.d) {
            Ok(v) => v,
            Err(Error::UndefinedCorrelation) => f64::NAN,
            Err(e) => return Err(e.into()),
        };
        s.push(format!("correlation:{}", c.label), corr, "pearson vs d_H");
        if metric.n() >= 3 {
            let m = monotonicity_violation_rate(c.geom.as_ref())?;
            s.push(
                format!("violation_rate:{}", c.label),
                m.violation_rate,
                format!("{}/{}", m.violations, m.triples_checked),
            );
        }
        if metric.n() >= 2 {
            let sep = min_separation(c.geom.as_ref())?;
            s.push(
                format!("min_separation:{}", c.label),
                sep.min_separation,
                format!("pair=({},{})", sep.argmin_pair.0, sep.argmin_pair.1),
            );
        }
    }
    Ok(())
}

fn cmd_compare(a: &CompareArgs, g: &Globals) -> anyhow::Result<Report> {
    let metric = metric_from(&a.corpus, g)?;
    let spec = EncodingSpecArgs {
        kind: KindArg::Mds,
        d: a.d,
        rank: a.rank,
        sigma: a.sigma,
        slope: None,
    };
    let mut candidates = Vec::new();
    for &kind in &a.kinds {
        candidates.push(build_candidate(kind, metric.n(), &spec, Some(&metric), g.seed)?);
    }
    for p in &a.encoding {
        candidates.push(candidate_or_file(Some(p), &spec, metric.n(), None, g.seed)?);
    }
    let mut r = Report::new();
    diagnostics_rows(&mut r, &candidates, &metric)?;
    Ok(r)
}

fn cmd_monotonicity(a: &MonotonicityArgs, g: &Globals) -> anyhow::Result<Report> {
    let metric = optional_metric(a.corpus.as_deref(), a.format, g)?;
    let n = metric.as_ref().map_or(a.n, Metric::n);
    let c = candidate_or_file(a.encoding.as_deref(), &a.spec, n, metric.as_ref(), g.seed)?;
    let m = monotonicity_violation_rate(c.geom.as_ref())?;
    let sep = min_separation(c.geom.as_ref())?;
    let mut r = Report::new();
    r.section("monotonicity")
        .push("violation_rate", m.violation_rate, c.label)
        .push("violations", m.violations as f64, "")
        .push("triples", m.triples_checked as f64, "")
        .push(
            "min_separation",
            sep.min_separation,
            format!("pair=({},{})", sep.argmin_pair.0, sep.argmin_pair.1),
        );
    Ok(r)
}

fn parse_ridge(text: &str) -> anyhow::Result<Ridge> {
    if text.eq_ignore_ascii_case("auto") {
        return Ok(Ridge::Adaptive);
    }
    match text.parse::<f64>() {
        Ok(v) => Ok(Ridge::Fixed(v)),
        Err(_) => bail!(Error::InvalidArgument(format!("--ridge expects `auto` or a number, got {text:?}"))),
    }
}

fn cmd_ntk(a: &NtkArgs, g: &Globals) -> anyhow::Result<Report> {
    let marginals = match &a.corpus {
        Some(p) => estimate_marginals(&load_corpus(p, a.format)?, &[])?,
        None => line_marginals(a.line, a.vocab, a.span)?,
    };
    let d = squared_distance_matrix(&marginals);
    let shape = match a.kernel {
        KernelArg::Affine => KernelShape::Affine { intercept: a.a, slope: a.c },
        KernelArg::Exponential => KernelShape::Exponential { scale: a.a, rate: a.c },
    };
    let kernel = build_kernel(&d, &KernelSpec { shape, ridge: parse_ridge(&a.ridge)? })?;
    let ridge = kernel.ridge;
    let forcing = build_forcing(&marginals, a.d, a.scale, g.seed)?;
    let forcing_ratio = forcing.max_ratio;
    let system = FlowSystem::new(kernel, forcing)?;
    let fixed = verify_monotone_fixed_point(&system, &d)?;

    let mut options = FlowOptions::for_system(&system, 25.0);
    if let Some(dt) = a.dt {
        options.dt = dt;
    }
    if let Some(steps) = a.steps {
        options.steps = steps;
    }
    let p0 = Array2::zeros(system.b.dim());
    let flow = integrate_flow(&system, &p0, &options)?;
    let flow_gap = (&flow.p_final - &fixed.p_star).iter().fold(0.0f64, |m, x| m.max(x.abs()));

    if let Some(dir) = &a.dump {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        save_matrix(dir.join("alpha.txt"), &system.alpha)?;
        save_matrix(dir.join("b.txt"), &system.b)?;
        save_matrix(dir.join("p_star.txt"), &fixed.p_star)?;
        fs::write(dir.join("summary.txt"), format!("{fixed}\n"))?;
    }

    if !g.csv_stdout {
        println!("{fixed}\n");
    }
    let mut r = Report::new();
    r.section("fixed point")
        .push("lambda_min", fixed.lambda_min, format!("ridge={ridge:.6e}"))
        .push("C_b", fixed.c_b, format!("realised={forcing_ratio:.6e}"))
        .push("L_f", fixed.lipschitz, "")
        .push("f_sup", fixed.sup, "")
        .push("R", fixed.orbit_radius, "1.05*max|p*|")
        .push("C", fixed.bound_constant, "")
        .push("max_ratio", fixed.max_ratio, if fixed.bound_holds() { "holds" } else { "VIOLATED" })
        .push("violations", fixed.violations as f64, format!("of {} triples", fixed.triples_checked))
        .push("strict_violations", fixed.strict_violations as f64, "")
        .push("corpus_violations", fixed.corpus_violations as f64, "");
    let s = r.section("flow");
    s.push("steps", options.steps as f64, format!("dt={:.6e}", options.dt))
        .push("final_residual", flow.final_residual, "")
        .push("max_abs_gap_to_fixed_point", flow_gap, "")
        .push("trajectory_max_row_norm", flow.max_row_norm, "");
    for cp in &flow.checkpoints {
        s.push(
            format!("residual@{}", cp.step),
            cp.residual,
            cp.min_separation.map_or(String::new(), |m| format!("min_sep={m:.6e}")),
        );
    }
    Ok(r)
}

fn cmd_report(a: &ReportArgs, g: &Globals) -> anyhow::Result<Report> {
    let corpus = match &a.corpus {
        Some(p) => load_corpus(p, a.format)?,
        None => generate_synthetic(&SyntheticSpec::standard(g.seed))?,
    };
    let metric = Metric::from_marginals(estimate_marginals(&corpus, &a.exclude)?, g.tol)?;
    let n = metric.n();
    let spec = EncodingSpecArgs {
        kind: KindArg::Mds,
        d: a.d,
        rank: 3,
        sigma: a.sigma,
        slope: None,
    };
    let mut candidates = Vec::new();
    for &kind in &a.kinds {
        candidates.push(build_candidate(kind, n, &spec, Some(&metric), g.seed)?);
    }

    let mut r = Report::new();
    r.section("corpus")
        .push("sequences", corpus.num_sequences() as f64, "")
        .push("positions", n as f64, "")
        .push("vocab", corpus.vocab_size() as f64, "");
    spectrum_section(&mut r, &metric)?;
    diagnostics_rows(&mut r, &candidates, &metric)?;

    let ranks: Vec<usize> = a.ranks.iter().copied().filter(|&k| k <= n && k <= a.table_dim).collect();
    if ranks.len() < a.ranks.len() {
        log::warn!("dropping ranks above min(n, table dim) = {}", n.min(a.table_dim));
    }
    if !ranks.is_empty() {
        let rows = rank_tradeoff_table(&metric.eig, &metric.d, a.table_dim, &ranks)?;
        let s = r.section(format!("rank trade-off (d={})", a.table_dim));
        for row in rows {
            s.push(
                format!("stress:r={}", row.rank),
                row.stress,
                format!("params={} saving={:.1}%", row.parameters, 100.0 * row.saving_vs_free),
            );
        }
        s.push("params:free", (n * a.table_dim) as f64, "n*d");
    }
    Ok(r)
}
