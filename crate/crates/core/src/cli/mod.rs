//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 malformed or
//! degenerate input data, 4 numerical or verification failure.

mod commands;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::CorpusFormat;
use crate::geometry::DEFAULT_EIGEN_TOL;
use crate::Error;

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "posenc", version, about = "Hellinger-geometry positional encodings")]
pub struct Cli {
    /// Seed for every random draw in the run.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Also write the metrics as CSV to this file (`-` prints CSV to stdout
    /// instead of the table).
    #[arg(long, global = true, value_name = "FILE")]
    pub csv: Option<PathBuf>,
    /// Relative tolerance of the Jacobi eigensolver.
    #[arg(long, global = true, default_value_t = DEFAULT_EIGEN_TOL)]
    pub tol: f64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a three-regime synthetic corpus.
    Synth(SynthArgs),
    /// Estimate positional marginals and the squared Hellinger matrix.
    Estimate(EstimateArgs),
    /// Build a positional encoding and save it as a matrix file.
    Encode(EncodeArgs),
    /// Stress of one encoding against a corpus.
    Stress(StressArgs),
    /// Diagnostics for several encodings, sorted by stress.
    Compare(CompareArgs),
    /// Monotonicity violations and minimum separation of one encoding.
    Monotonicity(MonotonicityArgs),
    /// Linearised gradient flow, its fixed point and the monotonicity bound.
    Ntk(NtkArgs),
    /// Full diagnostic report: stress table, rank trade-off and spectrum.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    #[default]
    Tokens,
    Csv,
}

impl From<FormatArg> for CorpusFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Tokens => CorpusFormat::TokenLines,
            FormatArg::Csv => CorpusFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Mds,
    LowRank,
    Sinusoidal,
    Rope,
    Alibi,
    Random,
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Corpus file: one sequence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Tokens)]
    pub format: FormatArg,
    /// Token IDs dropped before estimating marginals.
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<u32>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 32)]
    pub n: usize,
    #[arg(long, default_value_t = 200)]
    pub v: usize,
    #[arg(long, default_value_t = 5000)]
    pub count: usize,
    /// Probability of drawing from the position's regime block.
    #[arg(long, default_value_t = 0.9)]
    pub concentration: f64,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Tokens)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Marginals matrix output (n × V).
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Squared Hellinger distance matrix output (n × n).
    #[arg(long)]
    pub distances: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EncodingSpecArgs {
    #[arg(long, value_enum, default_value_t = KindArg::Mds)]
    pub kind: KindArg,
    /// Encoding dimension.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Rank for low-rank MDS.
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    /// Standard deviation of random encodings.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Fixed ALiBi slope; fitted to the corpus when omitted.
    #[arg(long)]
    pub slope: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Corpus for corpus-dependent kinds (mds, low-rank).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Tokens)]
    pub format: FormatArg,
    /// Number of positions when no corpus is given.
    #[arg(long)]
    pub n: Option<usize>,
    #[command(flatten)]
    pub spec: EncodingSpecArgs,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct StressArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Encoding matrix file; overrides --kind.
    #[arg(long)]
    pub encoding: Option<PathBuf>,
    #[command(flatten)]
    pub spec: EncodingSpecArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mds,sinusoidal,rope,alibi,random")]
    pub kinds: Vec<KindArg>,
    /// Extra encoding matrix files to include.
    #[arg(long)]
    pub encoding: Vec<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 3)]
    pub rank: usize,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct MonotonicityArgs {
    /// Encoding matrix file; overrides --kind.
    #[arg(long)]
    pub encoding: Option<PathBuf>,
    /// Corpus for corpus-dependent kinds.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Tokens)]
    pub format: FormatArg,
    #[arg(long, default_value_t = 128)]
    pub n: usize,
    #[command(flatten)]
    pub spec: EncodingSpecArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Affine,
    Exponential,
}

#[derive(Debug, Args)]
pub struct NtkArgs {
    /// Corpus file; a line corpus is used when omitted.
    #[arg(long, conflicts_with = "line")]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Tokens)]
    pub format: FormatArg,
    /// Positions of the line corpus.
    #[arg(long, default_value_t = 16)]
    pub line: usize,
    /// Vocabulary of the line corpus.
    #[arg(long, default_value_t = 8)]
    pub vocab: usize,
    /// Geodesic angle spanned by the line corpus, in (0, π/2].
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub span: f64,
    #[arg(long, value_enum, default_value_t = KernelArg::Affine)]
    pub kernel: KernelArg,
    /// Kernel parameter `a` (intercept or scale).
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Kernel parameter `c` (slope or rate).
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Diagonal ridge: `auto` or a non-negative number.
    #[arg(long, default_value = "auto")]
    pub ridge: String,
    /// Forcing dimension.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Forcing scale, equal to C_b.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Euler steps; chosen from the spectrum when omitted.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Euler step size; 1/(2 λ_max) when omitted.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Directory for alpha, b, P* and the summary line.
    #[arg(long)]
    pub dump: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Corpus file; the default synthetic corpus is generated when omitted.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Tokens)]
    pub format: FormatArg,
    #[arg(long, value_delimiter = ',')]
    pub exclude: Vec<u32>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mds,sinusoidal,random")]
    pub kinds: Vec<KindArg>,
    /// Dimension of the stress table encodings.
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Dimension of the rank trade-off table.
    #[arg(long, default_value_t = 128)]
    pub table_dim: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,7,31")]
    pub ranks: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::InvalidArgument(_)) => EXIT_USAGE,
        Some(e) if e.is_data_error() => EXIT_DATA,
        Some(_) => EXIT_NUMERIC,
        None if err.downcast_ref::<std::io::Error>().is_some() => EXIT_DATA,
        None => EXIT_USAGE,
    }
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    commands::run(cli)
}
