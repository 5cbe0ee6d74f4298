//! Token-ID corpora and their positional marginal distributions.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::par;
use crate::rng::Rng;
use crate::{Error, Result};

/// A set of equal-length token-ID sequences over a vocabulary `0..vocab`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    tokens: Vec<u32>,
    len: usize,
    vocab: usize,
}

impl Corpus {
    pub fn new(sequences: Vec<Vec<u32>>, vocab: usize) -> Result<Self> {
        let len = sequences.first().ok_or(Error::EmptyInput)?.len();
        if len == 0 {
            return Err(Error::InvalidArgument("sequences must be non-empty".into()));
        }
        let mut tokens = Vec::with_capacity(len * sequences.len());
        for (i, seq) in sequences.iter().enumerate() {
            if seq.len() != len {
                return Err(Error::RaggedRows {
                    line: i + 1,
                    expected: len,
                    found: seq.len(),
                });
            }
            tokens.extend_from_slice(seq);
        }
        Self::from_flat(tokens, len, vocab)
    }

    fn from_flat(tokens: Vec<u32>, len: usize, vocab: usize) -> Result<Self> {
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= vocab) {
            return Err(Error::TokenOutOfRange {
                token: bad as u64,
                vocab,
            });
        }
        Ok(Self { tokens, len, vocab })
    }

    /// Sequence length `n`.
    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn num_sequences(&self) -> usize {
        self.tokens.len() / self.len
    }

    pub fn sequence(&self, index: usize) -> &[u32] {
        &self.tokens[index * self.len..(index + 1) * self.len]
    }

    pub fn sequences(&self) -> impl Iterator<Item = &[u32]> {
        self.tokens.chunks_exact(self.len)
    }

    pub fn load(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Self> {
        Self::read(File::open(path)?, format)
    }

    /// Parses token-ID lines (space-separated) or CSV. An optional first line
    /// `#n=<n> v=<V>` fixes the sequence length and vocabulary size; without
    /// it, `n` comes from the first row and `V` is one past the largest ID.
    pub fn read<R: Read>(input: R, format: CorpusFormat) -> Result<Self> {
        let mut header: Option<(usize, usize)> = None;
        let mut len: Option<usize> = None;
        let mut tokens = Vec::new();
        let mut max_id = 0u32;

        for (idx, line) in BufReader::new(input).lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(rest) = trimmed.strip_prefix('#') {
                if len.is_some() || header.is_some() {
                    return Err(Error::Parse {
                        line: line_no,
                        message: "header must precede all sequences".into(),
                    });
                }
                header = Some(parse_header(rest, line_no)?);
                len = header.map(|(n, _)| n);
                continue;
            }
            let before = tokens.len();
            for field in format.split(trimmed) {
                let id: u32 = field.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("not a token ID: {field:?}"),
                })?;
                max_id = max_id.max(id);
                tokens.push(id);
            }
            let found = tokens.len() - before;
            match len {
                None => len = Some(found),
                Some(expected) if expected != found => {
                    return Err(Error::RaggedRows {
                        line: line_no,
                        expected,
                        found,
                    })
                }
                _ => {}
            }
        }

        let len = len.ok_or(Error::EmptyInput)?;
        if tokens.is_empty() || len == 0 {
            return Err(Error::EmptyInput);
        }
        let vocab = header.map_or(max_id as usize + 1, |(_, v)| v);
        Self::from_flat(tokens, len, vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>, format: CorpusFormat) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?), format)
    }

    /// Writes the corpus with a `#n= v=` header so the vocabulary size
    /// survives a round trip even when the top IDs never occur.
    pub fn write<W: Write>(&self, mut out: W, format: CorpusFormat) -> Result<()> {
        writeln!(out, "#n={} v={}", self.len, self.vocab)?;
        let sep = format.separator();
        let mut line = String::new();
        for seq in self.sequences() {
            line.clear();
            for (k, id) in seq.iter().enumerate() {
                if k > 0 {
                    line.push(sep);
                }
                line.push_str(&id.to_string());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        out.flush()?;
        Ok(())
    }
}

fn parse_header(rest: &str, line: usize) -> Result<(usize, usize)> {
    let mut n = None;
    let mut v = None;
    for field in rest.split_whitespace() {
        let (key, value) = field.split_once('=').ok_or_else(|| Error::Parse {
            line,
            message: format!("bad header field {field:?}"),
        })?;
        let value: usize = value.parse().map_err(|_| Error::Parse {
            line,
            message: format!("bad header value {value:?}"),
        })?;
        match key {
            "n" => n = Some(value),
            "v" => v = Some(value),
            _ => {
                return Err(Error::Parse {
                    line,
                    message: format!("unknown header key {key:?}"),
                })
            }
        }
    }
    match (n, v) {
        (Some(n), Some(v)) if n > 0 && v > 0 => Ok((n, v)),
        _ => Err(Error::Parse {
            line,
            message: "header must be `#n=<n> v=<V>` with positive values".into(),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CorpusFormat {
    #[default]
    TokenLines,
    Csv,
}

impl CorpusFormat {
    fn separator(self) -> char {
        match self {
            CorpusFormat::TokenLines => ' ',
            CorpusFormat::Csv => ',',
        }
    }

    fn split(self, line: &str) -> Box<dyn Iterator<Item = &str> + '_> {
        match self {
            CorpusFormat::TokenLines => Box::new(line.split_whitespace()),
            CorpusFormat::Csv => Box::new(line.split(',')),
        }
    }
}

/// One positional regime of a synthetic corpus: positions in `positions`
/// draw uniformly from `tokens` with probability `concentration`, and
/// uniformly from the whole vocabulary otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Regime {
    pub positions: Range<usize>,
    pub tokens: Range<u32>,
    pub concentration: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seq_len: usize,
    pub vocab: usize,
    pub count: usize,
    pub regimes: Vec<Regime>,
    pub seed: u64,
}

impl SyntheticSpec {
    pub const DEFAULT_CONCENTRATION: f64 = 0.9;

    /// Three regimes (initial, medial, terminal) splitting the positions into
    /// thirds, each concentrated on its own disjoint block of `⌊V/3⌋` IDs.
    pub fn three_regime(
        seq_len: usize,
        vocab: usize,
        count: usize,
        concentration: f64,
        seed: u64,
    ) -> Self {
        let block = (vocab / 3) as u32;
        let regimes = (0..3)
            .map(|r| Regime {
                positions: r * seq_len / 3..(r + 1) * seq_len / 3,
                tokens: r as u32 * block..(r as u32 + 1) * block,
                concentration,
            })
            .filter(|r| !r.positions.is_empty())
            .collect();
        Self {
            seq_len,
            vocab,
            count,
            regimes,
            seed,
        }
    }

    /// n = 32, V = 200, N = 5000, concentration 0.9.
    pub fn standard(seed: u64) -> Self {
        Self::three_regime(32, 200, 5000, Self::DEFAULT_CONCENTRATION, seed)
    }

    fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::EmptyRegimes);
        }
        if self.count == 0 {
            return Err(Error::NoSequences);
        }
        if self.seq_len == 0 || self.vocab == 0 {
            return Err(Error::InvalidArgument("n and V must be positive".into()));
        }
        let mut sorted: Vec<&Regime> = self.regimes.iter().collect();
        sorted.sort_by_key(|r| r.positions.start);
        let mut next = 0;
        for r in &sorted {
            if r.positions.start != next || r.positions.is_empty() {
                return Err(Error::InvalidArgument(
                    "regime position ranges must partition 0..n".into(),
                ));
            }
            next = r.positions.end;
            if r.tokens.is_empty() || r.tokens.end as usize > self.vocab {
                return Err(Error::InvalidArgument(format!(
                    "regime token range {:?} not inside 0..{}",
                    r.tokens, self.vocab
                )));
            }
            if !(0.0..=1.0).contains(&r.concentration) {
                return Err(Error::InvalidArgument(
                    "concentration must lie in [0, 1]".into(),
                ));
            }
        }
        if next != self.seq_len {
            return Err(Error::InvalidArgument(
                "regime position ranges must partition 0..n".into(),
            ));
        }
        Ok(())
    }
}

/// Draws `spec.count` sequences. Tokens are generated sequence by sequence,
/// position by position, from a single [`Rng`] stream, so the corpus is a
/// pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut regime_of = vec![0usize; spec.seq_len];
    for (k, r) in spec.regimes.iter().enumerate() {
        regime_of[r.positions.clone()].fill(k);
    }
    let mut rng = Rng::new(spec.seed);
    let mut tokens = Vec::with_capacity(spec.count * spec.seq_len);
    for _ in 0..spec.count {
        for &k in &regime_of {
            let r = &spec.regimes[k];
            let token = if rng.uniform() < r.concentration {
                r.tokens.start + rng.below((r.tokens.end - r.tokens.start) as u64) as u32
            } else {
                rng.below(spec.vocab as u64) as u32
            };
            tokens.push(token);
        }
    }
    Corpus::from_flat(tokens, spec.seq_len, spec.vocab)
}

/// Per-position token distributions `μ_i`, stored as an `n × V` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionalMarginals {
    mu: Array2<f64>,
    support_counts: Vec<usize>,
}

const ROW_SUM_TOL: f64 = 1e-9;

impl PositionalMarginals {
    /// Wraps explicit distributions. Rows must be non-negative and sum to 1
    /// within 1e-9; they are renormalised exactly.
    pub fn from_rows(mut mu: Array2<f64>) -> Result<Self> {
        if mu.nrows() == 0 || mu.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        for (i, mut row) in mu.rows_mut().into_iter().enumerate() {
            check_distribution(row.view()).map_err(|msg| {
                Error::InvalidDistribution(format!("row {i}: {msg}"))
            })?;
            let total: f64 = row.sum();
            row.mapv_inplace(|p| p / total);
        }
        let support_counts = vec![0; mu.nrows()];
        Ok(Self { mu, support_counts })
    }

    /// Positions along a Hellinger geodesic between two distributions with
    /// disjoint supports: `μ_i = cos²θ_i · from + sin²θ_i · to` with
    /// `θ_i = i · span / (n − 1)` and `span ∈ (0, π/2]`. The square-root
    /// vectors lie on a great-circle arc, so
    /// `d_H(μ_i, μ_j) = 2 sin(|θ_i − θ_j| / 2)`, a strictly increasing
    /// function of `|i − j|`.
    pub fn geodesic(from: &[f64], to: &[f64], n: usize, span: f64) -> Result<Self> {
        if from.len() != to.len() {
            return Err(Error::DimensionMismatch(
                "endpoint distributions differ in length".into(),
            ));
        }
        if n < 2 || !(span > 0.0 && span <= std::f64::consts::FRAC_PI_2) {
            return Err(Error::InvalidArgument(
                "geodesic needs n >= 2 and span in (0, pi/2]".into(),
            ));
        }
        if from.iter().zip(to).any(|(a, b)| *a > 0.0 && *b > 0.0) {
            return Err(Error::InvalidDistribution(
                "geodesic endpoints must have disjoint supports".into(),
            ));
        }
        let mut mu = Array2::zeros((n, from.len()));
        for (i, mut row) in mu.rows_mut().into_iter().enumerate() {
            let theta = span * i as f64 / (n - 1) as f64;
            let (s, c) = theta.sin_cos();
            for (v, p) in row.iter_mut().enumerate() {
                *p = c * c * from[v] + s * s * to[v];
            }
        }
        Self::from_rows(mu)
    }

    pub fn seq_len(&self) -> usize {
        self.mu.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.mu.ncols()
    }

    pub fn probabilities(&self) -> &Array2<f64> {
        &self.mu
    }

    pub fn row(&self, position: usize) -> ArrayView1<'_, f64> {
        self.mu.row(position)
    }

    /// Number of non-excluded tokens observed at each position (zero for
    /// marginals built with [`from_rows`](Self::from_rows)).
    pub fn support_counts(&self) -> &[usize] {
        &self.support_counts
    }
}

pub(crate) fn check_distribution(p: ArrayView1<'_, f64>) -> std::result::Result<(), String> {
    if let Some(bad) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(format!("entry {bad} is negative or non-finite"));
    }
    let total: f64 = p.sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(format!("entries sum to {total}"));
    }
    Ok(())
}

/// Empirical positional marginals. Excluded tokens are dropped before
/// normalising, so each row is the distribution conditional on the token not
/// being excluded.
pub fn estimate_marginals(corpus: &Corpus, exclude: &[u32]) -> Result<PositionalMarginals> {
    let vocab = corpus.vocab_size();
    if let Some(&bad) = exclude.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::TokenOutOfRange {
            token: bad as u64,
            vocab,
        });
    }
    let mut excluded = vec![false; vocab];
    for &t in exclude {
        excluded[t as usize] = true;
    }

    let n = corpus.seq_len();
    let rows: Vec<(Vec<f64>, usize)> = par::map_range(n, |i| {
        let mut counts = vec![0usize; vocab];
        for seq in corpus.sequences() {
            counts[seq[i] as usize] += 1;
        }
        let mut kept = 0;
        for (v, c) in counts.iter_mut().enumerate() {
            if excluded[v] {
                *c = 0;
            }
            kept += *c;
        }
        let probs = counts
            .into_iter()
            .map(|c| if kept == 0 { 0.0 } else { c as f64 / kept as f64 })
            .collect();
        (probs, kept)
    });

    let mut mu = Array2::zeros((n, vocab));
    let mut support_counts = Vec::with_capacity(n);
    for (i, (probs, kept)) in rows.into_iter().enumerate() {
        if kept == 0 {
            return Err(Error::DegeneratePosition(i));
        }
        mu.row_mut(i).assign(&ArrayView1::from(&probs[..]));
        support_counts.push(kept);
    }
    Ok(PositionalMarginals { mu, support_counts })
}
