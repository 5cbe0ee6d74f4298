//! Encoding families: MDS-optimal, low-rank MDS, sinusoidal, RoPE-derived,
//! ALiBi-derived, random Gaussian, and matrices loaded from disk.

use std::path::{Path, PathBuf};

use ndarray::{s, Array2};

use crate::geometry::{EigenDecomposition, SquaredDistanceMatrix};
use crate::matrix_io;
use crate::rng::Rng;
use crate::{Error, Result};

/// Anything that assigns a distance to each pair of positions.
pub trait PairwiseGeometry: Sync {
    fn num_positions(&self) -> usize;
    fn distance(&self, i: usize, j: usize) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncodingKind {
    Mds,
    LowRankMds { rank: usize },
    Sinusoidal,
    Rope,
    Random { sigma: f64, seed: u64 },
    File { path: PathBuf },
    /// Rows produced by some other computation (projections, flow states).
    Derived,
}

impl EncodingKind {
    pub fn label(&self) -> String {
        match self {
            EncodingKind::Mds => "mds".into(),
            EncodingKind::LowRankMds { rank } => format!("low_rank_mds(r={rank})"),
            EncodingKind::Sinusoidal => "sinusoidal".into(),
            EncodingKind::Rope => "rope".into(),
            EncodingKind::Random { sigma, seed } => format!("random(sigma={sigma},seed={seed})"),
            EncodingKind::File { path } => format!("file({})", path.display()),
            EncodingKind::Derived => "derived".into(),
        }
    }
}

/// An `n × d` matrix whose rows are position vectors `p_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub kind: EncodingKind,
    positions: Array2<f64>,
}

impl Encoding {
    pub fn new(kind: EncodingKind, positions: Array2<f64>) -> Result<Self> {
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { kind, positions })
    }

    pub fn positions(&self) -> &Array2<f64> {
        &self.positions
    }

    pub fn into_positions(self) -> Array2<f64> {
        self.positions
    }

    pub fn dim(&self) -> usize {
        self.positions.ncols()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        matrix_io::save_matrix(path, &self.positions)
    }
}

impl PairwiseGeometry for Encoding {
    fn num_positions(&self) -> usize {
        self.positions.nrows()
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.positions
            .row(i)
            .iter()
            .zip(self.positions.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// A pairwise-only encoding, `delta_ij = m · |i − j|` for ALiBi.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceOnlyEncoding {
    delta: Array2<f64>,
    pub slope: f64,
}

impl DistanceOnlyEncoding {
    pub fn delta(&self) -> &Array2<f64> {
        &self.delta
    }
}

impl PairwiseGeometry for DistanceOnlyEncoding {
    fn num_positions(&self) -> usize {
        self.delta.nrows()
    }

    fn distance(&self, i: usize, j: usize) -> f64 {
        self.delta[[i, j]]
    }
}

fn check_even(d: usize) -> Result<()> {
    if d == 0 || !d.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("dimension must be even and positive, got {d}")));
    }
    Ok(())
}

fn frequency(k: usize, d: usize) -> f64 {
    10000f64.powf(-2.0 * k as f64 / d as f64)
}

/// `P[i][2k] = sin(ω_k i)`, `P[i][2k+1] = cos(ω_k i)` with `ω_k = 10000^(−2k/d)`.
pub fn sinusoidal_encoding(n: usize, d: usize) -> Result<Encoding> {
    check_even(d)?;
    let mut p = Array2::zeros((n, d));
    for i in 0..n {
        for k in 0..d / 2 {
            let (sin, cos) = (frequency(k, d) * i as f64).sin_cos();
            p[[i, 2 * k]] = sin;
            p[[i, 2 * k + 1]] = cos;
        }
    }
    Encoding::new(EncodingKind::Sinusoidal, p)
}

/// Point set for RoPE: the reference vector `(1, 0, 1, 0, …)` rotated by
/// angle `ω_k i` in each 2-D block, i.e. `P[i][2k] = cos(ω_k i)`,
/// `P[i][2k+1] = sin(ω_k i)`. Distances depend only on `i − j`.
pub fn rope_encoding(n: usize, d: usize) -> Result<Encoding> {
    check_even(d)?;
    let mut p = Array2::zeros((n, d));
    for i in 0..n {
        for k in 0..d / 2 {
            let (sin, cos) = (frequency(k, d) * i as f64).sin_cos();
            p[[i, 2 * k]] = cos;
            p[[i, 2 * k + 1]] = sin;
        }
    }
    Encoding::new(EncodingKind::Rope, p)
}

fn scaled_leading_columns(eig: &EigenDecomposition, k: usize, width: usize) -> Array2<f64> {
    let n = eig.len();
    let used = k.min(n);
    let mut p = Array2::zeros((n, width));
    for c in 0..used {
        let scale = eig.values[c].max(0.0).sqrt();
        for r in 0..n {
            p[[r, c]] = eig.vectors[[r, c]] * scale;
        }
    }
    p
}

/// `U_{:,1:d} diag(√λ₁, …, √λ_d)` with negative eigenvalues clipped to zero
/// and zero columns beyond `n`.
pub fn mds_encoding(eig: &EigenDecomposition, d: usize) -> Result<Encoding> {
    if d == 0 {
        return Err(Error::InvalidArgument("dimension must be positive".into()));
    }
    Encoding::new(EncodingKind::Mds, scaled_leading_columns(eig, d, d))
}

/// `P = A Bᵀ` with `A ∈ ℝ^{n×r}` and `B ∈ ℝ^{d×r}`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankFactors {
    pub left: Array2<f64>,
    pub right: Array2<f64>,
}

impl LowRankFactors {
    pub fn rank(&self) -> usize {
        self.left.ncols()
    }

    /// `r (n + d)`.
    pub fn parameter_count(&self) -> usize {
        self.rank() * (self.left.nrows() + self.right.nrows())
    }

    pub fn product(&self) -> Array2<f64> {
        self.left.dot(&self.right.t())
    }
}

/// Rank-`r` MDS coordinates embedded in the first `r` axes of `ℝ^d`.
pub fn low_rank_mds(eig: &EigenDecomposition, r: usize, d: usize) -> Result<(LowRankFactors, Encoding)> {
    let n = eig.len();
    if r == 0 || r > n {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={n}")));
    }
    if r > d {
        return Err(Error::InvalidArgument(format!("rank {r} exceeds dimension {d}")));
    }
    let positive = eig.values.iter().filter(|&&l| l > 0.0).count();
    if r > positive {
        log::warn!("rank {r} exceeds the {positive} positive eigenvalues; trailing columns are zero");
    }
    let left = scaled_leading_columns(eig, r, r);
    let right = Array2::eye(d).slice(s![.., ..r]).to_owned();
    let factors = LowRankFactors { left, right };
    let enc = Encoding::new(EncodingKind::LowRankMds { rank: r }, factors.product())?;
    Ok((factors, enc))
}

#[derive(Debug, Clone, Copy)]
pub enum AlibiSlope<'a> {
    Fixed(f64),
    /// Least-squares scale against a corpus metric:
    /// `m = Σ_{i<j} |i−j| d_H(μ_i,μ_j) / Σ_{i<j} |i−j|²`.
    FitTo(&'a SquaredDistanceMatrix),
}

/// `delta_ij = m · |i − j|`.
pub fn alibi_distances(n: usize, slope: AlibiSlope<'_>) -> Result<DistanceOnlyEncoding> {
    if n < 2 {
        return Err(Error::InvalidArgument("ALiBi needs at least two positions".into()));
    }
    let m = match slope {
        AlibiSlope::Fixed(m) => m,
        AlibiSlope::FitTo(d) => {
            if d.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "{n} positions against a {}-position metric",
                    d.len()
                )));
            }
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..n {
                for j in i + 1..n {
                    let gap = (j - i) as f64;
                    num += gap * d.distance(i, j);
                    den += gap * gap;
                }
            }
            num / den
        }
    };
    if !(m > 0.0 && m.is_finite()) {
        return Err(Error::InvalidArgument(format!("ALiBi slope must be positive, got {m}")));
    }
    let delta = Array2::from_shape_fn((n, n), |(i, j)| m * i.abs_diff(j) as f64);
    Ok(DistanceOnlyEncoding { delta, slope: m })
}

/// I.i.d. `N(0, σ²)` entries drawn row-major from [`Rng::gaussian`].
pub fn random_encoding(n: usize, d: usize, sigma: f64, seed: u64) -> Result<Encoding> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = Rng::new(seed);
    let p = Array2::from_shape_simple_fn((n, d), || sigma * rng.gaussian());
    Encoding::new(EncodingKind::Random { sigma, seed }, p)
}

pub fn load_encoding(path: impl AsRef<Path>) -> Result<Encoding> {
    let path = path.as_ref();
    let p = matrix_io::load_matrix(path)?;
    Encoding::new(EncodingKind::File { path: path.to_path_buf() }, p)
}
