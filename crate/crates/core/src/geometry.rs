//! Hellinger geometry of positional marginals and the spectral machinery of
//! classical MDS.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::corpus::{check_distribution, PositionalMarginals};
use crate::par;
use crate::{Error, Result};

/// Relative off-diagonal Frobenius norm at which Jacobi sweeps stop.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-12;
/// Eigenvalues above `DEFAULT_RANK_TOL · λ₁` count towards the effective rank.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;
pub const MAX_JACOBI_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// `d_H(μ, ν) = (Σ_v (√μ(v) − √ν(v))²)^½`, in `[0, √2]`.
pub fn hellinger_distance<'a, 'b>(
    mu: impl Into<ArrayView1<'a, f64>>,
    nu: impl Into<ArrayView1<'b, f64>>,
) -> Result<f64> {
    let (mu, nu) = (mu.into(), nu.into());
    if mu.len() != nu.len() {
        return Err(Error::DimensionMismatch(format!(
            "distributions of length {} and {}",
            mu.len(),
            nu.len()
        )));
    }
    check_distribution(mu).map_err(Error::InvalidDistribution)?;
    check_distribution(nu).map_err(Error::InvalidDistribution)?;
    Ok(hellinger_sq(mu.iter().map(|p| p.sqrt()), nu.iter().map(|p| p.sqrt())).sqrt())
}

fn hellinger_sq(a: impl Iterator<Item = f64>, b: impl Iterator<Item = f64>) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().min(2.0)
}

/// `D_ij = d_H(μ_i, μ_j)²`: symmetric, zero diagonal, entries in `[0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquaredDistanceMatrix(Array2<f64>);

impl SquaredDistanceMatrix {
    /// Validates an explicit matrix of squared distances.
    pub fn from_array(d: Array2<f64>) -> Result<Self> {
        if d.nrows() != d.ncols() || d.nrows() == 0 {
            return Err(Error::DimensionMismatch("distance matrix must be square".into()));
        }
        if d.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let asym = max_asymmetry(d.view());
        if asym > 0.0 {
            return Err(Error::NotSymmetric { max_asymmetry: asym });
        }
        for i in 0..d.nrows() {
            if d[[i, i]] != 0.0 {
                return Err(Error::InvalidArgument("distance diagonal must be zero".into()));
            }
        }
        if d.iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument("squared distances must be non-negative".into()));
        }
        Ok(Self(d))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]].sqrt()
    }

    pub fn squared(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }
}

pub fn squared_distance_matrix(marginals: &PositionalMarginals) -> SquaredDistanceMatrix {
    let roots = marginals.probabilities().mapv(f64::sqrt);
    let n = roots.nrows();
    let upper: Vec<Vec<f64>> = par::map_range(n, |i| {
        let ri = roots.row(i);
        (i + 1..n)
            .map(|j| hellinger_sq(ri.iter().copied(), roots.row(j).iter().copied()))
            .collect()
    });
    let mut d = Array2::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (offset, value) in row.into_iter().enumerate() {
            let j = i + 1 + offset;
            d[[i, j]] = value;
            d[[j, i]] = value;
        }
    }
    SquaredDistanceMatrix(d)
}

/// Doubly-centred Gram matrix `B = −½ H D H`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(Array2<f64>);

impl GramMatrix {
    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// `B_ij = −½ (D_ij − r_i − r_j + g)` with row means `r` and grand mean `g`,
/// which expands `−½ H D H` without forming `H`.
pub fn double_center(d: &SquaredDistanceMatrix) -> GramMatrix {
    GramMatrix(center(d.as_array().view()))
}

fn center(d: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = d.nrows();
    let row_means: Vec<f64> = d.rows().into_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut b = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let dij = 0.5 * (d[[i, j]] + d[[j, i]]);
            let v = -0.5 * (dij - row_means[i] - row_means[j] + grand);
            b[[i, j]] = v;
            b[[j, i]] = v;
        }
    }
    b
}

/// Eigenvalues sorted non-increasing, with matching orthonormal eigenvector
/// columns. Each eigenvector is signed so that its largest-magnitude entry
/// (lowest index on ties) is positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

impl EigenDecomposition {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `U diag(λ) Uᵀ`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let scaled = &self.vectors * &self.values.view().insert_axis(ndarray::Axis(0));
        scaled.dot(&self.vectors.t())
    }
}

fn max_asymmetry(a: ArrayView2<'_, f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            worst = worst.max((a[[i, j]] - a[[j, i]]).abs());
        }
    }
    worst
}

/// Cyclic Jacobi eigensolver for a symmetric matrix.
///
/// Sweeps visit `(p, q)` pairs in row order and stop once the off-diagonal
/// Frobenius norm drops below `tol · ‖A‖_F`.
pub fn eigendecompose_symmetric(a: &Array2<f64>, tol: f64) -> Result<EigenDecomposition> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let scale = a.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let asym = max_asymmetry(a.view());
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric { max_asymmetry: asym });
    }

    let mut m: Vec<f64> = a.iter().copied().collect();
    for i in 0..n {
        for j in i + 1..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = tol * frob;
    let mut converged = false;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let off = off_diagonal_norm(&m, n);
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, n, p, q, c, s);
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&m, n) > target {
        return Err(Error::NoConvergence {
            sweeps: MAX_JACOBI_SWEEPS,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| m[y * n + y].total_cmp(&m[x * n + x]));
    let values = Array1::from_iter(order.iter().map(|&k| m[k * n + k]));
    let mut vectors = Array2::zeros((n, n));
    for (col, &k) in order.iter().enumerate() {
        let mut pivot = 0;
        for r in 1..n {
            if v[r * n + k].abs() > v[pivot * n + k].abs() {
                pivot = r;
            }
        }
        let sign = if v[pivot * n + k] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vectors[[r, col]] = sign * v[r * n + k];
        }
    }
    Ok(EigenDecomposition { values, vectors })
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += m[i * n + j] * m[i * n + j];
            }
        }
    }
    sum.sqrt()
}

/// Applies `Jᵀ M J` for the Givens rotation in the `(p, q)` plane.
fn rotate(m: &mut [f64], n: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..n {
        let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
        m[k * n + p] = c * mkp - s * mkq;
        m[k * n + q] = s * mkp + c * mkq;
    }
    for k in 0..n {
        let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
        m[p * n + k] = c * mpk - s * mqk;
        m[q * n + k] = s * mpk + c * mqk;
    }
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;
}

/// Number of eigenvalues above `tol · max(λ₁, 0)`.
pub fn effective_rank(eig: &EigenDecomposition, tol: f64) -> usize {
    let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
    if top == 0.0 {
        return 0;
    }
    eig.values.iter().filter(|&&l| l > tol * top).count()
}

/// Share of the positive spectrum carried by the leading `k` eigenvalues.
pub fn cumulative_variance(eig: &EigenDecomposition, k: usize) -> Result<f64> {
    let total: f64 = eig.values.iter().map(|l| l.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::NoPositiveEigenvalues);
    }
    let head: f64 = eig.values.iter().take(k).map(|l| l.max(0.0)).sum();
    Ok(head / total)
}
