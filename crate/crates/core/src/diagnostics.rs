//! Audit metrics for positional encodings measured against a corpus metric.

use ndarray::Array2;

use crate::encodings::{low_rank_mds, Encoding, EncodingKind, PairwiseGeometry};
use crate::geometry::{EigenDecomposition, SquaredDistanceMatrix};
use crate::par;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StressReport {
    pub stress: f64,
    pub numerator: f64,
    pub denominator: f64,
    pub pair_count: usize,
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for x in values {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            carry += (sum - t) + x;
        } else {
            carry += (x - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

/// `Σ_{i<j} (‖p_i − p_j‖ − √D_ij)² / Σ_{i<j} D_ij`, unclamped.
pub fn stress<G: PairwiseGeometry + ?Sized>(geom: &G, d: &SquaredDistanceMatrix) -> Result<StressReport> {
    let n = geom.num_positions();
    if n != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "encoding has {n} positions, metric has {}",
            d.len()
        )));
    }
    let partials: Vec<(f64, f64)> = par::map_range(n, |i| {
        let num = compensated_sum((i + 1..n).map(|j| (geom.distance(i, j) - d.distance(i, j)).powi(2)));
        let den = compensated_sum((i + 1..n).map(|j| d.squared(i, j)));
        (num, den)
    });
    let numerator = compensated_sum(partials.iter().map(|p| p.0));
    let denominator = compensated_sum(partials.iter().map(|p| p.1));
    if denominator <= 0.0 {
        return Err(Error::DegenerateMetric);
    }
    Ok(StressReport {
        stress: numerator / denominator,
        numerator,
        denominator,
        pair_count: n * n.saturating_sub(1) / 2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    pub violation_rate: f64,
    pub triples_checked: usize,
    pub violations: usize,
}

/// Which ordered triples `(i, j, k)` of distinct positions are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SequenceOrder {
    /// `|i − j| < |i − k|`: the counting protocol of the diagnostic.
    Strict,
    /// `|i − j| ≤ |i − k|`: the monotone-matrix definition, under which two
    /// positions at equal sequence distance must be equidistant.
    NonStrict,
}

/// Fraction of triples where the sequence-closer position is farther in
/// the encoding. Ties in embedding distance are not violations.
pub fn monotonicity_violation_rate<G: PairwiseGeometry + ?Sized>(geom: &G) -> Result<MonotonicityReport> {
    count_monotonicity_violations(geom, SequenceOrder::Strict, 0.0)
}

/// Counts triples with `‖p_i − p_j‖ > ‖p_i − p_k‖ + tol · max(‖p_i − p_j‖, ‖p_i − p_k‖)`
/// among those selected by `order`.
pub fn count_monotonicity_violations<G: PairwiseGeometry + ?Sized>(
    geom: &G,
    order: SequenceOrder,
    rel_tol: f64,
) -> Result<MonotonicityReport> {
    let n = geom.num_positions();
    if n < 3 {
        return Err(Error::InvalidArgument("monotonicity needs at least 3 positions".into()));
    }
    let per_anchor: Vec<(usize, usize)> = par::map_range(n, |i| {
        let dist: Vec<f64> = (0..n).map(|j| geom.distance(i, j)).collect();
        let (mut checked, mut bad) = (0usize, 0usize);
        for j in (0..n).filter(|&j| j != i) {
            let gap_j = i.abs_diff(j);
            for k in (0..n).filter(|&k| k != i && k != j) {
                let gap_k = i.abs_diff(k);
                let selected = match order {
                    SequenceOrder::Strict => gap_j < gap_k,
                    SequenceOrder::NonStrict => gap_j <= gap_k,
                };
                if !selected {
                    continue;
                }
                checked += 1;
                let (near, far) = (dist[j], dist[k]);
                if near > far + rel_tol * near.max(far) {
                    bad += 1;
                }
            }
        }
        (checked, bad)
    });
    let triples_checked: usize = per_anchor.iter().map(|p| p.0).sum();
    let violations: usize = per_anchor.iter().map(|p| p.1).sum();
    Ok(MonotonicityReport {
        violation_rate: if triples_checked == 0 {
            0.0
        } else {
            violations as f64 / triples_checked as f64
        },
        triples_checked,
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparationReport {
    pub min_separation: f64,
    pub argmin_pair: (usize, usize),
}

/// Exact minimum pairwise distance; ties resolve to the lexicographically
/// first pair.
pub fn min_separation<G: PairwiseGeometry + ?Sized>(geom: &G) -> Result<SeparationReport> {
    let n = geom.num_positions();
    if n < 2 {
        return Err(Error::InvalidArgument("separation needs at least 2 positions".into()));
    }
    let per_row: Vec<Option<(f64, usize)>> = par::map_range(n, |i| {
        (i + 1..n)
            .map(|j| (geom.distance(i, j), j))
            .fold(None, |best: Option<(f64, usize)>, cand| match best {
                Some(b) if b.0 <= cand.0 => Some(b),
                _ => Some(cand),
            })
    });
    let mut best: Option<SeparationReport> = None;
    for (i, row) in per_row.into_iter().enumerate() {
        if let Some((dist, j)) = row {
            if best.is_none_or(|b| dist < b.min_separation) {
                best = Some(SeparationReport {
                    min_separation: dist,
                    argmin_pair: (i, j),
                });
            }
        }
    }
    Ok(best.expect("n >= 2 yields at least one pair"))
}

/// Pearson correlation between embedding distances and Hellinger
/// distances over all pairs `i < j`.
pub fn hellinger_correlation<G: PairwiseGeometry + ?Sized>(geom: &G, d: &SquaredDistanceMatrix) -> Result<f64> {
    let n = geom.num_positions();
    if n != d.len() {
        return Err(Error::DimensionMismatch(format!(
            "encoding has {n} positions, metric has {}",
            d.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidArgument("correlation needs at least 3 positions".into()));
    }
    let mut xs = Vec::with_capacity(n * (n - 1) / 2);
    let mut ys = Vec::with_capacity(xs.capacity());
    for i in 0..n {
        for j in i + 1..n {
            xs.push(geom.distance(i, j));
            ys.push(d.distance(i, j));
        }
    }
    pearson(&xs, &ys).ok_or(Error::UndefinedCorrelation)
}

fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let len = xs.len() as f64;
    let mx = compensated_sum(xs.iter().copied()) / len;
    let my = compensated_sum(ys.iter().copied()) / len;
    let sxy = compensated_sum(xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)));
    let sxx = compensated_sum(xs.iter().map(|x| (x - mx).powi(2)));
    let syy = compensated_sum(ys.iter().map(|y| (y - my).powi(2)));
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Stress of the row set `P M` (e.g. `M = W_Qᵀ W_K` of one layer).
pub fn projected_stress(p: &Encoding, m: &Array2<f64>, d: &SquaredDistanceMatrix) -> Result<StressReport> {
    let dim = p.dim();
    if m.dim() != (dim, dim) {
        return Err(Error::DimensionMismatch(format!(
            "projection is {}x{}, encoding dimension is {dim}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    let projected = Encoding::new(EncodingKind::Derived, p.positions().dot(m))?;
    stress(&projected, d)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffRow {
    pub rank: usize,
    pub stress: f64,
    pub parameters: usize,
    pub saving_vs_free: f64,
}

/// One row per requested rank: low-rank MDS stress, `r (n + d)` parameters
/// and the saving `1 − r (n + d) / (n d)` relative to a free matrix.
pub fn rank_tradeoff_table(
    eig: &EigenDecomposition,
    d: &SquaredDistanceMatrix,
    dim: usize,
    ranks: &[usize],
) -> Result<Vec<TradeoffRow>> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument("no ranks requested".into()));
    }
    let n = eig.len();
    let rows = par::map_slice(ranks, |&r| -> Result<TradeoffRow> {
        let (factors, enc) = low_rank_mds(eig, r, dim)?;
        let report = stress(&enc, d)?;
        let parameters = factors.parameter_count();
        Ok(TradeoffRow {
            rank: r,
            stress: report.stress,
            parameters,
            saving_vs_free: 1.0 - parameters as f64 / (n * dim) as f64,
        })
    });
    rows.into_iter().collect()
}
