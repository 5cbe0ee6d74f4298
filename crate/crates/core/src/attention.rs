//! Single-head dot-product attention, used to check that attention without a
//! positional signal is permutation-equivariant and that mean embeddings are
//! Lipschitz in the Hellinger distance.

use ndarray::{Array1, Array2, Axis};

use crate::corpus::PositionalMarginals;
use crate::encodings::Encoding;
use crate::geometry::squared_distance_matrix;
use crate::{Error, Result};

/// Token embedding table `E`, one row per vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    table: Array2<f64>,
    infinity_norm: f64,
}

impl EmbeddingTable {
    pub fn new(table: Array2<f64>) -> Result<Self> {
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        let infinity_norm = table
            .rows()
            .into_iter()
            .map(|r| r.dot(&r).sqrt())
            .fold(0.0, f64::max);
        Ok(Self { table, infinity_norm })
    }

    pub fn table(&self) -> &Array2<f64> {
        &self.table
    }

    pub fn vocab_size(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    /// `‖E‖_∞ = max_v ‖E(v)‖`.
    pub fn infinity_norm(&self) -> f64 {
        self.infinity_norm
    }
}

/// Score matrix `M = W_Q W_Kᵀ` (`d × d`), value projection `W_V` (`d × d_v`)
/// and the key dimension used for `1/√d_k` scaling.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionLayer {
    pub score: Array2<f64>,
    pub value: Array2<f64>,
    pub key_dim: usize,
}

impl AttentionLayer {
    pub fn new(score: Array2<f64>, value: Array2<f64>, key_dim: usize) -> Result<Self> {
        if score.nrows() != score.ncols() || value.nrows() != score.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "score {:?} and value {:?} matrices disagree",
                score.dim(),
                value.dim()
            )));
        }
        if key_dim == 0 {
            return Err(Error::InvalidArgument("key dimension must be positive".into()));
        }
        if score.iter().chain(value.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { score, value, key_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.score.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.value.ncols()
    }
}

/// Row-wise softmax of `X M Xᵀ / √d_k`.
pub fn attention_weights(x: &Array2<f64>, layer: &AttentionLayer) -> Result<Array2<f64>> {
    if x.ncols() != layer.input_dim() {
        return Err(Error::DimensionMismatch(format!(
            "inputs have width {}, layer expects {}",
            x.ncols(),
            layer.input_dim()
        )));
    }
    let mut scores = x.dot(&layer.score).dot(&x.t()) / (layer.key_dim as f64).sqrt();
    for mut row in scores.rows_mut() {
        let peak = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|s| (s - peak).exp());
        let total = row.sum();
        row.mapv_inplace(|w| w / total);
    }
    Ok(scores)
}

/// `softmax(L) X W_V` for already-embedded inputs `X`.
pub fn attend(x: &Array2<f64>, layer: &AttentionLayer) -> Result<Array2<f64>> {
    let weights = attention_weights(x, layer)?;
    Ok(weights.dot(x).dot(&layer.value))
}

/// Rows `E(t_i) + p_i`, with `p_i = 0` when no encoding is given.
pub fn embed(tokens: &[u32], embeddings: &EmbeddingTable, pe: Option<&Encoding>) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((tokens.len(), embeddings.dim()));
    for (i, &t) in tokens.iter().enumerate() {
        if t as usize >= embeddings.vocab_size() {
            return Err(Error::TokenOutOfRange {
                token: t as u64,
                vocab: embeddings.vocab_size(),
            });
        }
        x.row_mut(i).assign(&embeddings.table.row(t as usize));
    }
    if let Some(pe) = pe {
        if pe.positions().dim() != x.dim() {
            return Err(Error::DimensionMismatch(format!(
                "encoding is {:?}, inputs are {:?}",
                pe.positions().dim(),
                x.dim()
            )));
        }
        x += pe.positions();
    }
    Ok(x)
}

pub fn attention_forward(
    tokens: &[u32],
    embeddings: &EmbeddingTable,
    layer: &AttentionLayer,
    pe: Option<&Encoding>,
) -> Result<Array2<f64>> {
    attend(&embed(tokens, embeddings, pe)?, layer)
}

/// Layers applied in sequence; each layer's output feeds the next.
pub fn attention_stack(
    tokens: &[u32],
    embeddings: &EmbeddingTable,
    layers: &[AttentionLayer],
    pe: Option<&Encoding>,
) -> Result<Array2<f64>> {
    let mut x = embed(tokens, embeddings, pe)?;
    for layer in layers {
        x = attend(&x, layer)?;
    }
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivarianceReport {
    pub max_deviation_without_pe: f64,
    pub max_deviation_with_pe: f64,
}

/// Moves the token at position `i` to position `σ(i)` and compares output
/// row `σ(i)` of the permuted run with row `i` of the original run, with
/// and without the positional encoding.
pub fn equivariance_check(
    tokens: &[u32],
    sigma: &[usize],
    embeddings: &EmbeddingTable,
    layers: &[AttentionLayer],
    pe: &Encoding,
) -> Result<EquivarianceReport> {
    let n = tokens.len();
    if sigma.len() != n {
        return Err(Error::InvalidPermutation(n));
    }
    let mut seen = vec![false; n];
    for &s in sigma {
        if s >= n || std::mem::replace(&mut seen[s], true) {
            return Err(Error::InvalidPermutation(n));
        }
    }
    let mut permuted = vec![0u32; n];
    for (i, &s) in sigma.iter().enumerate() {
        permuted[s] = tokens[i];
    }
    let deviation = |pe: Option<&Encoding>| -> Result<f64> {
        let original = attention_stack(tokens, embeddings, layers, pe)?;
        let moved = attention_stack(&permuted, embeddings, layers, pe)?;
        Ok((0..n)
            .map(|i| {
                let diff = &moved.row(sigma[i]) - &original.row(i);
                diff.dot(&diff).sqrt()
            })
            .fold(0.0, f64::max))
    };
    Ok(EquivarianceReport {
        max_deviation_without_pe: deviation(None)?,
        max_deviation_with_pe: deviation(Some(pe))?,
    })
}

/// Mean embeddings `ē_i = Σ_v μ_i(v) E(v)`, one row per position.
pub fn mean_embeddings(embeddings: &EmbeddingTable, marginals: &PositionalMarginals) -> Result<Array2<f64>> {
    if marginals.vocab_size() != embeddings.vocab_size() {
        return Err(Error::DimensionMismatch(format!(
            "marginals over {} tokens, embedding table has {}",
            marginals.vocab_size(),
            embeddings.vocab_size()
        )));
    }
    Ok(marginals.probabilities().dot(&embeddings.table))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzReport {
    pub max_ratio: f64,
    /// `‖E‖_∞ √(2V)`.
    pub bound: f64,
    pub pairs_checked: usize,
    pub worst_pair: (usize, usize),
}

impl LipschitzReport {
    pub fn holds(&self) -> bool {
        self.max_ratio <= self.bound
    }
}

/// Largest `‖ē_i − ē_k‖ / d_H(μ_i, μ_k)` over pairs with `d_H > 0`.
pub fn mean_embedding_lipschitz_check(
    embeddings: &EmbeddingTable,
    marginals: &PositionalMarginals,
) -> Result<LipschitzReport> {
    let means = mean_embeddings(embeddings, marginals)?;
    let d = squared_distance_matrix(marginals);
    let n = marginals.seq_len();
    let mut best: Option<(f64, (usize, usize))> = None;
    let mut pairs_checked = 0;
    for i in 0..n {
        for k in i + 1..n {
            let dh = d.distance(i, k);
            if dh == 0.0 {
                continue;
            }
            pairs_checked += 1;
            let diff: Array1<f64> = &means.row(i) - &means.row(k);
            let ratio = diff.dot(&diff).sqrt() / dh;
            if best.is_none_or(|b| ratio > b.0) {
                best = Some((ratio, (i, k)));
            }
        }
    }
    let (max_ratio, worst_pair) = best.ok_or(Error::AllDegenerate)?;
    Ok(LipschitzReport {
        max_ratio,
        bound: embeddings.infinity_norm * (2.0 * embeddings.vocab_size() as f64).sqrt(),
        pairs_checked,
        worst_pair,
    })
}

/// Row sums of the attention weights, for checking normalisation.
pub fn weight_row_sums(weights: &Array2<f64>) -> Array1<f64> {
    weights.sum_axis(Axis(1))
}
