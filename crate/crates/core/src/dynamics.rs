//! Linearised (NTK-regime) gradient flow on the positional matrix,
//!
//! ```text
//! ṗ_i = −Σ_j α_ij p_j + b_i
//! ```
//!
//! with a Hellinger-monotone kernel `α_ij = f(d_H(μ_i, μ_j)) + ε·[i = j]` and
//! a forcing `b` that is Lipschitz in the Hellinger distance. The module
//! builds such systems, integrates the flow, solves for its fixed point and
//! checks the quantitative bound
//! `‖p_i* − p_j*‖ ≤ (C_b + 2 R L_f n ‖f‖_∞) / λ_min(α) · d_H(μ_i, μ_j)`.

use std::fmt;

use ndarray::Array2;

use crate::corpus::PositionalMarginals;
use crate::diagnostics::{count_monotonicity_violations, SequenceOrder};
use crate::encodings::{Encoding, EncodingKind};
use crate::geometry::{
    eigendecompose_symmetric, hellinger_distance, SquaredDistanceMatrix, DEFAULT_EIGEN_TOL,
};
use crate::rng::Rng;
use crate::{Error, Result};

const SQRT_2: f64 = std::f64::consts::SQRT_2;
/// Safety factor on the realised orbit radius `max_i ‖p_i*‖`.
pub const ORBIT_SAFETY: f64 = 1.05;
/// Relative tolerance on embedding-distance comparisons at the fixed point.
pub const MONOTONE_TOL: f64 = 1e-9;
/// Smallest `λ_min(α)` accepted by the adaptive ridge, relative to `f(√2)`.
const RIDGE_FLOOR: f64 = 1e-3;
const INSTABILITY_RUN: usize = 10;

/// Strictly increasing `f: [0, √2] → ℝ₊`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelShape {
    /// `f(t) = intercept + slope · t`.
    Affine { intercept: f64, slope: f64 },
    /// `f(t) = scale · exp(rate · t)`.
    Exponential { scale: f64, rate: f64 },
}

impl KernelShape {
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            KernelShape::Affine { intercept, slope } => intercept + slope * t,
            KernelShape::Exponential { scale, rate } => scale * (rate * t).exp(),
        }
    }

    /// Lipschitz constant `L_f` on `[0, √2]`.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            KernelShape::Affine { slope, .. } => slope,
            KernelShape::Exponential { scale, rate } => scale * rate * (rate * SQRT_2).exp(),
        }
    }

    /// `‖f‖_∞` on `[0, √2]`, attained at `√2`.
    pub fn sup(&self) -> f64 {
        self.eval(SQRT_2)
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelShape::Affine { intercept, slope } => intercept >= 0.0 && slope > 0.0,
            KernelShape::Exponential { scale, rate } => scale > 0.0 && rate > 0.0,
        };
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "kernel {self:?} is not a positive, strictly increasing function"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ridge {
    Fixed(f64),
    /// `1.1 · max(0, −λ_min(f(d_H)))`, raised if needed so that
    /// `λ_min(α) ≥ 10⁻³ · f(√2)`.
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub ridge: Ridge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    pub alpha: Array2<f64>,
    pub ridge: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lipschitz: f64,
    pub sup: f64,
}

fn extreme_eigenvalues(a: &Array2<f64>) -> Result<(f64, f64)> {
    let eig = eigendecompose_symmetric(a, DEFAULT_EIGEN_TOL)?;
    let max = eig.values[0];
    let min = eig.values[eig.len() - 1];
    Ok((min, max))
}

/// `α_ij = f(√D_ij) + ridge · [i = j]`, rejected unless positive definite.
pub fn build_kernel(d: &SquaredDistanceMatrix, spec: &KernelSpec) -> Result<Kernel> {
    spec.shape.validate()?;
    let n = d.len();
    let mut alpha = Array2::from_shape_fn((n, n), |(i, j)| spec.shape.eval(d.distance(i, j)));
    let sup = spec.shape.sup();
    let ridge = match spec.ridge {
        Ridge::Fixed(r) if r >= 0.0 && r.is_finite() => r,
        Ridge::Fixed(r) => return Err(Error::InvalidArgument(format!("ridge must be non-negative, got {r}"))),
        Ridge::Adaptive => {
            let (raw_min, _) = extreme_eigenvalues(&alpha)?;
            let floor = RIDGE_FLOOR * sup;
            if raw_min >= floor {
                0.0
            } else {
                (1.1 * (-raw_min).max(0.0)).max(floor - raw_min)
            }
        }
    };
    for i in 0..n {
        alpha[[i, i]] += ridge;
    }
    let (lambda_min, lambda_max) = extreme_eigenvalues(&alpha)?;
    if lambda_min <= 1e-12 * lambda_max.abs().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveDefinite { lambda_min });
    }
    Ok(Kernel {
        alpha,
        ridge,
        lambda_min,
        lambda_max,
        lipschitz: spec.shape.lipschitz(),
        sup,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forcing {
    pub b: Array2<f64>,
    /// Compatibility constant `C_b` with `‖b_i − b_j‖ ≤ C_b d_H(μ_i, μ_j)`.
    pub c_b: f64,
    /// Largest realised `‖b_i − b_j‖ / d_H(μ_i, μ_j)`.
    pub max_ratio: f64,
}

/// Orthonormalises the columns of `m` in place (modified Gram–Schmidt,
/// applied twice).
fn orthonormalize_columns(m: &mut Array2<f64>) {
    for _ in 0..2 {
        for c in 0..m.ncols() {
            for prev in 0..c {
                let dot = m.column(c).dot(&m.column(prev));
                let p = m.column(prev).to_owned();
                m.column_mut(c).scaled_add(-dot, &p);
            }
            let norm = m.column(c).dot(&m.column(c)).sqrt();
            m.column_mut(c).mapv_inplace(|x| x / norm);
        }
    }
}

/// Seeded `V × d` matrix with orthonormal columns when `V ≥ d` and
/// orthonormal rows otherwise, so its largest singular value is 1.
pub fn projection_matrix(vocab: usize, d: usize, seed: u64) -> Array2<f64> {
    let mut rng = Rng::new(seed);
    let (rows, cols) = if vocab >= d { (vocab, d) } else { (d, vocab) };
    let mut m = Array2::from_shape_simple_fn((rows, cols), || rng.gaussian());
    orthonormalize_columns(&mut m);
    if vocab >= d {
        m
    } else {
        m.reversed_axes()
    }
}

/// `b_i = scale · √μ_i · Π`. Since `‖√μ_i − √μ_j‖ = d_H(μ_i, μ_j)` and
/// `σ_max(Π) = 1`, `C_b = scale`; every pair is checked against it.
pub fn build_forcing(marginals: &PositionalMarginals, d: usize, scale: f64, seed: u64) -> Result<Forcing> {
    if d == 0 {
        return Err(Error::InvalidArgument("forcing dimension must be positive".into()));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidArgument(format!("forcing scale must be positive, got {scale}")));
    }
    let pi = projection_matrix(marginals.vocab_size(), d, seed);
    let roots = marginals.probabilities().mapv(f64::sqrt);
    let b = roots.dot(&pi) * scale;

    let n = marginals.seq_len();
    let mut max_ratio = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let diff = &b.row(i) - &b.row(j);
            let gap = diff.dot(&diff).sqrt();
            let dh = hellinger_distance(marginals.row(i), marginals.row(j))?;
            if dh == 0.0 {
                if gap > 1e-12 * scale {
                    return Err(Error::ForcingVerification { ratio: f64::INFINITY, bound: scale });
                }
                continue;
            }
            let ratio = gap / dh;
            if ratio > scale * (1.0 + 1e-10) {
                return Err(Error::ForcingVerification { ratio, bound: scale });
            }
            max_ratio = max_ratio.max(ratio);
        }
    }
    Ok(Forcing { b, c_b: scale, max_ratio })
}

/// Kernel, forcing and the constants the monotonicity bound needs.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSystem {
    pub alpha: Array2<f64>,
    pub b: Array2<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub c_b: f64,
    pub lipschitz: f64,
    pub sup: f64,
}

impl FlowSystem {
    pub fn new(kernel: Kernel, forcing: Forcing) -> Result<Self> {
        if kernel.alpha.nrows() != forcing.b.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "kernel over {} positions, forcing over {}",
                kernel.alpha.nrows(),
                forcing.b.nrows()
            )));
        }
        Ok(Self {
            alpha: kernel.alpha,
            b: forcing.b,
            lambda_min: kernel.lambda_min,
            lambda_max: kernel.lambda_max,
            c_b: forcing.c_b,
            lipschitz: kernel.lipschitz,
            sup: kernel.sup,
        })
    }

    pub fn num_positions(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn dim(&self) -> usize {
        self.b.ncols()
    }

    /// `‖α P − b‖_F`.
    pub fn residual(&self, p: &Array2<f64>) -> f64 {
        let r = self.alpha.dot(p) - &self.b;
        r.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub dt: f64,
    pub steps: usize,
    pub checkpoints: usize,
}

impl FlowOptions {
    /// `dt = 1 / (2 λ_max)` and enough steps for the slowest mode to decay
    /// by `e^{-decay}`.
    pub fn for_system(system: &FlowSystem, decay: f64) -> Self {
        let dt = 0.5 / system.lambda_max;
        let steps = (decay / (dt * system.lambda_min)).ceil().max(1.0) as usize;
        Self { dt, steps, checkpoints: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub residual: f64,
    pub min_separation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrajectory {
    pub p_final: Array2<f64>,
    pub final_residual: f64,
    pub checkpoints: Vec<Checkpoint>,
    /// Largest `max_i ‖p_i(t)‖` seen along the trajectory.
    pub max_row_norm: f64,
}

fn max_row_norm(p: &Array2<f64>) -> f64 {
    p.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max)
}

fn min_row_separation(p: &Array2<f64>) -> Option<f64> {
    let n = p.nrows();
    let mut best: Option<f64> = None;
    for i in 0..n {
        for j in i + 1..n {
            let diff = &p.row(i) - &p.row(j);
            let d = diff.dot(&diff).sqrt();
            best = Some(best.map_or(d, |b| b.min(d)));
        }
    }
    best
}

/// Explicit Euler, `P ← P − dt (α P − b)`. The residual and minimum
/// separation are recorded at `checkpoints` evenly spaced steps (always
/// including the last). Ten consecutive residual increases abort the run.
pub fn integrate_flow(system: &FlowSystem, p0: &Array2<f64>, options: &FlowOptions) -> Result<FlowTrajectory> {
    if p0.dim() != system.b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "initial state {:?} against forcing {:?}",
            p0.dim(),
            system.b.dim()
        )));
    }
    if options.steps == 0 || options.dt.is_nan() || options.dt <= 0.0 {
        return Err(Error::InvalidArgument("need dt > 0 and at least one step".into()));
    }
    let every = (options.steps / options.checkpoints.max(1)).max(1);
    let mut p = p0.clone();
    let mut checkpoints = Vec::new();
    let mut peak = max_row_norm(&p);
    let mut last = system.residual(&p);
    let mut rising = 0;
    for step in 1..=options.steps {
        let r = system.alpha.dot(&p) - &system.b;
        p.scaled_add(-options.dt, &r);
        let residual = system.residual(&p);
        if !residual.is_finite() {
            return Err(Error::StepTooLarge { steps: rising, at: step });
        }
        rising = if residual > last { rising + 1 } else { 0 };
        if rising >= INSTABILITY_RUN {
            return Err(Error::StepTooLarge { steps: rising, at: step });
        }
        last = residual;
        peak = peak.max(max_row_norm(&p));
        if step % every == 0 || step == options.steps {
            checkpoints.push(Checkpoint {
                step,
                residual,
                min_separation: min_row_separation(&p),
            });
        }
    }
    Ok(FlowTrajectory {
        final_residual: last,
        p_final: p,
        checkpoints,
        max_row_norm: peak,
    })
}

/// Solves `α P* = b` by Cholesky factorisation.
pub fn fixed_point(alpha: &Array2<f64>, b: &Array2<f64>) -> Result<Array2<f64>> {
    let n = alpha.nrows();
    if alpha.ncols() != n || b.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "alpha {:?} against forcing {:?}",
            alpha.dim(),
            b.dim()
        )));
    }
    let max_diag = (0..n).map(|i| alpha[[i, i]].abs()).fold(0.0, f64::max);
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let mut diag = alpha[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag.is_nan() || diag <= 1e-14 * max_diag {
            return Err(Error::Singular);
        }
        let ljj = diag.sqrt();
        l[[j, j]] = ljj;
        for i in j + 1..n {
            let mut v = alpha[[i, j]];
            for k in 0..j {
                v -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = v / ljj;
        }
    }
    let mut x = b.clone();
    for mut col in x.columns_mut() {
        for i in 0..n {
            let mut v = col[i];
            for k in 0..i {
                v -= l[[i, k]] * col[k];
            }
            col[i] = v / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut v = col[i];
            for k in i + 1..n {
                v -= l[[k, i]] * col[k];
            }
            col[i] = v / l[[i, i]];
        }
    }
    let b_norm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let residual = (alpha.dot(&x) - b).iter().map(|v| v * v).sum::<f64>().sqrt();
    if residual > 1e-10 * b_norm.max(f64::MIN_POSITIVE) {
        return Err(Error::Singular);
    }
    Ok(x)
}

/// Outcome of checking the fixed point against the monotonicity bound.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    pub p_star: Array2<f64>,
    pub lambda_min: f64,
    pub c_b: f64,
    pub lipschitz: f64,
    pub sup: f64,
    /// `1.05 · max_i ‖p_i*‖`.
    pub orbit_radius: f64,
    /// `(C_b + 2 R L_f n ‖f‖_∞) / λ_min(α)`.
    pub bound_constant: f64,
    /// Largest `‖p_i* − p_j*‖ / d_H(μ_i, μ_j)` over pairs with `d_H > 0`.
    pub max_ratio: f64,
    /// Largest `‖p_i* − p_j*‖` over pairs with `d_H = 0`.
    pub zero_distance_gap: f64,
    /// Triples `|i−j| ≤ |i−k|` where the corpus itself has
    /// `d_H(μ_i, μ_j) > d_H(μ_i, μ_k)`.
    pub corpus_violations: usize,
    /// Monotone-matrix violations at `P*` (`|i−j| ≤ |i−k|`).
    pub violations: usize,
    /// Violations at `P*` restricted to `|i−j| < |i−k|`.
    pub strict_violations: usize,
    pub triples_checked: usize,
}

impl FixedPointReport {
    pub fn corpus_is_monotone(&self) -> bool {
        self.corpus_violations == 0
    }

    pub fn bound_holds(&self) -> bool {
        let scale = 1.0 + self.orbit_radius;
        self.max_ratio <= self.bound_constant && self.zero_distance_gap <= 1e-9 * scale
    }

    /// `lambda_min C_b L_f f_sup R C max_ratio violations`.
    pub fn summary_line(&self) -> String {
        format!(
            "{:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {:.12e} {}",
            self.lambda_min,
            self.c_b,
            self.lipschitz,
            self.sup,
            self.orbit_radius,
            self.bound_constant,
            self.max_ratio,
            self.violations
        )
    }
}

impl fmt::Display for FixedPointReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "lambda_min C_b L_f f_sup R C max_ratio violations")?;
        write!(f, "{}", self.summary_line())
    }
}

/// Counts triples that break `d_H(μ_i, μ_j) ≤ d_H(μ_i, μ_k)` for
/// `|i − j| ≤ |i − k|`.
pub fn corpus_monotonicity_violations(d: &SquaredDistanceMatrix) -> usize {
    let n = d.len();
    let mut bad = 0;
    for i in 0..n {
        for j in (0..n).filter(|&j| j != i) {
            for k in (0..n).filter(|&k| k != i && k != j) {
                if i.abs_diff(j) <= i.abs_diff(k) && d.distance(i, j) > d.distance(i, k) + 1e-12 {
                    bad += 1;
                }
            }
        }
    }
    bad
}

pub fn verify_monotone_fixed_point(system: &FlowSystem, d: &SquaredDistanceMatrix) -> Result<FixedPointReport> {
    let n = system.num_positions();
    if d.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "system over {n} positions, metric over {}",
            d.len()
        )));
    }
    let p_star = fixed_point(&system.alpha, &system.b)?;
    let orbit_radius = ORBIT_SAFETY * max_row_norm(&p_star);
    let bound_constant = (system.c_b + 2.0 * orbit_radius * system.lipschitz * n as f64 * system.sup)
        / system.lambda_min;

    let mut max_ratio = 0.0f64;
    let mut zero_distance_gap = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let diff = &p_star.row(i) - &p_star.row(j);
            let gap = diff.dot(&diff).sqrt();
            let dh = d.distance(i, j);
            if dh == 0.0 {
                zero_distance_gap = zero_distance_gap.max(gap);
            } else {
                max_ratio = max_ratio.max(gap / dh);
            }
        }
    }

    let (violations, strict_violations, triples_checked) = if n >= 3 {
        let enc = Encoding::new(EncodingKind::Derived, p_star.clone())?;
        let loose = count_monotonicity_violations(&enc, SequenceOrder::NonStrict, MONOTONE_TOL)?;
        let strict = count_monotonicity_violations(&enc, SequenceOrder::Strict, MONOTONE_TOL)?;
        (loose.violations, strict.violations, loose.triples_checked)
    } else {
        (0, 0, 0)
    };

    Ok(FixedPointReport {
        p_star,
        lambda_min: system.lambda_min,
        c_b: system.c_b,
        lipschitz: system.lipschitz,
        sup: system.sup,
        orbit_radius,
        bound_constant,
        max_ratio,
        zero_distance_gap,
        corpus_violations: corpus_monotonicity_violations(d),
        violations,
        strict_violations,
        triples_checked,
    })
}

/// Two-block line corpus: a Hellinger geodesic from the uniform distribution
/// on the first `⌈V/2⌉` tokens to the uniform distribution on the rest.
pub fn line_marginals(n: usize, vocab: usize, span: f64) -> Result<PositionalMarginals> {
    if vocab < 2 {
        return Err(Error::InvalidArgument("line corpus needs at least two tokens".into()));
    }
    let half = vocab.div_ceil(2);
    let from: Vec<f64> = (0..vocab).map(|v| if v < half { 1.0 / half as f64 } else { 0.0 }).collect();
    let to: Vec<f64> = (0..vocab)
        .map(|v| if v >= half { 1.0 / (vocab - half) as f64 } else { 0.0 })
        .collect();
    PositionalMarginals::geodesic(&from, &to, n, span)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KlHellingerReport {
    /// `D_KL(μ‖ν)` in nats; infinite when `ν` misses part of `μ`'s support.
    pub kl: f64,
    pub hellinger: f64,
    /// `D_KL ≥ d_H² / 2 − 10⁻¹²`.
    pub lower_ok: bool,
    /// `D_KL ≤ 2√2 d_H`, evaluated only when every entry of both
    /// distributions is at least the floor.
    pub upper_ok: Option<bool>,
}

pub fn kl_hellinger_inequality_check(mu: &[f64], nu: &[f64], floor: f64) -> Result<KlHellingerReport> {
    let hellinger = hellinger_distance(mu, nu)?;
    let mut kl = 0.0;
    for (&p, &q) in mu.iter().zip(nu) {
        if p == 0.0 {
            continue;
        }
        if q == 0.0 {
            kl = f64::INFINITY;
            break;
        }
        kl += p * (p / q).ln();
    }
    let lower_ok = kl >= 0.5 * hellinger * hellinger - 1e-12;
    let floored = mu.iter().chain(nu).all(|&x| x >= floor);
    let upper_ok = (kl.is_finite() && floored).then_some(kl <= 2.0 * SQRT_2 * hellinger);
    Ok(KlHellingerReport {
        kl,
        hellinger,
        lower_ok,
        upper_ok,
    })
}
