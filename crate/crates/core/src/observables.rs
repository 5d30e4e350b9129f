//! Parity and threshold operator strings.
//!
//! Both measurements assign the eigenvalue `(−1)^{x_i}` to a binary outcome, so
//! an operator string on a subset `A` has expectation `E[(−1)^{|x_A|}]`. On a
//! Gaussian state the parity string has the closed form
//! `exp(−μ_Aᵀ Σ_A⁻¹ μ_A) / sqrt(det Σ_A)`, and the threshold string is an
//! alternating sum of vacuum probabilities over the subsets of `A`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::BitDataset;
use crate::error::{invalid, GbbmError, Result};
use crate::gaussian::{check_subset, GaussianState};
use crate::linalg::{quadrature_indices, select_matrix, select_vector, GaussianOverlap};

/// Default longest threshold string evaluated exactly.
pub const DEFAULT_LOCALITY_CUTOFF: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementKind {
    Parity,
    Threshold,
}

impl std::fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MeasurementKind::Parity => "parity",
            MeasurementKind::Threshold => "threshold",
        })
    }
}

impl std::str::FromStr for MeasurementKind {
    type Err = GbbmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "parity" => Ok(MeasurementKind::Parity),
            "threshold" => Ok(MeasurementKind::Threshold),
            other => invalid(format!("unknown measurement kind '{other}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OperatorString {
    modes: Vec<usize>,
    kind: MeasurementKind,
}

impl OperatorString {
    pub fn new(modes: Vec<usize>, kind: MeasurementKind, total_modes: usize) -> Result<Self> {
        check_subset(&modes, total_modes)?;
        Ok(Self { modes, kind })
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    pub fn kind(&self) -> MeasurementKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }
}

/// Gaussian kernel bandwidth `σ` in `exp(−‖x−y‖²/(2σ))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || sigma.is_nan() {
            return invalid(format!("kernel bandwidth must be positive, got {sigma}"));
        }
        Ok(Self(sigma))
    }

    pub fn sigma(&self) -> f64 {
        self.0
    }

    /// Per-mode inclusion probability `p_σ = (1 − e^{−1/(2σ)})/2`.
    pub fn inclusion_probability(&self) -> f64 {
        -0.5 * (-1.0 / (2.0 * self.0)).exp_m1()
    }

    /// Probability `(1−p_σ)^{d−|A|} p_σ^{|A|}` of drawing a given subset of size `len`.
    pub fn subset_weight(&self, modes: usize, len: usize) -> f64 {
        let p = self.inclusion_probability();
        (1.0 - p).powi((modes - len) as i32) * p.powi(len as i32)
    }

    pub fn kernel(&self, x: &[u8], y: &[u8]) -> f64 {
        let dist: usize = x.iter().zip(y).filter(|(a, b)| a != b).count();
        (-(dist as f64) / (2.0 * self.0)).exp()
    }
}

/// Each mode included independently with probability `p_σ`.
pub fn sample_subset<R: Rng + ?Sized>(bandwidth: Bandwidth, modes: usize, rng: &mut R) -> Vec<usize> {
    let p = bandwidth.inclusion_probability();
    (0..modes).filter(|_| rng.random::<f64>() < p).collect()
}

/// `⟨Π_A⟩` on a Gaussian state; `1` for the empty string.
pub fn parity_expval(state: &GaussianState, subset: &[usize]) -> Result<f64> {
    check_subset(subset, state.modes())?;
    if subset.is_empty() {
        return Ok(1.0);
    }
    let idx = quadrature_indices(state.modes(), subset);
    let cov = select_matrix(state.cov(), &idx);
    let mean = select_vector(state.mean(), &idx);
    Ok(GaussianOverlap::new(cov, &mean, 1.0)?.value)
}

/// Probability that every mode in `subset` is found in vacuum:
/// `exp(−½ μ_Sᵀ Q_S⁻¹ μ_S) / sqrt(det Q_S)` with `Q = (Σ + I)/2`.
pub fn vacuum_probability(state: &GaussianState, subset: &[usize]) -> Result<f64> {
    check_subset(subset, state.modes())?;
    if subset.is_empty() {
        return Ok(1.0);
    }
    let idx = quadrature_indices(state.modes(), subset);
    let (mean, q) = husimi_block(state, &idx);
    Ok(GaussianOverlap::new(q, &mean, 0.5)?.value)
}

fn husimi_block(state: &GaussianState, idx: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let mut q = select_matrix(state.cov(), idx);
    for i in 0..idx.len() {
        q[(i, i)] += 1.0;
    }
    q *= 0.5;
    (select_vector(state.mean(), idx), q)
}

/// `⟨T_A⟩ = (−1)^{|A|} Σ_{S⊆A} (−2)^{|S|} p₀(S)`.
pub fn threshold_expval(state: &GaussianState, subset: &[usize], locality_cutoff: usize) -> Result<f64> {
    check_subset(subset, state.modes())?;
    if subset.len() > locality_cutoff {
        return Err(GbbmError::LocalityCutoff {
            len: subset.len(),
            max: locality_cutoff,
        });
    }
    let l = subset.len();
    let mut total = 0.0;
    let mut sub = Vec::with_capacity(l);
    for mask in 0usize..(1 << l) {
        sub.clear();
        sub.extend((0..l).filter(|b| mask & (1 << b) != 0).map(|b| subset[b]));
        total += (-2.0f64).powi(sub.len() as i32) * vacuum_probability(state, &sub)?;
    }
    Ok(if l % 2 == 0 { total } else { -total })
}

/// Expectation value of an operator string on a Gaussian state.
pub fn expval(state: &GaussianState, string: &OperatorString, locality_cutoff: usize) -> Result<f64> {
    match string.kind {
        MeasurementKind::Parity => parity_expval(state, &string.modes),
        MeasurementKind::Threshold => threshold_expval(state, &string.modes, locality_cutoff),
    }
}

/// Expectation value with its gradient with respect to the restricted moments.
/// `indices` are the quadrature indices `(x_A…, p_A…)` in the full state.
#[derive(Clone, Debug)]
pub struct ExpvalGrad {
    pub value: f64,
    pub indices: Vec<usize>,
    pub mean_grad: DVector<f64>,
    pub cov_grad: DMatrix<f64>,
}

impl ExpvalGrad {
    fn constant(value: f64) -> Self {
        Self {
            value,
            indices: Vec::new(),
            mean_grad: DVector::zeros(0),
            cov_grad: DMatrix::zeros(0, 0),
        }
    }

    /// Adds `weight ·` this gradient into full-size adjoints.
    pub fn scatter(&self, weight: f64, mean_bar: &mut DVector<f64>, cov_bar: &mut DMatrix<f64>) {
        for (a, &i) in self.indices.iter().enumerate() {
            mean_bar[i] += weight * self.mean_grad[a];
            for (b, &j) in self.indices.iter().enumerate() {
                cov_bar[(i, j)] += weight * self.cov_grad[(a, b)];
            }
        }
    }
}

pub fn parity_expval_grad(state: &GaussianState, subset: &[usize]) -> Result<ExpvalGrad> {
    check_subset(subset, state.modes())?;
    if subset.is_empty() {
        return Ok(ExpvalGrad::constant(1.0));
    }
    let idx = quadrature_indices(state.modes(), subset);
    let cov = select_matrix(state.cov(), &idx);
    let mean = select_vector(state.mean(), &idx);
    let ov = GaussianOverlap::new(cov, &mean, 1.0)?;
    let f = ov.value;
    // ∂f/∂μ = −2f·v, ∂f/∂Σ = f·(vvᵀ − ½Σ⁻¹), v = Σ⁻¹μ
    let mean_grad = &ov.solved * (-2.0 * f);
    let cov_grad = (&ov.solved * ov.solved.transpose() - ov.inverse() * 0.5) * f;
    Ok(ExpvalGrad {
        value: f,
        indices: idx,
        mean_grad,
        cov_grad,
    })
}

pub fn threshold_expval_grad(
    state: &GaussianState,
    subset: &[usize],
    locality_cutoff: usize,
) -> Result<ExpvalGrad> {
    check_subset(subset, state.modes())?;
    let l = subset.len();
    if l > locality_cutoff {
        return Err(GbbmError::LocalityCutoff {
            len: l,
            max: locality_cutoff,
        });
    }
    if l == 0 {
        return Ok(ExpvalGrad::constant(1.0));
    }
    let idx = quadrature_indices(state.modes(), subset);
    let (mean_full, q_full) = husimi_block(state, &idx);
    let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
    let mut value = 0.0;
    let mut mean_grad = DVector::zeros(2 * l);
    let mut cov_grad = DMatrix::zeros(2 * l, 2 * l);
    let mut local = Vec::with_capacity(2 * l);
    for mask in 0usize..(1 << l) {
        let bits: Vec<usize> = (0..l).filter(|b| mask & (1 << b) != 0).collect();
        let coeff = sign * (-2.0f64).powi(bits.len() as i32);
        if bits.is_empty() {
            value += coeff;
            continue;
        }
        local.clear();
        local.extend(bits.iter().copied());
        local.extend(bits.iter().map(|b| b + l));
        let q = select_matrix(&q_full, &local);
        let mean = select_vector(&mean_full, &local);
        let ov = GaussianOverlap::new(q, &mean, 0.5)?;
        let p0 = ov.value;
        value += coeff * p0;
        // ∂p₀/∂μ = −p₀·w, ∂p₀/∂Q = p₀·(½wwᵀ − ½Q⁻¹), ∂Q/∂Σ = ½
        let dq = (&ov.solved * ov.solved.transpose() - ov.inverse()) * (0.5 * p0);
        for (a, &ia) in local.iter().enumerate() {
            mean_grad[ia] -= coeff * p0 * ov.solved[a];
            for (b, &ib) in local.iter().enumerate() {
                cov_grad[(ia, ib)] += coeff * 0.5 * dq[(a, b)];
            }
        }
    }
    Ok(ExpvalGrad {
        value,
        indices: idx,
        mean_grad,
        cov_grad,
    })
}

pub fn expval_grad(state: &GaussianState, string: &OperatorString, locality_cutoff: usize) -> Result<ExpvalGrad> {
    match string.kind {
        MeasurementKind::Parity => parity_expval_grad(state, &string.modes),
        MeasurementKind::Threshold => threshold_expval_grad(state, &string.modes, locality_cutoff),
    }
}

/// Sample mean of `(−1)^{|x_A|}`; serves parity and threshold strings alike.
pub fn empirical_expval(dataset: &BitDataset, subset: &[usize]) -> Result<f64> {
    if dataset.is_empty() {
        return invalid("empirical expectation of an empty dataset");
    }
    check_subset(subset, dataset.width())?;
    Ok(dataset.parity_mean(subset))
}

/// Bit means `E[x_i]` and the distribution covariance
/// `E[x_i x_j] − E[x_i]E[x_j]` implied by one- and two-mode strings.
pub fn bit_moments(
    state: &GaussianState,
    kind: MeasurementKind,
    locality_cutoff: usize,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let d = state.modes();
    let single = |i: usize| -> Result<f64> {
        expval(state, &OperatorString { modes: vec![i], kind }, locality_cutoff)
    };
    let singles: Vec<f64> = (0..d).map(single).collect::<Result<_>>()?;
    let means = DVector::from_iterator(d, singles.iter().map(|o| (1.0 - o) / 2.0));
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        cov[(i, i)] = means[i] * (1.0 - means[i]);
        for j in (i + 1)..d {
            let pair = expval(state, &OperatorString { modes: vec![i, j], kind }, locality_cutoff)?;
            let second = (1.0 - singles[i] - singles[j] + pair) / 4.0;
            let c = second - means[i] * means[j];
            cov[(i, j)] = c;
            cov[(j, i)] = c;
        }
    }
    Ok((means, cov))
}
