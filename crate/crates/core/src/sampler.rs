//! Exact outcome distributions and mode-by-mode sampling for small mode counts.
//!
//! Parity outcomes are the Walsh–Hadamard transform of the `2^d` parity-string
//! expectations. Threshold outcomes follow from vacuum probabilities by
//! inclusion–exclusion: `p(x) = Σ_{S⊆C} (−1)^{|S|} p₀(Z ∪ S)` with `Z` the
//! no-click modes and `C` the click modes.
//!
//! Samplers precompute the marginal table of every prefix `x₁…x_n`, then draw
//! each sample with `d` conditional coin flips.

use rand::Rng;
use rayon::prelude::*;

use crate::datasets::BitDataset;
use crate::error::{GbbmError, Result};
use crate::gaussian::GaussianState;
use crate::observables::{parity_expval, vacuum_probability, MeasurementKind};
use crate::walsh::{fwht, mask_to_subset, superset_mobius};

pub const DEFAULT_MODE_LIMIT: usize = 20;

/// Entries below `-CLIP_TOLERANCE` are treated as a numerical failure.
pub const CLIP_TOLERANCE: f64 = 1e-12;

/// Joint outcome probabilities indexed by bitmask (bit `i` = outcome of mode `i`).
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeTable {
    pub modes: usize,
    pub kind: MeasurementKind,
    pub probabilities: Vec<f64>,
}

impl OutcomeTable {
    pub fn probability(&self, outcome: &[u8]) -> f64 {
        let idx = outcome
            .iter()
            .enumerate()
            .fold(0usize, |acc, (i, &b)| acc | ((b as usize) << i));
        self.probabilities[idx]
    }
}

fn check_limit(state: &GaussianState, limit: usize, what: &'static str) -> Result<()> {
    if state.modes() > limit {
        return Err(GbbmError::ResourceLimit {
            what,
            modes: state.modes(),
            limit,
        });
    }
    Ok(())
}

/// `⟨Π_S⟩` for every subset mask.
pub fn all_parities(state: &GaussianState) -> Result<Vec<f64>> {
    (0..1usize << state.modes())
        .into_par_iter()
        .map(|mask| parity_expval(state, &mask_to_subset(mask)))
        .collect()
}

/// `p₀(S)` for every subset mask.
pub fn all_vacuum_probabilities(state: &GaussianState) -> Result<Vec<f64>> {
    (0..1usize << state.modes())
        .into_par_iter()
        .map(|mask| vacuum_probability(state, &mask_to_subset(mask)))
        .collect()
}

fn clip(mut probs: Vec<f64>) -> Result<Vec<f64>> {
    for p in probs.iter_mut() {
        if *p < -CLIP_TOLERANCE {
            return Err(GbbmError::Numerical(format!(
                "outcome probability {p:.3e} is negative beyond tolerance"
            )));
        }
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    Ok(probs)
}

fn parity_marginal(parities: &[f64], prefix: usize) -> Result<Vec<f64>> {
    let mut table = parities[..1 << prefix].to_vec();
    fwht(&mut table);
    let scale = 0.5f64.powi(prefix as i32);
    table.iter_mut().for_each(|v| *v *= scale);
    clip(table)
}

fn threshold_marginal(vacuum: &[f64], prefix: usize) -> Result<Vec<f64>> {
    let mut table = vacuum[..1 << prefix].to_vec();
    superset_mobius(&mut table);
    // table[z] now holds P(no click exactly on z's complement pattern) with z the
    // vacuum set; re-index by the click pattern x = complement(z).
    let full = (1usize << prefix) - 1;
    let by_click: Vec<f64> = (0..1usize << prefix).map(|x| table[full & !x]).collect();
    clip(by_click)
}

pub fn parity_probs(state: &GaussianState, limit: usize) -> Result<OutcomeTable> {
    check_limit(state, limit, "parity outcome table")?;
    let parities = all_parities(state)?;
    Ok(OutcomeTable {
        modes: state.modes(),
        kind: MeasurementKind::Parity,
        probabilities: parity_marginal(&parities, state.modes())?,
    })
}

pub fn threshold_probs(state: &GaussianState, limit: usize) -> Result<OutcomeTable> {
    check_limit(state, limit, "threshold outcome table")?;
    let vacuum = all_vacuum_probabilities(state)?;
    Ok(OutcomeTable {
        modes: state.modes(),
        kind: MeasurementKind::Threshold,
        probabilities: threshold_marginal(&vacuum, state.modes())?,
    })
}

pub fn outcome_probs(state: &GaussianState, kind: MeasurementKind, limit: usize) -> Result<OutcomeTable> {
    match kind {
        MeasurementKind::Parity => parity_probs(state, limit),
        MeasurementKind::Threshold => threshold_probs(state, limit),
    }
}

/// Sequential sampler over precomputed prefix marginals.
#[derive(Clone, Debug)]
pub struct ChainSampler {
    modes: usize,
    /// `marginals[n]` is the distribution of the first `n` modes.
    marginals: Vec<Vec<f64>>,
}

impl ChainSampler {
    pub fn new(state: &GaussianState, kind: MeasurementKind, limit: usize) -> Result<Self> {
        check_limit(state, limit, "exact sampler")?;
        let d = state.modes();
        let marginals = match kind {
            MeasurementKind::Parity => {
                let parities = all_parities(state)?;
                (0..=d).map(|n| parity_marginal(&parities, n)).collect::<Result<Vec<_>>>()?
            }
            MeasurementKind::Threshold => {
                let vacuum = all_vacuum_probabilities(state)?;
                (0..=d).map(|n| threshold_marginal(&vacuum, n)).collect::<Result<Vec<_>>>()?
            }
        };
        Ok(Self { modes: d, marginals })
    }

    /// One outcome as a bitmask.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let mut prefix = 0usize;
        for n in 0..self.modes {
            let parent = self.marginals[n][prefix];
            let zero = self.marginals[n + 1][prefix];
            let p_zero = if parent > 0.0 { (zero / parent).clamp(0.0, 1.0) } else { 1.0 };
            if rng.random::<f64>() >= p_zero {
                prefix |= 1 << n;
            }
        }
        prefix as u64
    }

    pub fn sample<R: Rng + ?Sized>(&self, n_samples: usize, rng: &mut R) -> BitDataset {
        let mut ds = BitDataset::new(self.modes);
        for _ in 0..n_samples {
            ds.push_mask(self.draw(rng));
        }
        ds
    }
}

pub fn sample_parity<R: Rng + ?Sized>(
    state: &GaussianState,
    n_samples: usize,
    rng: &mut R,
    limit: usize,
) -> Result<BitDataset> {
    Ok(ChainSampler::new(state, MeasurementKind::Parity, limit)?.sample(n_samples, rng))
}

pub fn sample_threshold<R: Rng + ?Sized>(
    state: &GaussianState,
    n_samples: usize,
    rng: &mut R,
    limit: usize,
) -> Result<BitDataset> {
    Ok(ChainSampler::new(state, MeasurementKind::Threshold, limit)?.sample(n_samples, rng))
}
